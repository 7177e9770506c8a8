#pragma once

#include <string>
#include <vector>

#include "margin_audit/analysis.hpp"
#include "margin_audit/provenance.hpp"

namespace margin_audit {

struct Axes {
  std::string title;
  std::string x_label;
  std::string y_label;
};

// Points (x[i], y[i]) with the binned mean ± stderr overlaid. Non-finite points are skipped.
std::string svg_scatter(const std::vector<double>& x, const std::vector<double>& y,
                        const std::vector<ProfileBin>& profile, const Axes& axes,
                        const Provenance& provenance);

struct BoxGroup {
  std::string name;
  BoxStats stats;
};
std::string svg_boxplots(const std::vector<BoxGroup>& groups, const Axes& axes,
                         const Provenance& provenance);

std::string svg_line(const std::vector<double>& x, const std::vector<double>& y, const Axes& axes,
                     const Provenance& provenance);

}  // namespace margin_audit
