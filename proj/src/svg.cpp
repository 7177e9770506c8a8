#include "margin_audit/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace margin_audit {

namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 480.0;
constexpr double kLeft = 70.0;
constexpr double kRight = 20.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 60.0;

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();

  void add(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void finish() {
    if (!(lo <= hi)) {
      lo = 0.0;
      hi = 1.0;
    }
    if (hi - lo < 1e-12) {
      lo -= 0.5;
      hi += 0.5;
    }
    const double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;
  }
};

class Canvas {
 public:
  Canvas(const Axes& axes, const Provenance& provenance, Range x, Range y)
      : x_(x), y_(y) {
    out_ += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kWidth) + "\" height=\"" +
            num(kHeight) + "\" viewBox=\"0 0 " + num(kWidth) + " " + num(kHeight) + "\">\n";
    out_ += "<!-- config_hash=" + provenance.config_hash +
            " master_seed=" + std::to_string(provenance.master_seed) + " -->\n";
    out_ += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    text(kWidth / 2, 24, axes.title, "middle", 15);
    text(kWidth / 2, kHeight - 16, axes.x_label, "middle", 12);
    out_ += "<text x=\"18\" y=\"" + num(kHeight / 2) + "\" font-size=\"12\" text-anchor=\"middle\" "
            "font-family=\"sans-serif\" transform=\"rotate(-90 18 " + num(kHeight / 2) + ")\">" +
            escape(axes.y_label) + "</text>\n";
    line(kLeft, kHeight - kBottom, kWidth - kRight, kHeight - kBottom, "black");
    line(kLeft, kTop, kLeft, kHeight - kBottom, "black");
  }

  double px(double v) const {
    return kLeft + (v - x_.lo) / (x_.hi - x_.lo) * (kWidth - kLeft - kRight);
  }
  double py(double v) const {
    return kHeight - kBottom - (v - y_.lo) / (y_.hi - y_.lo) * (kHeight - kTop - kBottom);
  }

  void x_ticks() {
    for (int i = 0; i <= 4; ++i) {
      const double v = x_.lo + (x_.hi - x_.lo) * i / 4.0;
      line(px(v), kHeight - kBottom, px(v), kHeight - kBottom + 4, "black");
      text(px(v), kHeight - kBottom + 18, tick_label(v), "middle", 10);
    }
  }
  void y_ticks() {
    for (int i = 0; i <= 4; ++i) {
      const double v = y_.lo + (y_.hi - y_.lo) * i / 4.0;
      line(kLeft - 4, py(v), kLeft, py(v), "black");
      text(kLeft - 6, py(v) + 3, tick_label(v), "end", 10);
    }
  }

  void line(double x1, double y1, double x2, double y2, const std::string& stroke, double width = 1.0) {
    out_ += "<line x1=\"" + num(x1) + "\" y1=\"" + num(y1) + "\" x2=\"" + num(x2) + "\" y2=\"" +
            num(y2) + "\" stroke=\"" + stroke + "\" stroke-width=\"" + num(width) + "\"/>\n";
  }
  void circle(double x, double y, double r, const std::string& fill, double opacity) {
    out_ += "<circle cx=\"" + num(x) + "\" cy=\"" + num(y) + "\" r=\"" + num(r) + "\" fill=\"" + fill +
            "\" fill-opacity=\"" + num(opacity) + "\"/>\n";
  }
  void rect(double x, double y, double w, double h, const std::string& fill) {
    out_ += "<rect x=\"" + num(x) + "\" y=\"" + num(y) + "\" width=\"" + num(w) + "\" height=\"" +
            num(h) + "\" fill=\"" + fill + "\" stroke=\"black\"/>\n";
  }
  void text(double x, double y, const std::string& s, const std::string& anchor, int size) {
    out_ += "<text x=\"" + num(x) + "\" y=\"" + num(y) + "\" font-size=\"" + std::to_string(size) +
            "\" text-anchor=\"" + anchor + "\" font-family=\"sans-serif\">" + escape(s) + "</text>\n";
  }
  void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& stroke) {
    out_ += "<polyline fill=\"none\" stroke=\"" + stroke + "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i) {
      out_ += (i ? " " : "") + num(pts[i].first) + "," + num(pts[i].second);
    }
    out_ += "\"/>\n";
  }

  std::string finish() { return out_ + "</svg>\n"; }

 private:
  Range x_;
  Range y_;
  std::string out_;
};

}  // namespace

std::string svg_scatter(const std::vector<double>& x, const std::vector<double>& y,
                        const std::vector<ProfileBin>& profile, const Axes& axes,
                        const Provenance& provenance) {
  Range rx, ry;
  for (std::size_t i = 0; i < x.size() && i < y.size(); ++i) {
    if (std::isfinite(x[i]) && std::isfinite(y[i])) {
      rx.add(x[i]);
      ry.add(y[i]);
    }
  }
  rx.finish();
  ry.finish();
  Canvas c(axes, provenance, rx, ry);
  c.x_ticks();
  c.y_ticks();
  for (std::size_t i = 0; i < x.size() && i < y.size(); ++i) {
    if (std::isfinite(x[i]) && std::isfinite(y[i])) c.circle(c.px(x[i]), c.py(y[i]), 1.5, "steelblue", 0.35);
  }
  std::vector<std::pair<double, double>> means;
  for (const auto& bin : profile) {
    if (bin.empty) continue;
    const double cx = c.px(0.5 * (bin.lo + bin.hi));
    c.line(cx, c.py(bin.mean - bin.stderr_), cx, c.py(bin.mean + bin.stderr_), "firebrick", 2.0);
    means.emplace_back(cx, c.py(bin.mean));
  }
  c.polyline(means, "firebrick");
  for (const auto& [px, py] : means) c.circle(px, py, 3.5, "firebrick", 1.0);
  return c.finish();
}

std::string svg_boxplots(const std::vector<BoxGroup>& groups, const Axes& axes,
                         const Provenance& provenance) {
  Range rx, ry;
  rx.lo = 0.0;
  rx.hi = static_cast<double>(std::max<std::size_t>(groups.size(), 1));
  for (const auto& g : groups) {
    ry.add(g.stats.min);
    ry.add(g.stats.max);
  }
  ry.finish();
  Canvas c(axes, provenance, rx, ry);
  c.y_ticks();
  const double slot = c.px(1.0) - c.px(0.0);
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const auto& s = groups[i].stats;
    const double cx = c.px(i + 0.5);
    const double half = 0.25 * slot;
    c.line(cx, c.py(s.min), cx, c.py(s.q1), "black");
    c.line(cx, c.py(s.q3), cx, c.py(s.max), "black");
    c.line(cx - half / 2, c.py(s.min), cx + half / 2, c.py(s.min), "black");
    c.line(cx - half / 2, c.py(s.max), cx + half / 2, c.py(s.max), "black");
    c.rect(cx - half, c.py(s.q3), 2 * half, std::max(c.py(s.q1) - c.py(s.q3), 0.5), "lightsteelblue");
    c.line(cx - half, c.py(s.median), cx + half, c.py(s.median), "firebrick", 2.0);
    c.text(cx, kHeight - kBottom + 18, groups[i].name, "middle", 10);
  }
  return c.finish();
}

std::string svg_line(const std::vector<double>& x, const std::vector<double>& y, const Axes& axes,
                     const Provenance& provenance) {
  Range rx, ry;
  for (std::size_t i = 0; i < x.size() && i < y.size(); ++i) {
    if (std::isfinite(x[i]) && std::isfinite(y[i])) {
      rx.add(x[i]);
      ry.add(y[i]);
    }
  }
  rx.finish();
  ry.finish();
  Canvas c(axes, provenance, rx, ry);
  c.x_ticks();
  c.y_ticks();
  std::vector<std::pair<double, double>> pts;
  for (std::size_t i = 0; i < x.size() && i < y.size(); ++i) {
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) continue;
    pts.emplace_back(c.px(x[i]), c.py(y[i]));
  }
  c.polyline(pts, "steelblue");
  for (const auto& [px, py] : pts) c.circle(px, py, 3.0, "steelblue", 1.0);
  return c.finish();
}

}  // namespace margin_audit
