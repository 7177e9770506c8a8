#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>

namespace margin_audit {

class AnalysisError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class KendallVariant { A, B };

struct KendallResult {
  double tau_b = 0.0;
  double tau_a = 0.0;
  std::size_t n_used = 0;
  std::size_t n_excluded = 0;  // pairs (a_i, b_i) with a non-finite entry
  std::uint64_t pairs = 0;
  std::uint64_t concordant = 0;
  std::uint64_t discordant = 0;
  std::uint64_t ties_a = 0;  // pairs tied in a (including joint ties)
  std::uint64_t ties_b = 0;
  std::uint64_t ties_joint = 0;
};

// O(n log n) Kendall rank correlation. Entries where either value is not
// finite (the +inf "no adversary" sentinel) are dropped and counted.
KendallResult kendall(std::span<const double> a, std::span<const double> b);
double kendall_tau(std::span<const double> a, std::span<const double> b,
                   KendallVariant variant = KendallVariant::B);

}  // namespace margin_audit
