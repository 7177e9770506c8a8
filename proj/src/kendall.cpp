#include "margin_audit/kendall.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace margin_audit {

namespace {

// Pairs tied within runs of equal values in a sorted sequence.
template <typename Eq>
std::uint64_t tied_pairs(std::size_t n, Eq equal) {
  std::uint64_t total = 0;
  std::uint64_t run = 1;
  for (std::size_t i = 1; i < n; ++i) {
    if (equal(i - 1, i)) {
      ++run;
    } else {
      total += run * (run - 1) / 2;
      run = 1;
    }
  }
  return total + run * (run - 1) / 2;
}

// Sorts v ascending, returning the number of strict inversions.
std::uint64_t merge_count(std::vector<double>& v, std::vector<double>& tmp, std::size_t lo,
                          std::size_t hi) {
  if (hi - lo < 2) return 0;
  const auto mid = lo + (hi - lo) / 2;
  std::uint64_t swaps = merge_count(v, tmp, lo, mid) + merge_count(v, tmp, mid, hi);
  std::size_t i = lo;
  std::size_t j = mid;
  std::size_t k = lo;
  while (i < mid && j < hi) {
    if (v[i] <= v[j]) {
      tmp[k++] = v[i++];
    } else {
      swaps += mid - i;
      tmp[k++] = v[j++];
    }
  }
  while (i < mid) tmp[k++] = v[i++];
  while (j < hi) tmp[k++] = v[j++];
  std::copy(tmp.begin() + static_cast<std::ptrdiff_t>(lo), tmp.begin() + static_cast<std::ptrdiff_t>(hi),
            v.begin() + static_cast<std::ptrdiff_t>(lo));
  return swaps;
}

}  // namespace

KendallResult kendall(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw AnalysisError("kendall: sequences differ in length");
  KendallResult r;
  std::vector<std::pair<double, double>> pts;
  pts.reserve(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::isfinite(a[i]) && std::isfinite(b[i])) pts.emplace_back(a[i], b[i]);
    else ++r.n_excluded;
  }
  const auto n = pts.size();
  r.n_used = n;
  if (n < 2) throw AnalysisError("kendall: fewer than two usable pairs");
  std::sort(pts.begin(), pts.end());
  r.pairs = static_cast<std::uint64_t>(n) * (n - 1) / 2;
  r.ties_a = tied_pairs(n, [&](std::size_t i, std::size_t j) { return pts[i].first == pts[j].first; });
  r.ties_joint = tied_pairs(n, [&](std::size_t i, std::size_t j) { return pts[i] == pts[j]; });
  std::vector<double> bs(n);
  for (std::size_t i = 0; i < n; ++i) bs[i] = pts[i].second;
  std::vector<double> tmp(n);
  r.discordant = merge_count(bs, tmp, 0, n);
  r.ties_b = tied_pairs(n, [&](std::size_t i, std::size_t j) { return bs[i] == bs[j]; });
  r.concordant = r.pairs - r.ties_a - r.ties_b + r.ties_joint - r.discordant;
  const double s = static_cast<double>(r.concordant) - static_cast<double>(r.discordant);
  r.tau_a = s / static_cast<double>(r.pairs);
  const auto ua = r.pairs - r.ties_a;
  const auto ub = r.pairs - r.ties_b;
  r.tau_b = (ua == 0 || ub == 0)
                ? std::numeric_limits<double>::quiet_NaN()
                : s / std::sqrt(static_cast<double>(ua) * static_cast<double>(ub));
  return r;
}

double kendall_tau(std::span<const double> a, std::span<const double> b, KendallVariant variant) {
  const auto r = kendall(a, b);
  if (variant == KendallVariant::A) return r.tau_a;
  if (std::isnan(r.tau_b)) throw AnalysisError("kendall tau-b is undefined when one input is constant");
  return r.tau_b;
}

}  // namespace margin_audit
