#include "dpsmri/stats.hpp"

#include "dpsmri/common.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace dpsmri::stats {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double mean(std::span<const double> v) {
  if (v.empty()) throw InvalidArgument("mean: empty input");
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double stddev(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b, Alternative alt) {
  if (a.size() != b.size()) throw InvalidArgument("wilcoxon: samples differ in length");
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) d.push_back(a[i] - b[i]);
  }
  WilcoxonResult res;
  res.n = static_cast<int>(d.size());
  if (d.empty()) return res;

  std::vector<std::size_t> idx(d.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return std::abs(d[i]) < std::abs(d[j]); });

  std::vector<double> rank(d.size());
  double tie_term = 0.0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && std::abs(d[idx[j + 1]]) == std::abs(d[idx[i]])) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = avg;
    const double t = static_cast<double>(j - i + 1);
    tie_term += t * t * t - t;
    i = j + 1;
  }
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d[i] > 0) res.w_plus += rank[i];
  }
  const double n = res.n;
  const double mu = n * (n + 1) / 4.0;
  const double var = n * (n + 1) * (2 * n + 1) / 24.0 - tie_term / 48.0;
  if (var <= 0) return res;
  res.z = (res.w_plus - mu) / std::sqrt(var);
  switch (alt) {
    case Alternative::TwoSided: res.p_value = std::min(1.0, 2.0 * normal_cdf(-std::abs(res.z))); break;
    case Alternative::Less: res.p_value = normal_cdf(res.z); break;
    case Alternative::Greater: res.p_value = normal_cdf(-res.z); break;
  }
  return res;
}

PairedEffect paired_effect(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) throw InvalidArgument("paired_effect: need equal nonempty samples");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  PairedEffect e;
  e.mean_diff = mean(d);
  const double sd = stddev(d);
  e.cohens_dz = sd > 0 ? e.mean_diff / sd : 0.0;
  const auto w = wilcoxon_signed_rank(a, b);
  if (w.n > 0) {
    const double total = w.n * (w.n + 1) / 2.0;
    e.rank_biserial = (2.0 * w.w_plus - total) / total;
  }
  return e;
}

}  // namespace dpsmri::stats
