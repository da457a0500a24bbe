#pragma once

#include <span>

namespace dpsmri::stats {

enum class Alternative { TwoSided, Less, Greater };

struct WilcoxonResult {
  int n = 0;             // pairs with nonzero difference
  double w_plus = 0.0;   // rank sum of positive differences a - b
  double z = 0.0;
  double p_value = 1.0;
};

/// Wilcoxon signed-rank test on differences a - b using the normal
/// approximation with average ranks for ties and the matching variance
/// correction. Zero differences are dropped. `Less` tests whether a tends to be
/// smaller than b.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b,
                                    Alternative alt = Alternative::TwoSided);

struct PairedEffect {
  double mean_diff = 0.0;  // mean of a - b
  double cohens_dz = 0.0;  // mean_diff / sd(a - b)
  double rank_biserial = 0.0;
};

PairedEffect paired_effect(std::span<const double> a, std::span<const double> b);

double mean(std::span<const double> v);
/// Sample standard deviation (n - 1).
double stddev(std::span<const double> v);

/// Standard normal CDF.
double normal_cdf(double z);

}  // namespace dpsmri::stats
