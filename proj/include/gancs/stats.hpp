#pragma once

#include <optional>
#include <vector>

namespace gancs {

double mean(const std::vector<double>& v);
/// Sample standard deviation (n − 1); 0 for fewer than two values.
double stddev(const std::vector<double>& v);
/// Linear-interpolation quantile (q in [0,1]) of the values.
double quantile(std::vector<double> v, double q);

struct FiveNumber {
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
};
FiveNumber five_number(const std::vector<double>& v);

/// Correlation coefficients; empty when either column is constant or sizes differ.
std::optional<double> pearson(const std::vector<double>& x, const std::vector<double>& y);
/// Pearson correlation of average ranks.
std::optional<double> spearman(const std::vector<double>& x, const std::vector<double>& y);
std::vector<double> average_ranks(const std::vector<double>& v);

}  // namespace gancs
