#pragma once

#include <span>

namespace deepspace::math {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * ln(2*pi)

/// Stable log(sum(exp(v))). Returns -inf for an empty span or all -inf entries.
double log_sum_exp(std::span<const double> values);

double erf(double x);
double std_normal_cdf(double x);
/// Inverse of the standard normal CDF. Throws ArgumentError unless 0 < p < 1.
double std_normal_quantile(double p);
/// Inverse error function on (-1, 1).
double erfinv(double y);

}  // namespace deepspace::math
