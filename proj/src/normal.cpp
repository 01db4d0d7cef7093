#include "cfqi/normal.hpp"

#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <numbers>

namespace cfqi::normal {

double pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }

double cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double sf(double z) { return 0.5 * std::erfc(z / std::numbers::sqrt2); }

double quantile(double p) {
  static const boost::math::normal_distribution<double> standard;
  return boost::math::quantile(standard, p);
}

double truncated_mean_above(double mu, double sd, double a) {
  if (sd <= 0.0) return std::max(mu, a);
  const double alpha = (a - mu) / sd;
  const double tail = sf(alpha);
  if (tail < 1e-300) return a;
  return mu + sd * pdf(alpha) / tail;
}

}  // namespace cfqi::normal
