#pragma once

// Standard normal helpers shared by the simulator, the belief filter and the tests.

namespace cfqi::normal {

double pdf(double z);
double cdf(double z);
/// Upper tail 1 - cdf(z), accurate for large z.
double sf(double z);
/// Inverse of cdf on (0, 1).
double quantile(double p);

/// Mean of X ~ N(mu, sd^2) conditioned on X > a.
double truncated_mean_above(double mu, double sd, double a);

}  // namespace cfqi::normal
