#pragma once

namespace nstm {

// Regularized lower/upper incomplete gamma P(a, x), Q(a, x); series for
// x < a + 1, Lentz continued fraction otherwise.
double gamma_p(double a, double x);
double gamma_q(double a, double x);

// Regularized incomplete beta I_x(a, b) by continued fraction.
double incomplete_beta(double a, double b, double x);

double normal_cdf(double z);
double normal_sf(double z);

// Survival functions of the chi-square(k) and F(d1, d2) distributions.
double chi2_sf(double x, double k);
double f_sf(double x, double d1, double d2);

}  // namespace nstm
