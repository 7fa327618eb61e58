#pragma once

namespace nestmc {

// Natural log of the gamma function. Thread safe, unlike std::lgamma which
// may write the global signgam.
double log_gamma(double a);

// Regularized lower incomplete gamma P(a, x) = gamma(a, x) / Gamma(a) for
// a > 0, x >= 0. Power series for x < a + 1, modified Lentz continued
// fraction otherwise; absolute accuracy well below 1e-12 on [0, inf).
double gamma_p(double a, double x);

// Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x), computed on the
// same series/continued-fraction split so that the accurate branch is used
// near both tails.
double gamma_q(double a, double x);

}  // namespace nestmc
