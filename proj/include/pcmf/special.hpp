#pragma once

namespace pcmf {

// psi(x) for x > 0: upward recurrence into the asymptotic range, then a
// Bernoulli-number tail series.
double digamma(double x);

// psi'(x) for x > 0, same scheme.
double trigamma(double x);

// Inverse of digamma on (0, inf): initial guess exp(y) + 0.5 for y >= -2.22,
// else -1/(y + euler_gamma), refined with at most 10 Newton steps to
// |digamma(x) - y| <= 1e-10.
double inv_digamma(double y);

// Thread-safe log(Gamma(x)) for x > 0.
double log_gamma(double x);

// log(x!) for a non-negative count stored as a double.
double log_factorial(double x);

inline constexpr double euler_gamma = 0.5772156649015329;

}  // namespace pcmf
