#pragma once

namespace evidentia::special {

// ln Gamma(x) for x > 0. Lanczos approximation (g=7, 9 coefficients),
// reflection below 0.5. Relative error <= 1e-10 on [1e-3, 1e3].
double log_gamma(double x);

// Digamma psi(x) for x > 0. Recurrence lift to x >= 10, then the Bernoulli
// asymptotic series. Absolute error <= 1e-9 on [1e-3, 1e3].
double digamma(double x);

// Trigamma psi'(x) for x > 0; the derivative of digamma, needed for
// backpropagation through digamma.
double trigamma(double x);

// Regularized incomplete beta I_x(a, b) via the Lentz continued fraction.
double reg_inc_beta(double x, double a, double b);

// CDF of the standard Student-t with dof degrees of freedom.
double student_t_cdf(double t, double dof);

}  // namespace evidentia::special
