#pragma once

#include <array>

namespace evidentia::nig {

// Shift added after softplus in the activation; keeps nu, beta positive and
// alpha - 1 bounded away from zero in the uncertainty formulas.
inline constexpr double kActivationEps = 1e-6;

// The four evidential parameters of one prediction: location gamma,
// confidence nu on the mean, and inverse-gamma shape/scale alpha, beta
// over the observation variance.
struct NigParams {
    double gamma;
    double nu;
    double alpha;
    double beta;
};

// Low-evidence reference prior the KL regularizer pulls toward.
struct NigPrior {
    double gamma0 = 2.0;   // midpoint of grades 0..4
    double nu0 = 0.1;
    double alpha0 = 1.001;
    double beta0 = 2.0;
};

struct UncertaintyEstimate {
    double aleatoric;  // E[sigma^2] = beta / (alpha - 1)
    double epistemic;  // Var[mu]   = beta / (nu (alpha - 1))
    double total;
};

enum class LossMode { kKl, kEvidence };

// Throws std::invalid_argument when the parameter invariants are violated.
void validate(const NigParams& p);
void validate(const NigPrior& q);

// Softplus activation of the raw head outputs: gamma unconstrained,
// nu/beta shifted positive, alpha shifted above 1.
NigParams activate(const std::array<double, 4>& raw);

// Closed-form negative log marginal likelihood of y under the NIG prior.
double nll(const NigParams& p, double y);

// Log-density of the Student-t marginal (location gamma,
// scale^2 = beta (1 + nu) / (nu alpha), dof 2 alpha); equals -nll.
double predictive_logpdf(const NigParams& p, double y);

// E_{sigma^2 ~ InvGamma(alpha, beta)} KL[N(gamma, sigma^2/nu) || N(gamma0, sigma^2/nu0)].
double kl_gaussian_expected(const NigParams& p, const NigPrior& q);

// KL[InvGamma(alpha, beta) || InvGamma(alpha0, beta0)], computed through the
// gamma-distribution bijection t = 1/sigma^2.
double kl_invgamma(double alpha, double beta, double alpha0, double beta0);

// Full NIG-to-prior KL: inverse-gamma term plus the expected Gaussian term.
double kl_nig(const NigParams& p, const NigPrior& q);

// |y - gamma| (2 nu + alpha): the error-proportional evidence penalty.
double evidence_penalty(const NigParams& p, double y);

// nll + lambda * regularizer, where the regularizer is selected by mode.
double total_loss(const NigParams& p, double y, const NigPrior& prior, double lambda_kl,
                  LossMode mode);

// Conjugate-prior moments; requires alpha > 1.
UncertaintyEstimate uncertainty(const NigParams& p);

// P(grade >= threshold) under the Student-t predictive distribution.
double prob_grade_geq(const NigParams& p, double threshold);

}  // namespace evidentia::nig
