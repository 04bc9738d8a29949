#include "evidentia/nig.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "evidentia/special.hpp"

namespace evidentia::nig {

namespace {

constexpr double kPi = 3.141592653589793238462643383279503;

double softplus(double x) {
    return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x)));
}

void check(bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("nig: ") + what);
}

}  // namespace

void validate(const NigParams& p) {
    check(std::isfinite(p.gamma), "gamma must be finite");
    check(std::isfinite(p.nu) && p.nu > 0.0, "nu must be positive and finite");
    check(std::isfinite(p.alpha) && p.alpha > 1.0, "alpha must exceed 1 and be finite");
    check(std::isfinite(p.beta) && p.beta > 0.0, "beta must be positive and finite");
}

void validate(const NigPrior& q) {
    validate(NigParams{q.gamma0, q.nu0, q.alpha0, q.beta0});
}

NigParams activate(const std::array<double, 4>& raw) {
    for (double v : raw)
        check(std::isfinite(v), "activation input must be finite");
    return NigParams{raw[0], softplus(raw[1]) + kActivationEps,
                     softplus(raw[2]) + 1.0 + kActivationEps, softplus(raw[3]) + kActivationEps};
}

double nll(const NigParams& p, double y) {
    validate(p);
    const double omega = 2.0 * p.beta * (1.0 + p.nu);
    const double r = y - p.gamma;
    return 0.5 * std::log(kPi / p.nu) - p.alpha * std::log(omega) +
           (p.alpha + 0.5) * std::log(p.nu * r * r + omega) + special::log_gamma(p.alpha) -
           special::log_gamma(p.alpha + 0.5);
}

double predictive_logpdf(const NigParams& p, double y) {
    validate(p);
    const double dof = 2.0 * p.alpha;
    const double scale2 = p.beta * (1.0 + p.nu) / (p.nu * p.alpha);
    const double t2 = (y - p.gamma) * (y - p.gamma) / scale2;
    return special::log_gamma(0.5 * (dof + 1.0)) - special::log_gamma(0.5 * dof) -
           0.5 * std::log(dof * kPi * scale2) - 0.5 * (dof + 1.0) * std::log1p(t2 / dof);
}

double kl_gaussian_expected(const NigParams& p, const NigPrior& q) {
    validate(p);
    validate(q);
    const double ratio = q.nu0 / p.nu;
    const double d = p.gamma - q.gamma0;
    return 0.5 * (ratio - std::log(ratio) - 1.0) + 0.5 * q.nu0 * d * d * p.alpha / p.beta;
}

double kl_invgamma(double alpha, double beta, double alpha0, double beta0) {
    if (!(alpha > 0.0 && beta > 0.0 && alpha0 > 0.0 && beta0 > 0.0))
        throw std::domain_error("kl_invgamma: all arguments must be positive");
    return alpha0 * std::log(beta / beta0) -
           (special::log_gamma(alpha) - special::log_gamma(alpha0)) +
           (alpha - alpha0) * special::digamma(alpha) - (beta - beta0) * alpha / beta;
}

double kl_nig(const NigParams& p, const NigPrior& q) {
    validate(p);
    validate(q);
    return kl_invgamma(p.alpha, p.beta, q.alpha0, q.beta0) + kl_gaussian_expected(p, q);
}

double evidence_penalty(const NigParams& p, double y) {
    validate(p);
    return std::fabs(y - p.gamma) * (2.0 * p.nu + p.alpha);
}

double total_loss(const NigParams& p, double y, const NigPrior& prior, double lambda_kl,
                  LossMode mode) {
    check(lambda_kl >= 0.0, "lambda must be nonnegative");
    const double base = nll(p, y);
    if (lambda_kl == 0.0) return base;
    const double reg = mode == LossMode::kKl ? kl_nig(p, prior) : evidence_penalty(p, y);
    return base + lambda_kl * reg;
}

UncertaintyEstimate uncertainty(const NigParams& p) {
    check(std::isfinite(p.nu) && p.nu > 0.0, "nu must be positive and finite");
    check(std::isfinite(p.beta) && p.beta > 0.0, "beta must be positive and finite");
    if (!(p.alpha > 1.0))
        throw std::domain_error("nig::uncertainty: alpha must exceed 1 (inverse-gamma mean undefined)");
    const double aleatoric = p.beta / (p.alpha - 1.0);
    const double epistemic = aleatoric / p.nu;
    return UncertaintyEstimate{aleatoric, epistemic, aleatoric + epistemic};
}

double prob_grade_geq(const NigParams& p, double threshold) {
    validate(p);
    const double scale = std::sqrt(p.beta * (1.0 + p.nu) / (p.nu * p.alpha));
    const double t = (threshold - p.gamma) / scale;
    const double prob = 1.0 - special::student_t_cdf(t, 2.0 * p.alpha);
    return std::min(1.0, std::max(0.0, prob));
}

}  // namespace evidentia::nig
