#include "evidentia/nig_graph.hpp"

#include <cmath>
#include <stdexcept>

#include "evidentia/special.hpp"

namespace evidentia::nig {

namespace {

constexpr double kLnPi = 1.1447298858494001741434273513531;

Var const_vec(Tape& t, std::size_t n, double v) {
    return make_leaf(t, Array({n}, v));
}

Var leaf_from(Tape& t, const std::vector<double>& v) {
    return make_leaf(t, Array({v.size()}, v));
}

std::size_t batch_of(Var raw) {
    const Array& rv = raw.value();
    if (rv.ndim() != 2 || rv.dim(1) != 4)
        throw ShapeError("nig: raw head output must be Bx4, got " + shape_str(rv.shape));
    return rv.dim(0);
}

}  // namespace

GraphHead activate_graph(Var raw) {
    (void)batch_of(raw);
    Var g = select_col(raw, 0);
    Var nu = add_scalar(softplus(select_col(raw, 1)), kActivationEps);
    Var alpha = add_scalar(softplus(select_col(raw, 2)), 1.0 + kActivationEps);
    Var beta = add_scalar(softplus(select_col(raw, 3)), kActivationEps);
    return GraphHead{g, nu, alpha, beta};
}

Var nll_graph(const GraphHead& head, const std::vector<double>& y) {
    Tape& t = *head.gamma.tape;
    if (y.size() != head.gamma.value().numel())
        throw ShapeError("nll_graph: target length mismatch");
    Var yv = leaf_from(t, y);
    Var omega = scale(mul(head.beta, add_scalar(head.nu, 1.0)), 2.0);
    Var resid2 = square(sub(yv, head.gamma));
    Var term_nu = scale(add_scalar(scale(vlog(head.nu), -1.0), kLnPi), 0.5);
    Var term_omega = scale(mul(head.alpha, vlog(omega)), -1.0);
    Var term_quad = mul(add_scalar(head.alpha, 0.5), vlog(add(mul(head.nu, resid2), omega)));
    Var term_lg = sub(lgamma_v(head.alpha), lgamma_v(add_scalar(head.alpha, 0.5)));
    return add(add(term_nu, term_omega), add(term_quad, term_lg));
}

Var kl_nig_graph(const GraphHead& head, const NigPrior& prior) {
    validate(prior);
    Tape& t = *head.gamma.tape;
    const std::size_t B = head.gamma.value().numel();

    // Expected Gaussian KL over sigma^2 ~ InvGamma(alpha, beta).
    Var ratio = div(const_vec(t, B, prior.nu0), head.nu);
    Var ratio_term = scale(add_scalar(sub(ratio, vlog(ratio)), -1.0), 0.5);
    Var mean_term = scale(mul(square(add_scalar(head.gamma, -prior.gamma0)),
                              div(head.alpha, head.beta)),
                          0.5 * prior.nu0);

    // Inverse-gamma KL via the gamma-distribution closed form.
    const double lg_a0 = special::log_gamma(prior.alpha0);
    Var ig_scale = scale(add_scalar(vlog(head.beta), -std::log(prior.beta0)), prior.alpha0);
    Var ig_gamma = add_scalar(scale(lgamma_v(head.alpha), -1.0), lg_a0);
    Var ig_digamma = mul(add_scalar(head.alpha, -prior.alpha0), digamma_v(head.alpha));
    Var ig_rate = scale(mul(add_scalar(head.beta, -prior.beta0), div(head.alpha, head.beta)), -1.0);

    return add(add(ratio_term, mean_term), add(add(ig_scale, ig_gamma), add(ig_digamma, ig_rate)));
}

Var evidence_penalty_graph(const GraphHead& head, const std::vector<double>& y) {
    Tape& t = *head.gamma.tape;
    if (y.size() != head.gamma.value().numel())
        throw ShapeError("evidence_penalty_graph: target length mismatch");
    Var yv = leaf_from(t, y);
    return mul(vabs(sub(yv, head.gamma)), add(scale(head.nu, 2.0), head.alpha));
}

Var total_loss_graph(Var raw, const std::vector<double>& y, const NigPrior& prior,
                     double lambda_kl, LossMode mode) {
    if (lambda_kl < 0.0) throw std::invalid_argument("total_loss_graph: negative lambda");
    GraphHead head = activate_graph(raw);
    Var per_sample = nll_graph(head, y);
    if (lambda_kl > 0.0) {
        Var reg = mode == LossMode::kKl ? kl_nig_graph(head, prior)
                                        : evidence_penalty_graph(head, y);
        per_sample = add(per_sample, scale(reg, lambda_kl));
    }
    return mean(per_sample);
}

Var regularizer_graph(Var raw, const std::vector<double>& y, const NigPrior& prior,
                      LossMode mode) {
    GraphHead head = activate_graph(raw);
    Var reg = mode == LossMode::kKl ? kl_nig_graph(head, prior) : evidence_penalty_graph(head, y);
    return mean(reg);
}

}  // namespace evidentia::nig
