#pragma once

#include <vector>

#include "evidentia/nig.hpp"
#include "evidentia/tape.hpp"

namespace evidentia::nig {

// Activated head parameters as tape variables, one value per batch item.
struct GraphHead {
    Var gamma;
    Var nu;
    Var alpha;
    Var beta;
};

// Applies the softplus activation to a Bx4 raw head output.
GraphHead activate_graph(Var raw);

// Per-sample loss vectors (length B); formulas mirror the scalar module and
// are checked against it and against finite differences in the tests.
Var nll_graph(const GraphHead& head, const std::vector<double>& y);
Var kl_nig_graph(const GraphHead& head, const NigPrior& prior);
Var evidence_penalty_graph(const GraphHead& head, const std::vector<double>& y);

// Batch-mean total objective from the raw head output. lambda_kl = 0 reduces
// exactly to the mean NLL (the regularizer is never built).
Var total_loss_graph(Var raw, const std::vector<double>& y, const NigPrior& prior,
                     double lambda_kl, LossMode mode);

// Batch-mean regularizer value alone (for the loss-decomposition history).
Var regularizer_graph(Var raw, const std::vector<double>& y, const NigPrior& prior, LossMode mode);

}  // namespace evidentia::nig
