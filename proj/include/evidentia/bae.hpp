#pragma once

#include <vector>

#include "evidentia/array.hpp"
#include "evidentia/rng.hpp"
#include "evidentia/tape.hpp"

namespace evidentia::bae {

// Dual spatial-softmax attention maps; each sums to 1 over HxW per batch item.
struct AttentionPair {
    Array alpha_med;  // B x 1 x H x W
    Array alpha_lat;  // B x 1 x H x W
};

struct BaeEmbedding {
    Array z_med;   // B x C
    Array z_lat;   // B x C
    Array f_asym;  // B x C, |z_med - z_lat| elementwise
    Array h;       // B x C fused embedding
};

// Learnable parameters: bias-free 1x1 attention maps per branch plus the
// fusion MLP (linear 3C->C, LayerNorm, GELU, dropout).
struct BaeParams {
    Array w_med;    // C
    Array w_lat;    // C
    Array fuse_w;   // C x 3C
    Array fuse_b;   // C
    Array ln_gain;  // C
    Array ln_bias;  // C
    double dropout_rate = 0.1;

    static BaeParams init(std::size_t channels, Rng& rng);
};

// Tape-side handles for the parameters (leaves created by the caller).
struct BaeVars {
    Var w_med, w_lat, fuse_w, fuse_b, ln_gain, ln_bias;
};

struct BaeGraph {
    Var att_med;  // B x HW
    Var att_lat;  // B x HW
    Var z_med, z_lat, f_asym, h;  // B x C
};

BaeVars make_vars(Tape& t, const BaeParams& p);

// Full encoder: attention logits -> spatial softmax -> attention pooling ->
// asymmetry feature -> fused embedding.
BaeGraph forward(Var features, const BaeVars& vars, double dropout_rate, bool train, Rng& rng);

// Plain-array views of a finished forward pass.
AttentionPair attention_pair(const BaeGraph& g, std::size_t height, std::size_t width);
BaeEmbedding embedding(const BaeGraph& g);

// Fraction of medial attention mass in the left half of the width axis minus
// the same fraction for the lateral branch; one value per batch item in [-1, 1].
std::vector<double> asymmetry_index(const AttentionPair& att);

}  // namespace evidentia::bae
