#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "evidentia/array.hpp"
#include "evidentia/rng.hpp"

namespace evidentia {

// Define-by-run reverse-mode tape over dense Arrays. A Tape is rebuilt for
// every forward pass and owns all intermediate values; nodes are stored in
// topological order by construction. Single-threaded by contract: one tape
// per training worker.
class Tape {
public:
    // A backward closure accumulates into parent gradients. It reads this
    // node's value/gradient through the tape to stay valid across vector
    // reallocation.
    using BackwardFn = std::function<void(Tape&, int node_id)>;

    struct Node {
        Array value;
        std::vector<int> parents;
        BackwardFn backward;  // null for leaves
        const char* op = "leaf";
    };

    int leaf(Array value) {
        nodes_.push_back(Node{std::move(value), {}, nullptr, "leaf"});
        return static_cast<int>(nodes_.size()) - 1;
    }

    int node(Array value, std::vector<int> parents, BackwardFn backward, const char* op) {
        nodes_.push_back(Node{std::move(value), std::move(parents), std::move(backward), op});
        return static_cast<int>(nodes_.size()) - 1;
    }

    const Array& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    const Node& at(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
    std::size_t size() const { return nodes_.size(); }

    // Gradient buffer for a node; valid during and after backward().
    Array& grad(int id) { return grads_[static_cast<std::size_t>(id)]; }
    const Array& grad(int id) const { return grads_[static_cast<std::size_t>(id)]; }

    // Reverse sweep from a scalar loss. Deterministic: a fixed tape yields
    // bitwise-identical gradients on every call.
    void backward(int loss_id);

private:
    std::vector<Node> nodes_;
    std::vector<Array> grads_;
};

// Lightweight handle to a tape node.
struct Var {
    Tape* tape = nullptr;
    int id = -1;

    const Array& value() const { return tape->value(id); }
};

inline Var make_leaf(Tape& t, Array v) { return Var{&t, t.leaf(std::move(v))}; }

// ---- primitives ------------------------------------------------------------
// Elementwise (same shape unless stated otherwise).
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var vabs(Var a);
Var vlog(Var a);
Var vexp(Var a);
Var square(Var a);
Var softplus(Var a);
Var gelu(Var a);          // tanh approximation
Var lgamma_v(Var a);      // elementwise ln Gamma, a > 0
Var digamma_v(Var a);     // elementwise digamma, a > 0

// Structure.
Var reshape(Var a, std::vector<std::size_t> new_shape);
Var select_col(Var a, std::size_t col);            // BxM -> B
Var concat_cols(const std::vector<Var>& parts);    // BxC_i -> Bx(sum C_i)
Var sum(Var a);                                    // -> scalar
Var mean(Var a);                                   // -> scalar

// Linear algebra / network layers.
Var matmul(Var a, Var b);                          // (m x k) . (k x n)
Var linear(Var x, Var w, Var b);                   // BxN, MxN, M -> BxM
Var conv2d(Var x, Var w, Var b, int stride, int pad);  // BxCinxHxW, CoutxCinxKhxKw
Var per_location_linear(Var f, Var w);             // BxCxHxW, C -> Bx1xHxW
Var softmax_rows(Var x);                           // BxM, softmax over each row
Var attention_pool(Var f, Var a);                  // BxCxHxW, Bx(HW) -> BxC
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);  // BxC
Var dropout(Var x, double rate, bool train, Rng& rng);

// Cosine similarity of each row of h against a constant reference row:
// gradient flows to h only. Zero-norm reference rows yield similarity 0.
Var cosine_rows_const(Var h, const Array& ref);

}  // namespace evidentia
