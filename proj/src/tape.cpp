#include "evidentia/tape.hpp"

#include <cmath>
#include <stdexcept>

#include "evidentia/special.hpp"

namespace evidentia {

namespace {

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double softplus_stable(double x) {
    return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x)));
}

constexpr double kGeluC = 0.7978845608028653558798921198687;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

void check_tapes(const char* op, Var a, Var b) {
    if (a.tape != b.tape) throw std::invalid_argument(std::string(op) + ": mixed tapes");
}

}  // namespace

void Tape::backward(int loss_id) {
    if (loss_id < 0 || static_cast<std::size_t>(loss_id) >= nodes_.size())
        throw std::invalid_argument("Tape::backward: bad node id");
    if (nodes_[static_cast<std::size_t>(loss_id)].value.numel() != 1)
        throw std::invalid_argument("Tape::backward: loss must be scalar, got shape " +
                                    shape_str(nodes_[static_cast<std::size_t>(loss_id)].value.shape));
    grads_.clear();
    grads_.reserve(nodes_.size());
    for (const Node& n : nodes_) grads_.emplace_back(n.value.shape, 0.0);
    grads_[static_cast<std::size_t>(loss_id)].data[0] = 1.0;
    for (int i = loss_id; i >= 0; --i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (n.backward) n.backward(*this, i);
    }
}

// ---- elementwise ------------------------------------------------------------

namespace {

template <typename Fwd, typename Bwd>
Var unary_op(Var a, const char* name, Fwd fwd, Bwd bwd) {
    const Array& av = a.value();
    Array out(av.shape);
    for (std::size_t i = 0; i < av.numel(); ++i) out.data[i] = fwd(av.data[i]);
    const int pa = a.id;
    int id = a.tape->node(std::move(out), {pa},
                          [pa, bwd](Tape& t, int self) {
                              const Array& g = t.grad(self);
                              const Array& x = t.value(pa);
                              Array& gx = t.grad(pa);
                              for (std::size_t i = 0; i < g.numel(); ++i)
                                  gx.data[i] += g.data[i] * bwd(x.data[i], t.value(self).data[i]);
                          },
                          name);
    return Var{a.tape, id};
}

template <typename Fwd, typename DA, typename DB>
Var binary_op(Var a, Var b, const char* name, Fwd fwd, DA da, DB db) {
    check_tapes(name, a, b);
    require_same_shape(name, a.value(), b.value());
    const Array& av = a.value();
    const Array& bv = b.value();
    Array out(av.shape);
    for (std::size_t i = 0; i < av.numel(); ++i) out.data[i] = fwd(av.data[i], bv.data[i]);
    const int pa = a.id, pb = b.id;
    int id = a.tape->node(std::move(out), {pa, pb},
                          [pa, pb, da, db](Tape& t, int self) {
                              const Array& g = t.grad(self);
                              const Array& x = t.value(pa);
                              const Array& y = t.value(pb);
                              Array& gx = t.grad(pa);
                              Array& gy = t.grad(pb);
                              for (std::size_t i = 0; i < g.numel(); ++i) {
                                  gx.data[i] += g.data[i] * da(x.data[i], y.data[i]);
                                  gy.data[i] += g.data[i] * db(x.data[i], y.data[i]);
                              }
                          },
                          name);
    return Var{a.tape, id};
}

}  // namespace

Var add(Var a, Var b) {
    return binary_op(a, b, "add", [](double x, double y) { return x + y; },
                     [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
    return binary_op(a, b, "sub", [](double x, double y) { return x - y; },
                     [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
    return binary_op(a, b, "mul", [](double x, double y) { return x * y; },
                     [](double, double y) { return y; }, [](double x, double) { return x; });
}

Var div(Var a, Var b) {
    return binary_op(a, b, "div", [](double x, double y) { return x / y; },
                     [](double, double y) { return 1.0 / y; },
                     [](double x, double y) { return -x / (y * y); });
}

Var scale(Var a, double c) {
    return unary_op(a, "scale", [c](double x) { return c * x; },
                    [c](double, double) { return c; });
}

Var add_scalar(Var a, double c) {
    return unary_op(a, "add_scalar", [c](double x) { return x + c; },
                    [](double, double) { return 1.0; });
}

Var vabs(Var a) {
    return unary_op(a, "abs", [](double x) { return std::fabs(x); },
                    [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var vlog(Var a) {
    return unary_op(a, "log", [](double x) { return std::log(x); },
                    [](double x, double) { return 1.0 / x; });
}

Var vexp(Var a) {
    return unary_op(a, "exp", [](double x) { return std::exp(x); },
                    [](double, double y) { return y; });
}

Var square(Var a) {
    return unary_op(a, "square", [](double x) { return x * x; },
                    [](double x, double) { return 2.0 * x; });
}

Var softplus(Var a) {
    return unary_op(a, "softplus", [](double x) { return softplus_stable(x); },
                    [](double x, double) { return sigmoid(x); });
}

Var gelu(Var a) {
    return unary_op(a, "gelu",
                    [](double x) {
                        const double u = kGeluC * (x + kGeluA * x * x * x);
                        return 0.5 * x * (1.0 + std::tanh(u));
                    },
                    [](double x, double) {
                        const double u = kGeluC * (x + kGeluA * x * x * x);
                        const double th = std::tanh(u);
                        const double sech2 = 1.0 - th * th;
                        return 0.5 * (1.0 + th) +
                               0.5 * x * sech2 * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
                    });
}

Var lgamma_v(Var a) {
    return unary_op(a, "lgamma", [](double x) { return special::log_gamma(x); },
                    [](double x, double) { return special::digamma(x); });
}

Var digamma_v(Var a) {
    return unary_op(a, "digamma", [](double x) { return special::digamma(x); },
                    [](double x, double) { return special::trigamma(x); });
}

// ---- structure --------------------------------------------------------------

Var reshape(Var a, std::vector<std::size_t> new_shape) {
    const Array& av = a.value();
    if (Array::shape_product(new_shape) != av.numel())
        throw ShapeError("reshape: cannot view " + shape_str(av.shape) + " as " +
                         shape_str(new_shape));
    Array out(std::move(new_shape), av.data);
    const int pa = a.id;
    int id = a.tape->node(std::move(out), {pa},
                          [pa](Tape& t, int self) {
                              const Array& g = t.grad(self);
                              Array& gx = t.grad(pa);
                              for (std::size_t i = 0; i < g.numel(); ++i) gx.data[i] += g.data[i];
                          },
                          "reshape");
    return Var{a.tape, id};
}

Var select_col(Var a, std::size_t col) {
    const Array& av = a.value();
    if (av.ndim() != 2 || col >= av.dim(1))
        throw ShapeError("select_col: need 2-D input with col < " +
                         std::to_string(av.ndim() == 2 ? av.dim(1) : 0) + ", got " +
                         shape_str(av.shape) + " col " + std::to_string(col));
    const std::size_t rows = av.dim(0), cols = av.dim(1);
    Array out({rows});
    for (std::size_t r = 0; r < rows; ++r) out.data[r] = av.data[r * cols + col];
    const int pa = a.id;
    int id = a.tape->node(std::move(out), {pa},
                          [pa, col, cols](Tape& t, int self) {
                              const Array& g = t.grad(self);
                              Array& gx = t.grad(pa);
                              for (std::size_t r = 0; r < g.numel(); ++r)
                                  gx.data[r * cols + col] += g.data[r];
                          },
                          "select_col");
    return Var{a.tape, id};
}

Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty input");
    Tape* tape = parts[0].tape;
    const std::size_t rows = parts[0].value().dim(0);
    std::size_t total = 0;
    for (const Var& p : parts) {
        if (p.tape != tape) throw std::invalid_argument("concat_cols: mixed tapes");
        if (p.value().ndim() != 2 || p.value().dim(0) != rows)
            throw ShapeError("concat_cols: parts must be 2-D with equal rows, got " +
                             shape_str(p.value().shape));
        total += p.value().dim(1);
    }
    Array out({rows, total});
    std::vector<int> ids;
    std::vector<std::size_t> widths;
    std::size_t off = 0;
    for (const Var& p : parts) {
        const Array& pv = p.value();
        const std::size_t w = pv.dim(1);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < w; ++c)
                out.data[r * total + off + c] = pv.data[r * w + c];
        ids.push_back(p.id);
        widths.push_back(w);
        off += w;
    }
    int id = tape->node(std::move(out), ids,
                        [ids, widths, rows, total](Tape& t, int self) {
                            const Array& g = t.grad(self);
                            std::size_t off2 = 0;
                            for (std::size_t k = 0; k < ids.size(); ++k) {
                                Array& gp = t.grad(ids[k]);
                                const std::size_t w = widths[k];
                                for (std::size_t r = 0; r < rows; ++r)
                                    for (std::size_t c = 0; c < w; ++c)
                                        gp.data[r * w + c] += g.data[r * total + off2 + c];
                                off2 += w;
                            }
                        },
                        "concat_cols");
    return Var{tape, id};
}

Var sum(Var a) {
    const Array& av = a.value();
    double s = 0.0;
    for (double v : av.data) s += v;
    const int pa = a.id;
    int id = a.tape->node(Array::scalar(s), {pa},
                          [pa](Tape& t, int self) {
                              const double g = t.grad(self).data[0];
                              Array& gx = t.grad(pa);
                              for (double& v : gx.data) v += g;
                          },
                          "sum");
    return Var{a.tape, id};
}

Var mean(Var a) {
    const Array& av = a.value();
    if (av.numel() == 0) throw std::invalid_argument("mean: empty input");
    double s = 0.0;
    for (double v : av.data) s += v;
    const double inv = 1.0 / static_cast<double>(av.numel());
    const int pa = a.id;
    int id = a.tape->node(Array::scalar(s * inv), {pa},
                          [pa, inv](Tape& t, int self) {
                              const double g = t.grad(self).data[0] * inv;
                              Array& gx = t.grad(pa);
                              for (double& v : gx.data) v += g;
                          },
                          "mean");
    return Var{a.tape, id};
}

// ---- layers -----------------------------------------------------------------

Var matmul(Var a, Var b) {
    check_tapes("matmul", a, b);
    const Array& av = a.value();
    const Array& bv = b.value();
    if (av.ndim() != 2 || bv.ndim() != 2 || av.dim(1) != bv.dim(0))
        throw ShapeError("matmul: incompatible shapes " + shape_str(av.shape) + " vs " +
                         shape_str(bv.shape));
    const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    Array out({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t l = 0; l < k; ++l) {
            const double x = av.data[i * k + l];
            if (x == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) out.data[i * n + j] += x * bv.data[l * n + j];
        }
    const int pa = a.id, pb = b.id;
    int id = a.tape->node(std::move(out), {pa, pb},
                          [pa, pb, m, k, n](Tape& t, int self) {
                              const Array& g = t.grad(self);
                              const Array& x = t.value(pa);
                              const Array& y = t.value(pb);
                              Array& gx = t.grad(pa);
                              Array& gy = t.grad(pb);
                              for (std::size_t i = 0; i < m; ++i)
                                  for (std::size_t j = 0; j < n; ++j) {
                                      const double gij = g.data[i * n + j];
                                      if (gij == 0.0) continue;
                                      for (std::size_t l = 0; l < k; ++l) {
                                          gx.data[i * k + l] += gij * y.data[l * n + j];
                                          gy.data[l * n + j] += gij * x.data[i * k + l];
                                      }
                                  }
                          },
                          "matmul");
    return Var{a.tape, id};
}

Var linear(Var x, Var w, Var b) {
    check_tapes("linear", x, w);
    check_tapes("linear", x, b);
    const Array& xv = x.value();
    const Array& wv = w.value();
    const Array& bv = b.value();
    if (xv.ndim() != 2 || wv.ndim() != 2 || bv.ndim() != 1 || xv.dim(1) != wv.dim(1) ||
        wv.dim(0) != bv.dim(0))
        throw ShapeError("linear: incompatible shapes x" + shape_str(xv.shape) + " w" +
                         shape_str(wv.shape) + " b" + shape_str(bv.shape));
    const std::size_t B = xv.dim(0), N = xv.dim(1), M = wv.dim(0);
    Array out({B, M});
    for (std::size_t i = 0; i < B; ++i)
        for (std::size_t m = 0; m < M; ++m) {
            double acc = bv.data[m];
            const double* xi = &xv.data[i * N];
            const double* wm = &wv.data[m * N];
            for (std::size_t n = 0; n < N; ++n) acc += xi[n] * wm[n];
            out.data[i * M + m] = acc;
        }
    const int px = x.id, pw = w.id, pb = b.id;
    int id = x.tape->node(std::move(out), {px, pw, pb},
                          [px, pw, pb, B, N, M](Tape& t, int self) {
                              const Array& g = t.grad(self);
                              const Array& xv2 = t.value(px);
                              const Array& wv2 = t.value(pw);
                              Array& gx = t.grad(px);
                              Array& gw = t.grad(pw);
                              Array& gb = t.grad(pb);
                              for (std::size_t i = 0; i < B; ++i)
                                  for (std::size_t m = 0; m < M; ++m) {
                                      const double gim = g.data[i * M + m];
                                      if (gim == 0.0) continue;
                                      gb.data[m] += gim;
                                      const double* xi = &xv2.data[i * N];
                                      const double* wm = &wv2.data[m * N];
                                      double* gxi = &gx.data[i * N];
                                      double* gwm = &gw.data[m * N];
                                      for (std::size_t n = 0; n < N; ++n) {
                                          gxi[n] += gim * wm[n];
                                          gwm[n] += gim * xi[n];
                                      }
                                  }
                          },
                          "linear");
    return Var{x.tape, id};
}

Var conv2d(Var x, Var w, Var b, int stride, int pad) {
    check_tapes("conv2d", x, w);
    check_tapes("conv2d", x, b);
    const Array& xv = x.value();
    const Array& wv = w.value();
    const Array& bv = b.value();
    if (xv.ndim() != 4 || wv.ndim() != 4 || bv.ndim() != 1 || xv.dim(1) != wv.dim(1) ||
        wv.dim(0) != bv.dim(0))
        throw ShapeError("conv2d: incompatible shapes x" + shape_str(xv.shape) + " w" +
                         shape_str(wv.shape) + " b" + shape_str(bv.shape));
    if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
    const std::size_t B = xv.dim(0), Ci = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const std::size_t Co = wv.dim(0), Kh = wv.dim(2), Kw = wv.dim(3);
    const std::size_t Ho = (H + 2 * static_cast<std::size_t>(pad) - Kh) / static_cast<std::size_t>(stride) + 1;
    const std::size_t Wo = (W + 2 * static_cast<std::size_t>(pad) - Kw) / static_cast<std::size_t>(stride) + 1;
    Array out({B, Co, Ho, Wo});
    const auto xin = [&](std::size_t bb, std::size_t c, long h, long wcol) -> double {
        if (h < 0 || wcol < 0 || h >= static_cast<long>(H) || wcol >= static_cast<long>(W)) return 0.0;
        return xv.data[((bb * Ci + c) * H + static_cast<std::size_t>(h)) * W + static_cast<std::size_t>(wcol)];
    };
    for (std::size_t bb = 0; bb < B; ++bb)
        for (std::size_t co = 0; co < Co; ++co)
            for (std::size_t ho = 0; ho < Ho; ++ho)
                for (std::size_t wo = 0; wo < Wo; ++wo) {
                    double acc = bv.data[co];
                    for (std::size_t ci = 0; ci < Ci; ++ci)
                        for (std::size_t kh = 0; kh < Kh; ++kh)
                            for (std::size_t kw = 0; kw < Kw; ++kw) {
                                const long hi = static_cast<long>(ho) * stride - pad + static_cast<long>(kh);
                                const long wi = static_cast<long>(wo) * stride - pad + static_cast<long>(kw);
                                acc += xin(bb, ci, hi, wi) *
                                       wv.data[((co * Ci + ci) * Kh + kh) * Kw + kw];
                            }
                    out.data[((bb * Co + co) * Ho + ho) * Wo + wo] = acc;
                }
    const int px = x.id, pw = w.id, pb = b.id;
    int id = x.tape->node(
        std::move(out), {px, pw, pb},
        [px, pw, pb, B, Ci, H, W, Co, Kh, Kw, Ho, Wo, stride, pad](Tape& t, int self) {
            const Array& g = t.grad(self);
            const Array& xv2 = t.value(px);
            const Array& wv2 = t.value(pw);
            Array& gx = t.grad(px);
            Array& gw = t.grad(pw);
            Array& gb = t.grad(pb);
            for (std::size_t bb = 0; bb < B; ++bb)
                for (std::size_t co = 0; co < Co; ++co)
                    for (std::size_t ho = 0; ho < Ho; ++ho)
                        for (std::size_t wo = 0; wo < Wo; ++wo) {
                            const double gv = g.data[((bb * Co + co) * Ho + ho) * Wo + wo];
                            if (gv == 0.0) continue;
                            gb.data[co] += gv;
                            for (std::size_t ci = 0; ci < Ci; ++ci)
                                for (std::size_t kh = 0; kh < Kh; ++kh)
                                    for (std::size_t kw = 0; kw < Kw; ++kw) {
                                        const long hi = static_cast<long>(ho) * stride - pad + static_cast<long>(kh);
                                        const long wi = static_cast<long>(wo) * stride - pad + static_cast<long>(kw);
                                        if (hi < 0 || wi < 0 || hi >= static_cast<long>(H) ||
                                            wi >= static_cast<long>(W))
                                            continue;
                                        const std::size_t xi =
                                            ((bb * Ci + ci) * H + static_cast<std::size_t>(hi)) * W +
                                            static_cast<std::size_t>(wi);
                                        const std::size_t widx = ((co * Ci + ci) * Kh + kh) * Kw + kw;
                                        gx.data[xi] += gv * wv2.data[widx];
                                        gw.data[widx] += gv * xv2.data[xi];
                                    }
                        }
        },
        "conv2d");
    return Var{x.tape, id};
}

Var per_location_linear(Var f, Var w) {
    check_tapes("per_location_linear", f, w);
    const Array& fv = f.value();
    const Array& wv = w.value();
    if (fv.ndim() != 4 || wv.ndim() != 1 || wv.dim(0) != fv.dim(1))
        throw ShapeError("per_location_linear: need BxCxHxW and C weights, got " +
                         shape_str(fv.shape) + " vs " + shape_str(wv.shape));
    const std::size_t B = fv.dim(0), C = fv.dim(1), H = fv.dim(2), W = fv.dim(3);
    const std::size_t HW = H * W;
    Array out({B, 1, H, W});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) {
            const double wc = wv.data[c];
            const double* src = &fv.data[(b * C + c) * HW];
            double* dst = &out.data[b * HW];
            for (std::size_t i = 0; i < HW; ++i) dst[i] += wc * src[i];
        }
    const int pf = f.id, pw = w.id;
    int id = f.tape->node(std::move(out), {pf, pw},
                          [pf, pw, B, C, HW](Tape& t, int self) {
                              const Array& g = t.grad(self);
                              const Array& fv2 = t.value(pf);
                              const Array& wv2 = t.value(pw);
                              Array& gf = t.grad(pf);
                              Array& gw = t.grad(pw);
                              for (std::size_t b = 0; b < B; ++b)
                                  for (std::size_t c = 0; c < C; ++c) {
                                      const double wc = wv2.data[c];
                                      const double* gb = &g.data[b * HW];
                                      const double* src = &fv2.data[(b * C + c) * HW];
                                      double* gfc = &gf.data[(b * C + c) * HW];
                                      double acc = 0.0;
                                      for (std::size_t i = 0; i < HW; ++i) {
                                          gfc[i] += gb[i] * wc;
                                          acc += gb[i] * src[i];
                                      }
                                      gw.data[c] += acc;
                                  }
                          },
                          "per_location_linear");
    return Var{f.tape, id};
}

Var softmax_rows(Var x) {
    const Array& xv = x.value();
    if (xv.ndim() != 2) throw ShapeError("softmax_rows: need 2-D input, got " + shape_str(xv.shape));
    const std::size_t B = xv.dim(0), M = xv.dim(1);
    if (M == 0) throw ShapeError("softmax_rows: empty rows");
    Array out({B, M});
    for (std::size_t b = 0; b < B; ++b) {
        const double* row = &xv.data[b * M];
        double* orow = &out.data[b * M];
        double mx = row[0];
        for (std::size_t i = 1; i < M; ++i) mx = std::max(mx, row[i]);
        double s = 0.0;
        for (std::size_t i = 0; i < M; ++i) {
            orow[i] = std::exp(row[i] - mx);
            s += orow[i];
        }
        const double inv = 1.0 / s;
        for (std::size_t i = 0; i < M; ++i) orow[i] *= inv;
    }
    const int px = x.id;
    int id = x.tape->node(std::move(out), {px},
                          [px, B, M](Tape& t, int self) {
                              const Array& g = t.grad(self);
                              const Array& y = t.value(self);
                              Array& gx = t.grad(px);
                              for (std::size_t b = 0; b < B; ++b) {
                                  const double* grow = &g.data[b * M];
                                  const double* yrow = &y.data[b * M];
                                  double dot = 0.0;
                                  for (std::size_t i = 0; i < M; ++i) dot += grow[i] * yrow[i];
                                  double* gxr = &gx.data[b * M];
                                  for (std::size_t i = 0; i < M; ++i)
                                      gxr[i] += yrow[i] * (grow[i] - dot);
                              }
                          },
                          "softmax_rows");
    return Var{x.tape, id};
}

Var attention_pool(Var f, Var a) {
    check_tapes("attention_pool", f, a);
    const Array& fv = f.value();
    const Array& av = a.value();
    if (fv.ndim() != 4 || av.ndim() != 2 || av.dim(0) != fv.dim(0) ||
        av.dim(1) != fv.dim(2) * fv.dim(3))
        throw ShapeError("attention_pool: need BxCxHxW and Bx(HW), got " + shape_str(fv.shape) +
                         " vs " + shape_str(av.shape));
    const std::size_t B = fv.dim(0), C = fv.dim(1), HW = fv.dim(2) * fv.dim(3);
    Array out({B, C});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) {
            const double* src = &fv.data[(b * C + c) * HW];
            const double* att = &av.data[b * HW];
            double acc = 0.0;
            for (std::size_t i = 0; i < HW; ++i) acc += att[i] * src[i];
            out.data[b * C + c] = acc;
        }
    const int pf = f.id, pa = a.id;
    int id = f.tape->node(std::move(out), {pf, pa},
                          [pf, pa, B, C, HW](Tape& t, int self) {
                              const Array& g = t.grad(self);
                              const Array& fv2 = t.value(pf);
                              const Array& av2 = t.value(pa);
                              Array& gf = t.grad(pf);
                              Array& ga = t.grad(pa);
                              for (std::size_t b = 0; b < B; ++b)
                                  for (std::size_t c = 0; c < C; ++c) {
                                      const double gv = g.data[b * C + c];
                                      if (gv == 0.0) continue;
                                      const double* att = &av2.data[b * HW];
                                      const double* src = &fv2.data[(b * C + c) * HW];
                                      double* gfc = &gf.data[(b * C + c) * HW];
                                      double* gac = &ga.data[b * HW];
                                      for (std::size_t i = 0; i < HW; ++i) {
                                          gfc[i] += gv * att[i];
                                          gac[i] += gv * src[i];
                                      }
                                  }
                          },
                          "attention_pool");
    return Var{f.tape, id};
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
    check_tapes("layer_norm", x, gain);
    check_tapes("layer_norm", x, bias);
    const Array& xv = x.value();
    const Array& gv = gain.value();
    const Array& bv = bias.value();
    if (xv.ndim() != 2 || gv.ndim() != 1 || bv.ndim() != 1 || gv.dim(0) != xv.dim(1) ||
        bv.dim(0) != xv.dim(1))
        throw ShapeError("layer_norm: incompatible shapes x" + shape_str(xv.shape) + " gain" +
                         shape_str(gv.shape) + " bias" + shape_str(bv.shape));
    const std::size_t B = xv.dim(0), C = xv.dim(1);
    Array out({B, C});
    std::vector<double> rstd(B), mu(B);
    for (std::size_t b = 0; b < B; ++b) {
        const double* row = &xv.data[b * C];
        double m = 0.0;
        for (std::size_t c = 0; c < C; ++c) m += row[c];
        m /= static_cast<double>(C);
        double var = 0.0;
        for (std::size_t c = 0; c < C; ++c) var += (row[c] - m) * (row[c] - m);
        var /= static_cast<double>(C);
        mu[b] = m;
        rstd[b] = 1.0 / std::sqrt(var + eps);
        for (std::size_t c = 0; c < C; ++c)
            out.data[b * C + c] = (row[c] - m) * rstd[b] * gv.data[c] + bv.data[c];
    }
    const int px = x.id, pg = gain.id, pb = bias.id;
    int id = x.tape->node(
        std::move(out), {px, pg, pb},
        [px, pg, pb, B, C, mu, rstd](Tape& t, int self) {
            const Array& g = t.grad(self);
            const Array& xv2 = t.value(px);
            const Array& gv2 = t.value(pg);
            Array& gx = t.grad(px);
            Array& gg = t.grad(pg);
            Array& gb = t.grad(pb);
            for (std::size_t b = 0; b < B; ++b) {
                const double* grow = &g.data[b * C];
                const double* row = &xv2.data[b * C];
                double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                for (std::size_t c = 0; c < C; ++c) {
                    const double xhat = (row[c] - mu[b]) * rstd[b];
                    const double dxhat = grow[c] * gv2.data[c];
                    gg.data[c] += grow[c] * xhat;
                    gb.data[c] += grow[c];
                    mean_dxhat += dxhat;
                    mean_dxhat_xhat += dxhat * xhat;
                }
                mean_dxhat /= static_cast<double>(C);
                mean_dxhat_xhat /= static_cast<double>(C);
                for (std::size_t c = 0; c < C; ++c) {
                    const double xhat = (row[c] - mu[b]) * rstd[b];
                    const double dxhat = grow[c] * gv2.data[c];
                    gx.data[b * C + c] +=
                        rstd[b] * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
                }
            }
        },
        "layer_norm");
    return Var{x.tape, id};
}

Var dropout(Var x, double rate, bool train, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0, 1)");
    if (!train || rate == 0.0) return x;
    const Array& xv = x.value();
    const double keep = 1.0 - rate;
    std::vector<double> mask(xv.numel());
    Array out(xv.shape);
    for (std::size_t i = 0; i < xv.numel(); ++i) {
        mask[i] = rng.uniform() < keep ? 1.0 / keep : 0.0;
        out.data[i] = xv.data[i] * mask[i];
    }
    const int px = x.id;
    int id = x.tape->node(std::move(out), {px},
                          [px, mask = std::move(mask)](Tape& t, int self) {
                              const Array& g = t.grad(self);
                              Array& gx = t.grad(px);
                              for (std::size_t i = 0; i < g.numel(); ++i)
                                  gx.data[i] += g.data[i] * mask[i];
                          },
                          "dropout");
    return Var{x.tape, id};
}

Var cosine_rows_const(Var h, const Array& ref) {
    const Array& hv = h.value();
    if (hv.ndim() != 2 || !hv.same_shape(ref))
        throw ShapeError("cosine_rows_const: need matching 2-D shapes, got " +
                         shape_str(hv.shape) + " vs " + shape_str(ref.shape));
    const std::size_t B = hv.dim(0), C = hv.dim(1);
    Array out({B});
    std::vector<double> hnorm(B), rnorm(B);
    for (std::size_t b = 0; b < B; ++b) {
        const double* hb = &hv.data[b * C];
        const double* rb = &ref.data[b * C];
        double hh = 0.0, rr = 0.0, hr = 0.0;
        for (std::size_t c = 0; c < C; ++c) {
            hh += hb[c] * hb[c];
            rr += rb[c] * rb[c];
            hr += hb[c] * rb[c];
        }
        hnorm[b] = std::sqrt(hh);
        rnorm[b] = std::sqrt(rr);
        out.data[b] = (hnorm[b] > 0.0 && rnorm[b] > 0.0) ? hr / (hnorm[b] * rnorm[b]) : 0.0;
    }
    const int ph = h.id;
    int id = h.tape->node(
        std::move(out), {ph},
        [ph, ref, hnorm, rnorm, B, C](Tape& t, int self) {
            const Array& g = t.grad(self);
            const Array& y = t.value(self);
            const Array& hv2 = t.value(ph);
            Array& gh = t.grad(ph);
            for (std::size_t b = 0; b < B; ++b) {
                if (g.data[b] == 0.0 || hnorm[b] == 0.0 || rnorm[b] == 0.0) continue;
                const double s = y.data[b];
                const double inv_hr = 1.0 / (hnorm[b] * rnorm[b]);
                const double inv_h2 = 1.0 / (hnorm[b] * hnorm[b]);
                const double* hb = &hv2.data[b * C];
                const double* rb = &ref.data[b * C];
                double* ghb = &gh.data[b * C];
                for (std::size_t c = 0; c < C; ++c)
                    ghb[c] += g.data[b] * (rb[c] * inv_hr - s * hb[c] * inv_h2);
            }
        },
        "cosine_rows_const");
    return Var{h.tape, id};
}

}  // namespace evidentia
