#pragma once

// Reverse-mode differentiation over dense arrays. A Tape owns the nodes of
// one forward pass in topological (insertion) order; backward walks the list
// in reverse exactly once. Gradient accumulation happens in that fixed order,
// so single-threaded results are bit-reproducible and the parallel elementwise
// kernels do not change any reduction order (see kernels.hpp).

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "duofit/kernels.hpp"
#include "duofit/tensor.hpp"

namespace duofit::ag {

template <typename T>
class Tape;

template <typename T>
struct Var {
    Tape<T>* tape = nullptr;
    int32_t id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
    const Tensor<T>& value() const;
    const Shape& shape() const { return value().shape(); }
};

namespace detail {

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
    Shape out;
    out.rank = std::max(a.rank, b.rank);
    for (int i = 0; i < out.rank; ++i) {
        const int ia = a.rank - out.rank + i;
        const int ib = b.rank - out.rank + i;
        const int64_t da = ia >= 0 ? a[ia] : 1;
        const int64_t db = ib >= 0 ? b[ib] : 1;
        if (da != db && da != 1 && db != 1)
            throw std::invalid_argument(std::string(op) + ": shapes do not broadcast, " + a.str() +
                                        " vs " + b.str());
        out[i] = std::max(da, db);
    }
    return out;
}

// Strides of `s` when broadcast against shape `out` (0 on expanded dims).
inline std::array<int64_t, 4> broadcast_strides(const Shape& s, const Shape& out) {
    std::array<int64_t, 4> st{0, 0, 0, 0};
    int64_t acc = 1;
    std::array<int64_t, 4> natural{0, 0, 0, 0};
    for (int i = s.rank - 1; i >= 0; --i) {
        natural[i] = acc;
        acc *= s[i];
    }
    for (int i = 0; i < out.rank; ++i) {
        const int is = s.rank - out.rank + i;
        st[i] = (is >= 0 && s[is] != 1) ? natural[is] : 0;
    }
    return st;
}

template <typename T, typename F>
Tensor<T> broadcast_zip(const Tensor<T>& a, const Tensor<T>& b, const char* op, F f) {
    if (a.shape() == b.shape()) {
        Tensor<T> out{a.shape()};
        kern::zip(a.data(), b.data(), out.data(), a.numel(), f);
        return out;
    }
    if (b.numel() == 1) {
        Tensor<T> out{a.shape()};
        const T bv = b[0];
        kern::map(a.data(), out.data(), a.numel(), [f, bv](T x) { return f(x, bv); });
        return out;
    }
    if (a.numel() == 1) {
        Tensor<T> out{b.shape()};
        const T av = a[0];
        kern::map(b.data(), out.data(), b.numel(), [f, av](T x) { return f(av, x); });
        return out;
    }
    const Shape os = broadcast_shape(a.shape(), b.shape(), op);
    Tensor<T> out{os};
    const auto sa = broadcast_strides(a.shape(), os);
    const auto sb = broadcast_strides(b.shape(), os);
    std::array<int64_t, 4> od{1, 1, 1, 1};
    for (int i = 0; i < os.rank; ++i) od[i] = os[i];
    int64_t flat = 0;
    for (int64_t i0 = 0; i0 < od[0]; ++i0)
        for (int64_t i1 = 0; i1 < od[1]; ++i1)
            for (int64_t i2 = 0; i2 < od[2]; ++i2)
                for (int64_t i3 = 0; i3 < od[3]; ++i3) {
                    const int64_t ia = i0 * sa[0] + i1 * sa[1] + i2 * sa[2] + i3 * sa[3];
                    const int64_t ib = i0 * sb[0] + i1 * sb[1] + i2 * sb[2] + i3 * sb[3];
                    out[flat++] = f(a[ia], b[ib]);
                }
    return out;
}

// Sum `g` down to `target` shape (inverse of broadcasting).
template <typename T>
Tensor<T> reduce_to(const Tensor<T>& g, const Shape& target) {
    if (g.shape() == target) return g;
    Tensor<T> out{target};
    if (target.numel() == 1) {
        out[0] = kern::sum(g.data(), g.numel());
        return out;
    }
    const auto st = broadcast_strides(target, g.shape());
    std::array<int64_t, 4> gd{1, 1, 1, 1};
    for (int i = 0; i < g.shape().rank; ++i) gd[i] = g.shape()[i];
    int64_t flat = 0;
    for (int64_t i0 = 0; i0 < gd[0]; ++i0)
        for (int64_t i1 = 0; i1 < gd[1]; ++i1)
            for (int64_t i2 = 0; i2 < gd[2]; ++i2)
                for (int64_t i3 = 0; i3 < gd[3]; ++i3) {
                    const int64_t it = i0 * st[0] + i1 * st[1] + i2 * st[2] + i3 * st[3];
                    out[it] += g[flat++];
                }
    return out;
}

template <typename T>
bool has_nan(const Tensor<T>& t) {
    const T* p = t.data();
    for (int64_t i = 0; i < t.numel(); ++i)
        if (std::isnan(static_cast<double>(p[i]))) return true;
    return false;
}

} // namespace detail

template <typename T>
class Tape {
public:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        bool requires_grad = false;
        bool grad_live = false;
        const char* tag = "leaf";
        std::function<void(Tape&, int32_t)> backward;
    };

    explicit Tape(bool nan_check = false) : nan_check_(nan_check) {}

    Var<T> leaf(Tensor<T> v, bool requires_grad) {
        Node n;
        n.value = std::move(v);
        n.requires_grad = requires_grad;
        nodes_.push_back(std::move(n));
        return Var<T>{this, static_cast<int32_t>(nodes_.size() - 1)};
    }

    Var<T> record(Tensor<T> value, const char* tag, std::initializer_list<Var<T>> parents,
                  std::function<void(Tape&, int32_t)> backward) {
        bool needs = false;
        for (const Var<T>& p : parents) {
            if (p.tape != this) throw std::logic_error("op on foreign tape");
            needs = needs || nodes_[p.id].requires_grad;
        }
        return record_impl(std::move(value), tag, needs, std::move(backward));
    }

    Var<T> record_multi(Tensor<T> value, const char* tag, const std::vector<Var<T>>& parents,
                        std::function<void(Tape&, int32_t)> backward) {
        bool needs = false;
        for (const Var<T>& p : parents) {
            if (p.tape != this) throw std::logic_error("op on foreign tape");
            needs = needs || nodes_[p.id].requires_grad;
        }
        return record_impl(std::move(value), tag, needs, std::move(backward));
    }

    const Tensor<T>& value(Var<T> v) const { return nodes_[v.id].value; }

    // Zero until backward() has run and the node both requires grad and is
    // reachable from the root.
    Tensor<T> grad(Var<T> v) const {
        const Node& n = nodes_[v.id];
        if (!n.requires_grad || !n.grad_live) return Tensor<T>{n.value.shape()};
        return n.grad;
    }

    Tensor<T>& grad_buffer(int32_t id) {
        Node& n = nodes_[id];
        if (!n.grad_live) {
            n.grad = Tensor<T>{n.value.shape()};
            n.grad_live = true;
        }
        return n.grad;
    }

    void accumulate(int32_t id, const Tensor<T>& g) {
        Node& n = nodes_[id];
        if (!n.requires_grad) return; // constants don't collect gradients
        const Tensor<T> r = detail::reduce_to(g, n.value.shape());
        Tensor<T>& buf = grad_buffer(id);
        T* d = buf.data();
        const T* s = r.data();
        for (int64_t i = 0; i < buf.numel(); ++i) d[i] += s[i];
    }

    void backward(Var<T> root) {
        if (root.tape != this) throw std::logic_error("backward: root on foreign tape");
        if (backward_done_)
            throw std::logic_error("backward: tape already differentiated; record a new forward pass");
        if (nodes_[root.id].value.numel() != 1)
            throw std::invalid_argument("backward: root is not scalar, shape " +
                                        nodes_[root.id].value.shape().str());
        backward_done_ = true;
        if (!nodes_[root.id].requires_grad) return;
        grad_buffer(root.id)[0] = T(1);
        for (int32_t i = root.id; i >= 0; --i) {
            Node& n = nodes_[i];
            if (!n.grad_live || !n.backward) continue;
            n.backward(*this, i);
        }
    }

    bool differentiated() const { return backward_done_; }
    size_t size() const { return nodes_.size(); }
    bool nan_check() const { return nan_check_; }

private:
    Var<T> record_impl(Tensor<T> value, const char* tag, bool needs,
                       std::function<void(Tape&, int32_t)> backward) {
        if (nan_check_ && detail::has_nan(value))
            throw std::runtime_error(std::string("NaN produced by op '") + tag + "'");
        Node n;
        n.value = std::move(value);
        n.requires_grad = needs;
        n.tag = tag;
        if (needs) n.backward = std::move(backward);
        nodes_.push_back(std::move(n));
        return Var<T>{this, static_cast<int32_t>(nodes_.size() - 1)};
    }

    std::vector<Node> nodes_;
    bool nan_check_ = false;
    bool backward_done_ = false;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
    return tape->value(*this);
}

// ---- elementwise binary ----

template <typename T, typename FwdF>
Var<T> binary_op(Var<T> a, Var<T> b, const char* tag, FwdF f,
                 std::function<void(Tape<T>&, int32_t, int32_t, int32_t)> back) {
    Tensor<T> out = detail::broadcast_zip(a.value(), b.value(), tag, f);
    const int32_t ia = a.id, ib = b.id;
    return a.tape->record(std::move(out), tag, {a, b},
                          [ia, ib, back](Tape<T>& t, int32_t self) { back(t, self, ia, ib); });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
    return binary_op<T>(
        a, b, "add", [](T x, T y) { return x + y; },
        [](Tape<T>& t, int32_t self, int32_t ia, int32_t ib) {
            const Tensor<T>& g = t.grad_buffer(self);
            t.accumulate(ia, g);
            t.accumulate(ib, g);
        });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
    return binary_op<T>(
        a, b, "sub", [](T x, T y) { return x - y; },
        [](Tape<T>& t, int32_t self, int32_t ia, int32_t ib) {
            const Tensor<T>& g = t.grad_buffer(self);
            t.accumulate(ia, g);
            Tensor<T> gneg{g.shape()};
            kern::map(g.data(), gneg.data(), g.numel(), [](T x) { return -x; });
            t.accumulate(ib, gneg);
        });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
    return binary_op<T>(
        a, b, "mul", [](T x, T y) { return x * y; },
        [](Tape<T>& t, int32_t self, int32_t ia, int32_t ib) {
            const Tensor<T>& g = t.grad_buffer(self);
            t.accumulate(ia, detail::broadcast_zip(g, t.value(Var<T>{&t, ib}), "mul_bwd",
                                                   [](T x, T y) { return x * y; }));
            t.accumulate(ib, detail::broadcast_zip(g, t.value(Var<T>{&t, ia}), "mul_bwd",
                                                   [](T x, T y) { return x * y; }));
        });
}

template <typename T>
Var<T> div(Var<T> a, Var<T> b) {
    return binary_op<T>(
        a, b, "div", [](T x, T y) { return x / y; },
        [](Tape<T>& t, int32_t self, int32_t ia, int32_t ib) {
            const Tensor<T>& g = t.grad_buffer(self);
            const Tensor<T>& av = t.value(Var<T>{&t, ia});
            const Tensor<T>& bv = t.value(Var<T>{&t, ib});
            t.accumulate(ia,
                         detail::broadcast_zip(g, bv, "div_bwd", [](T x, T y) { return x / y; }));
            Tensor<T> gb = detail::broadcast_zip(g, av, "div_bwd", [](T x, T y) { return x * y; });
            Tensor<T> b2 = detail::broadcast_zip(bv, bv, "div_bwd", [](T x, T y) { return x * y; });
            t.accumulate(ib, detail::broadcast_zip(gb, b2, "div_bwd",
                                                   [](T x, T y) { return -x / y; }));
        });
}

// ---- elementwise unary ----

template <typename T, typename FwdF, typename BwdF>
Var<T> unary_op(Var<T> x, const char* tag, FwdF f, BwdF dfdx_times_g) {
    Tensor<T> out{x.value().shape()};
    kern::map(x.value().data(), out.data(), out.numel(), f);
    const int32_t ix = x.id;
    return x.tape->record(std::move(out), tag, {x},
                          [ix, dfdx_times_g](Tape<T>& t, int32_t self) {
                              const Tensor<T>& g = t.grad_buffer(self);
                              const Tensor<T>& xv = t.value(Var<T>{&t, ix});
                              Tensor<T> gx{xv.shape()};
                              kern::zip(g.data(), xv.data(), gx.data(), gx.numel(), dfdx_times_g);
                              t.accumulate(ix, gx);
                          });
}

template <typename T>
Var<T> relu(Var<T> x) {
    return unary_op<T>(
        x, "relu", [](T v) { return v > T(0) ? v : T(0); },
        [](T g, T v) { return v > T(0) ? g : T(0); });
}

template <typename T>
Var<T> square(Var<T> x) {
    return unary_op<T>(
        x, "square", [](T v) { return v * v; }, [](T g, T v) { return T(2) * v * g; });
}

// Subgradient 0 at the kink.
template <typename T>
Var<T> abs_(Var<T> x) {
    return unary_op<T>(
        x, "abs", [](T v) { return v < T(0) ? -v : v; },
        [](T g, T v) { return v > T(0) ? g : (v < T(0) ? -g : T(0)); });
}

template <typename T>
Var<T> exp_(Var<T> x) {
    return unary_op<T>(
        x, "exp", [](T v) { return std::exp(v); },
        [](T g, T v) { return g * std::exp(v); });
}

template <typename T>
Var<T> log_(Var<T> x) {
    return unary_op<T>(
        x, "log", [](T v) { return std::log(v); }, [](T g, T v) { return g / v; });
}

template <typename T>
Var<T> neg(Var<T> x) {
    return unary_op<T>(
        x, "neg", [](T v) { return -v; }, [](T g, T) { return -g; });
}

// Backward at 0 is an error; the only legitimate callers keep the argument
// strictly positive (Charbonnier epsilon, stabilized SSIM denominators).
template <typename T>
Var<T> sqrt_(Var<T> x) {
    Tensor<T> out{x.value().shape()};
    kern::map(x.value().data(), out.data(), out.numel(), [](T v) { return std::sqrt(v); });
    const int32_t ix = x.id;
    return x.tape->record(std::move(out), "sqrt", {x}, [ix](Tape<T>& t, int32_t self) {
        const Tensor<T>& g = t.grad_buffer(self);
        const Tensor<T>& xv = t.value(Var<T>{&t, ix});
        Tensor<T> gx{xv.shape()};
        for (int64_t i = 0; i < gx.numel(); ++i) {
            if (xv[i] <= T(0))
                throw std::domain_error("sqrt backward at non-positive argument");
            gx[i] = g[i] / (T(2) * std::sqrt(xv[i]));
        }
        t.accumulate(ix, gx);
    });
}

// a*x + b with compile-time constants (not differentiated through a, b).
template <typename T>
Var<T> affine(Var<T> x, T a, T b) {
    return unary_op<T>(
        x, "affine", [a, b](T v) { return a * v + b; }, [a](T g, T) { return a * g; });
}

// ---- reductions ----

template <typename T>
Var<T> sum_all(Var<T> x) {
    Tensor<T> out = Tensor<T>::scalar(kern::sum(x.value().data(), x.value().numel()));
    const int32_t ix = x.id;
    return x.tape->record(std::move(out), "sum", {x}, [ix](Tape<T>& t, int32_t self) {
        const T g = t.grad_buffer(self)[0];
        const Tensor<T>& xv = t.value(Var<T>{&t, ix});
        Tensor<T> gx{xv.shape(), g};
        t.accumulate(ix, gx);
    });
}

template <typename T>
Var<T> mean_all(Var<T> x) {
    const int64_t n = x.value().numel();
    Tensor<T> out =
        Tensor<T>::scalar(kern::sum(x.value().data(), n) / static_cast<T>(n));
    const int32_t ix = x.id;
    return x.tape->record(std::move(out), "mean", {x}, [ix, n](Tape<T>& t, int32_t self) {
        const T g = t.grad_buffer(self)[0] / static_cast<T>(n);
        Tensor<T> gx{t.value(Var<T>{&t, ix}).shape(), g};
        t.accumulate(ix, gx);
    });
}

// ---- matmul (rank-2) ----

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
    const Tensor<T>& av = a.value();
    const Tensor<T>& bv = b.value();
    if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0))
        throw std::invalid_argument("matmul: incompatible shapes " + av.shape().str() + " vs " +
                                    bv.shape().str());
    const int64_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    Tensor<T> out{Shape{m, n}};
    kern::gemm(av.data(), bv.data(), out.data(), m, k, n);
    const int32_t ia = a.id, ib = b.id;
    return a.tape->record(std::move(out), "matmul", {a, b},
                          [ia, ib, m, k, n](Tape<T>& t, int32_t self) {
        const Tensor<T>& g = t.grad_buffer(self);
        const Tensor<T>& av2 = t.value(Var<T>{&t, ia});
        const Tensor<T>& bv2 = t.value(Var<T>{&t, ib});
        // dA = g * B^T
        Tensor<T> bT{Shape{n, k}};
        kern::transpose(bv2.data(), bT.data(), k, n);
        Tensor<T> da{Shape{m, k}};
        kern::gemm(g.data(), bT.data(), da.data(), m, n, k);
        t.accumulate(ia, da);
        // dB = A^T * g
        Tensor<T> aT{Shape{k, m}};
        kern::transpose(av2.data(), aT.data(), m, k);
        Tensor<T> db{Shape{k, n}};
        kern::gemm(aT.data(), g.data(), db.data(), k, m, n);
        t.accumulate(ib, db);
    });
}

// ---- shape ops ----

template <typename T>
Var<T> reshape(Var<T> x, Shape s) {
    const Tensor<T>& xv = x.value();
    if (s.numel() != xv.numel())
        throw std::invalid_argument("reshape: element count mismatch " + xv.shape().str() + " -> " +
                                    s.str());
    Tensor<T> out{s, std::vector<T>(xv.data(), xv.data() + xv.numel())};
    const int32_t ix = x.id;
    return x.tape->record(std::move(out), "reshape", {x}, [ix](Tape<T>& t, int32_t self) {
        const Tensor<T>& g = t.grad_buffer(self);
        const Shape xs = t.value(Var<T>{&t, ix}).shape();
        Tensor<T> gx{xs, std::vector<T>(g.data(), g.data() + g.numel())};
        t.accumulate(ix, gx);
    });
}

// Crop rows/cols of an (H, W, C) tensor.
template <typename T>
Var<T> crop2d(Var<T> x, int64_t r0, int64_t c0, int64_t h, int64_t w) {
    const Tensor<T>& xv = x.value();
    if (xv.rank() != 3) throw std::invalid_argument("crop2d: expects rank-3, got " + xv.shape().str());
    const int64_t H = xv.dim(0), W = xv.dim(1), C = xv.dim(2);
    if (r0 < 0 || c0 < 0 || r0 + h > H || c0 + w > W)
        throw std::invalid_argument("crop2d: window out of bounds");
    Tensor<T> out{Shape{h, w, C}};
    for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j)
            for (int64_t c = 0; c < C; ++c) out.at(i, j, c) = xv.at(r0 + i, c0 + j, c);
    const int32_t ix = x.id;
    return x.tape->record(std::move(out), "crop2d", {x},
                          [ix, r0, c0, h, w, C](Tape<T>& t, int32_t self) {
        const Tensor<T>& g = t.grad_buffer(self);
        Tensor<T>& gx = t.grad_buffer(ix);
        for (int64_t i = 0; i < h; ++i)
            for (int64_t j = 0; j < w; ++j)
                for (int64_t c = 0; c < C; ++c) gx.at(r0 + i, c0 + j, c) += g.at(i, j, c);
    });
}

// Select one channel of an (H, W, C) tensor -> (H, W, 1).
template <typename T>
Var<T> channel_select(Var<T> x, int64_t ch) {
    const Tensor<T>& xv = x.value();
    if (xv.rank() != 3 || ch < 0 || ch >= xv.dim(2))
        throw std::invalid_argument("channel_select: bad channel for " + xv.shape().str());
    const int64_t H = xv.dim(0), W = xv.dim(1), C = xv.dim(2);
    Tensor<T> out{Shape{H, W, 1}};
    for (int64_t i = 0; i < H * W; ++i) out[i] = xv[i * C + ch];
    const int32_t ix = x.id;
    return x.tape->record(std::move(out), "channel_select", {x},
                          [ix, ch, H, W, C](Tape<T>& t, int32_t self) {
        const Tensor<T>& g = t.grad_buffer(self);
        Tensor<T>& gx = t.grad_buffer(ix);
        for (int64_t i = 0; i < H * W; ++i) gx[i * C + ch] += g[i];
    });
}

// Column-wise concatenation of rank-2 tensors with equal row counts.
template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& xs) {
    if (xs.empty()) throw std::invalid_argument("concat_cols: empty input");
    Tape<T>* tape = xs[0].tape;
    const int64_t rows = xs[0].value().dim(0);
    int64_t cols = 0;
    for (const Var<T>& v : xs) {
        if (v.tape != tape) throw std::logic_error("concat_cols: mixed tapes");
        if (v.value().rank() != 2 || v.value().dim(0) != rows)
            throw std::invalid_argument("concat_cols: row mismatch");
        cols += v.value().dim(1);
    }
    Tensor<T> out{Shape{rows, cols}};
    int64_t off = 0;
    for (const Var<T>& v : xs) {
        const Tensor<T>& x = v.value();
        const int64_t c = x.dim(1);
        for (int64_t i = 0; i < rows; ++i)
            std::copy(x.data() + i * c, x.data() + (i + 1) * c, out.data() + i * cols + off);
        off += c;
    }
    std::vector<int32_t> ids;
    std::vector<int64_t> widths;
    for (const Var<T>& v : xs) {
        ids.push_back(v.id);
        widths.push_back(v.value().dim(1));
    }
    Var<T> result = tape->record_multi(
        std::move(out), "concat", xs,
        [ids, widths, rows, cols](Tape<T>& t, int32_t self) {
            const Tensor<T>& g = t.grad_buffer(self);
            int64_t off2 = 0;
            for (size_t s = 0; s < ids.size(); ++s) {
                const int64_t c = widths[s];
                Tensor<T> gs{Shape{rows, c}};
                for (int64_t i = 0; i < rows; ++i)
                    std::copy(g.data() + i * cols + off2, g.data() + i * cols + off2 + c,
                              gs.data() + i * c);
                t.accumulate(ids[s], gs);
                off2 += c;
            }
        });
    return result;
}

// ---- 2x2 decimating stencil (one wavelet analysis filter) ----
// out[i,j,c] = c00*x[2i,2j,c] + c01*x[2i,2j+1,c] + c10*x[2i+1,2j,c] + c11*x[2i+1,2j+1,c]

template <typename T>
Var<T> stencil2x2(Var<T> x, T c00, T c01, T c10, T c11) {
    const Tensor<T>& xv = x.value();
    if (xv.rank() != 3) throw std::invalid_argument("stencil2x2: expects rank-3");
    const int64_t H = xv.dim(0), W = xv.dim(1), C = xv.dim(2);
    if (H % 2 != 0 || W % 2 != 0)
        throw std::invalid_argument("stencil2x2: odd dimension " + xv.shape().str() +
                                    "; crop the input to even dims");
    const int64_t h = H / 2, w = W / 2;
    Tensor<T> out{Shape{h, w, C}};
    const T* xp = xv.data();
    T* op = out.data();
    const int nt = kern::exec().threads;
#ifdef _OPENMP
#pragma omp parallel for num_threads(nt) schedule(static) if (nt > 1 && h * w * C > 4096)
#endif
    for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j)
            for (int64_t c = 0; c < C; ++c) {
                const int64_t r = 2 * i * W * C + 2 * j * C + c;
                op[(i * w + j) * C + c] =
                    c00 * xp[r] + c01 * xp[r + C] + c10 * xp[r + W * C] + c11 * xp[r + W * C + C];
            }
    (void)nt;
    const int32_t ix = x.id;
    return x.tape->record(std::move(out), "stencil2x2", {x},
                          [ix, c00, c01, c10, c11, h, w, W, C](Tape<T>& t, int32_t self) {
        const Tensor<T>& g = t.grad_buffer(self);
        Tensor<T>& gx = t.grad_buffer(ix);
        const T* gp = g.data();
        T* xp2 = gx.data();
        // 2x2 blocks are disjoint: scatter without collisions.
        for (int64_t i = 0; i < h; ++i)
            for (int64_t j = 0; j < w; ++j)
                for (int64_t c = 0; c < C; ++c) {
                    const T gv = gp[(i * w + j) * C + c];
                    const int64_t r = 2 * i * W * C + 2 * j * C + c;
                    xp2[r] += c00 * gv;
                    xp2[r + C] += c01 * gv;
                    xp2[r + W * C] += c10 * gv;
                    xp2[r + W * C + C] += c11 * gv;
                }
    });
}

// ---- bilinear gather ----
// Gathers rows of a (cells, F) table: out[q, :] = sum_t w[q][t] * table[idx[q][t], :].
// Query positions are fixed sample points; only the table is differentiated.

template <typename T>
struct GatherPlan {
    std::vector<int32_t> idx; // 4 per query
    std::vector<T> w;         // 4 per query
    int64_t queries = 0;
};

template <typename T>
Var<T> gather_bilinear(Var<T> table, std::shared_ptr<const GatherPlan<T>> plan) {
    const Tensor<T>& tv = table.value();
    if (tv.rank() != 2) throw std::invalid_argument("gather_bilinear: table must be rank-2");
    const int64_t F = tv.dim(1);
    const int64_t q = plan->queries;
    Tensor<T> out{Shape{q, F}};
    const T* tp = tv.data();
    T* op = out.data();
    const int nt = kern::exec().threads;
#ifdef _OPENMP
#pragma omp parallel for num_threads(nt) schedule(static) if (nt > 1 && q > 4096)
#endif
    for (int64_t i = 0; i < q; ++i) {
        const int32_t* ix = plan->idx.data() + 4 * i;
        const T* wt = plan->w.data() + 4 * i;
        T* o = op + i * F;
        for (int64_t f = 0; f < F; ++f)
            o[f] = wt[0] * tp[ix[0] * F + f] + wt[1] * tp[ix[1] * F + f] +
                   wt[2] * tp[ix[2] * F + f] + wt[3] * tp[ix[3] * F + f];
    }
    (void)nt;
    const int32_t it = table.id;
    return table.tape->record(std::move(out), "gather_bilinear", {table},
                              [it, plan, F](Tape<T>& t, int32_t self) {
        const Tensor<T>& g = t.grad_buffer(self);
        Tensor<T>& gt = t.grad_buffer(it);
        const T* gp = g.data();
        T* tp2 = gt.data();
        // Serial scatter: queries may hit the same cell, keep one fixed order.
        for (int64_t i = 0; i < plan->queries; ++i) {
            const int32_t* ix = plan->idx.data() + 4 * i;
            const T* wt = plan->w.data() + 4 * i;
            const T* gr = gp + i * F;
            for (int t4 = 0; t4 < 4; ++t4) {
                T* dst = tp2 + ix[t4] * F;
                for (int64_t f = 0; f < F; ++f) dst[f] += wt[t4] * gr[f];
            }
        }
    });
}

// ---- separable 1D convolutions (valid region), fixed kernel ----

template <typename T>
Var<T> conv1d_rows(Var<T> x, std::shared_ptr<const std::vector<T>> k) {
    const Tensor<T>& xv = x.value();
    if (xv.rank() != 2) throw std::invalid_argument("conv1d_rows: expects rank-2");
    const int64_t H = xv.dim(0), W = xv.dim(1);
    const int64_t K = static_cast<int64_t>(k->size());
    if (W < K) throw std::invalid_argument("conv1d_rows: kernel wider than input");
    const int64_t Wo = W - K + 1;
    Tensor<T> out{Shape{H, Wo}};
    const T* xp = xv.data();
    const T* kp = k->data();
    T* op = out.data();
    const int nt = kern::exec().threads;
#ifdef _OPENMP
#pragma omp parallel for num_threads(nt) schedule(static) if (nt > 1 && H > 8)
#endif
    for (int64_t i = 0; i < H; ++i)
        for (int64_t j = 0; j < Wo; ++j) {
            T acc(0);
            for (int64_t t = 0; t < K; ++t) acc += kp[t] * xp[i * W + j + t];
            op[i * Wo + j] = acc;
        }
    (void)nt;
    const int32_t ix = x.id;
    return x.tape->record(std::move(out), "conv1d_rows", {x},
                          [ix, k, H, W, Wo, K](Tape<T>& t, int32_t self) {
        const Tensor<T>& g = t.grad_buffer(self);
        Tensor<T>& gx = t.grad_buffer(ix);
        const T* gp = g.data();
        const T* kp2 = k->data();
        T* xp2 = gx.data();
        for (int64_t i = 0; i < H; ++i)
            for (int64_t jj = 0; jj < W; ++jj) {
                T acc(0);
                const int64_t tlo = std::max<int64_t>(0, jj - (Wo - 1));
                const int64_t thi = std::min<int64_t>(K - 1, jj);
                for (int64_t tk = tlo; tk <= thi; ++tk) acc += kp2[tk] * gp[i * Wo + (jj - tk)];
                xp2[i * W + jj] += acc;
            }
    });
}

template <typename T>
Var<T> conv1d_cols(Var<T> x, std::shared_ptr<const std::vector<T>> k) {
    const Tensor<T>& xv = x.value();
    if (xv.rank() != 2) throw std::invalid_argument("conv1d_cols: expects rank-2");
    const int64_t H = xv.dim(0), W = xv.dim(1);
    const int64_t K = static_cast<int64_t>(k->size());
    if (H < K) throw std::invalid_argument("conv1d_cols: kernel taller than input");
    const int64_t Ho = H - K + 1;
    Tensor<T> out{Shape{Ho, W}};
    const T* xp = xv.data();
    const T* kp = k->data();
    T* op = out.data();
    const int nt = kern::exec().threads;
#ifdef _OPENMP
#pragma omp parallel for num_threads(nt) schedule(static) if (nt > 1 && Ho > 8)
#endif
    for (int64_t i = 0; i < Ho; ++i)
        for (int64_t j = 0; j < W; ++j) {
            T acc(0);
            for (int64_t t = 0; t < K; ++t) acc += kp[t] * xp[(i + t) * W + j];
            op[i * W + j] = acc;
        }
    (void)nt;
    const int32_t ix = x.id;
    return x.tape->record(std::move(out), "conv1d_cols", {x},
                          [ix, k, H, W, Ho, K](Tape<T>& t, int32_t self) {
        const Tensor<T>& g = t.grad_buffer(self);
        Tensor<T>& gx = t.grad_buffer(ix);
        const T* gp = g.data();
        const T* kp2 = k->data();
        T* xp2 = gx.data();
        for (int64_t ii = 0; ii < H; ++ii)
            for (int64_t j = 0; j < W; ++j) {
                T acc(0);
                const int64_t tlo = std::max<int64_t>(0, ii - (Ho - 1));
                const int64_t thi = std::min<int64_t>(K - 1, ii);
                for (int64_t tk = tlo; tk <= thi; ++tk) acc += kp2[tk] * gp[(ii - tk) * W + j];
                xp2[ii * W + j] += acc;
            }
    });
}

// ---- operator sugar ----

template <typename T> Var<T> operator+(Var<T> a, Var<T> b) { return add(a, b); }
template <typename T> Var<T> operator-(Var<T> a, Var<T> b) { return sub(a, b); }
template <typename T> Var<T> operator*(Var<T> a, Var<T> b) { return mul(a, b); }
template <typename T> Var<T> operator/(Var<T> a, Var<T> b) { return div(a, b); }

template <typename T>
Var<T> constant(Tape<T>& tape, Tensor<T> v) {
    return tape.leaf(std::move(v), false);
}

template <typename T>
Var<T> constant_scalar(Tape<T>& tape, T v) {
    return tape.leaf(Tensor<T>::scalar(v), false);
}

// ---- finite-difference oracle ----
//
// Builds the function twice per coordinate (central differences) and compares
// against the gradients produced by one backward pass.

template <typename T>
struct GradCheckReport {
    double max_rel_err = 0.0;
    int64_t worst_param = -1;
    int64_t worst_coord = -1;
};

template <typename T>
GradCheckReport<T> grad_check(
    const std::function<Var<T>(Tape<T>&, std::vector<Var<T>>&)>& build,
    std::vector<Tensor<T>> point, T h) {
    if (h <= T(0)) throw std::invalid_argument("grad_check: step must be positive");

    auto eval = [&](const std::vector<Tensor<T>>& p) -> T {
        Tape<T> tape;
        std::vector<Var<T>> leaves;
        leaves.reserve(p.size());
        for (const Tensor<T>& t : p) leaves.push_back(tape.leaf(t, false));
        Var<T> root = build(tape, leaves);
        return root.value().value();
    };

    // Analytic gradients.
    Tape<T> tape;
    std::vector<Var<T>> leaves;
    for (const Tensor<T>& t : point) leaves.push_back(tape.leaf(t, true));
    Var<T> root = build(tape, leaves);
    tape.backward(root);
    std::vector<Tensor<T>> analytic;
    for (const Var<T>& v : leaves) analytic.push_back(tape.grad(v));

    GradCheckReport<T> rep;
    for (size_t p = 0; p < point.size(); ++p) {
        for (int64_t i = 0; i < point[p].numel(); ++i) {
            const T orig = point[p][i];
            point[p][i] = orig + h;
            const T fp = eval(point);
            point[p][i] = orig - h;
            const T fm = eval(point);
            point[p][i] = orig;
            if (std::isnan(static_cast<double>(fp)) || std::isnan(static_cast<double>(fm)))
                throw std::runtime_error("grad_check: NaN at perturbed coordinate param " +
                                         std::to_string(p) + " index " + std::to_string(i));
            const double fd = (static_cast<double>(fp) - static_cast<double>(fm)) /
                              (2.0 * static_cast<double>(h));
            const double an = static_cast<double>(analytic[p][i]);
            const double rel = std::abs(an - fd) / (std::abs(an) + std::abs(fd) + 1e-12);
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst_param = static_cast<int64_t>(p);
                rep.worst_coord = i;
            }
        }
    }
    return rep;
}

} // namespace duofit::ag
