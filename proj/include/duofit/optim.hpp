#pragma once

// Decoupled optimization: orthogonalized momentum for the decoder weight
// matrices, Adam for everything else (grids at one rate, biases and scalars
// at another).

#include <cmath>
#include <stdexcept>
#include <vector>

#include "duofit/config.hpp"
#include "duofit/fields.hpp"
#include "duofit/kernels.hpp"
#include "duofit/tensor.hpp"

namespace duofit::optim {

template <typename T>
double frob_norm(const Tensor<T>& m) {
    double acc = 0;
    for (int64_t i = 0; i < m.numel(); ++i) acc += double(m[i]) * double(m[i]);
    return std::sqrt(acc);
}

// Quintic Newton-Schulz iteration driving singular values toward 1. The
// input is pre-scaled by its Frobenius norm; a zero matrix maps to zero.
template <typename T>
Tensor<T> newton_schulz(const Tensor<T>& m, int steps) {
    if (m.rank() != 2) throw std::invalid_argument("newton_schulz: expects a matrix");
    constexpr double a = 3.4445, b = -4.7750, c = 2.0315;
    const int64_t r = m.dim(0), cdim = m.dim(1);
    const double fn = frob_norm(m);
    if (fn == 0.0) return Tensor<T>{m.shape()};
    Tensor<T> x{m.shape()};
    for (int64_t i = 0; i < m.numel(); ++i) x[i] = static_cast<T>(double(m[i]) / fn);

    Tensor<T> xt{Shape{cdim, r}}, gram{Shape{r, r}}, gram2{Shape{r, r}}, poly{Shape{r, r}},
        px{Shape{r, cdim}};
    for (int it = 0; it < steps; ++it) {
        kern::transpose(x.data(), xt.data(), r, cdim);
        kern::gemm(x.data(), xt.data(), gram.data(), r, cdim, r);
        kern::gemm(gram.data(), gram.data(), gram2.data(), r, r, r);
        for (int64_t i = 0; i < gram.numel(); ++i)
            poly[i] = static_cast<T>(b) * gram[i] + static_cast<T>(c) * gram2[i];
        kern::gemm(poly.data(), x.data(), px.data(), r, r, cdim);
        for (int64_t i = 0; i < x.numel(); ++i) x[i] = static_cast<T>(a) * x[i] + px[i];
    }
    return x;
}

template <typename T>
struct MuonState {
    Tensor<T> buf;
};

template <typename T>
void muon_step(Tensor<T>& param, const Tensor<T>& grad, MuonState<T>& st,
               const TrainConfig& cfg, double lr_scale = 1.0) {
    if (param.rank() != 2)
        throw std::invalid_argument("muon_step: non-matrix parameter routed here");
    if (!(param.shape() == grad.shape()))
        throw std::invalid_argument("muon_step: grad shape mismatch");
    if (!(st.buf.shape() == param.shape())) st.buf = Tensor<T>{param.shape()};
    const T mu = static_cast<T>(cfg.muon_momentum);
    for (int64_t i = 0; i < st.buf.numel(); ++i) st.buf[i] = mu * st.buf[i] + grad[i];
    Tensor<T> dir = st.buf;
    if (cfg.nesterov)
        for (int64_t i = 0; i < dir.numel(); ++i) dir[i] = grad[i] + mu * st.buf[i];
    const Tensor<T> o = newton_schulz(dir, cfg.ns_steps);
    const double shape_scale =
        std::sqrt(std::max(1.0, double(param.dim(0)) / double(param.dim(1))));
    const T step = static_cast<T>(cfg.lr_muon * lr_scale * shape_scale);
    for (int64_t i = 0; i < param.numel(); ++i) param[i] -= step * o[i];
}

template <typename T>
struct AdamState {
    Tensor<T> m, v;
    int64_t t = 0;
};

template <typename T>
void adam_step(Tensor<T>& param, const Tensor<T>& grad, AdamState<T>& st, double lr, double b1,
               double b2, double eps, double lr_scale = 1.0) {
    if (!(param.shape() == grad.shape()))
        throw std::invalid_argument("adam_step: grad shape mismatch");
    if (!(st.m.shape() == param.shape())) {
        st.m = Tensor<T>{param.shape()};
        st.v = Tensor<T>{param.shape()};
    }
    st.t += 1;
    const double bc1 = 1.0 - std::pow(b1, double(st.t));
    const double bc2 = 1.0 - std::pow(b2, double(st.t));
    const double step = lr * lr_scale;
    for (int64_t i = 0; i < param.numel(); ++i) {
        const double g = double(grad[i]);
        const double m = b1 * double(st.m[i]) + (1.0 - b1) * g;
        const double v = b2 * double(st.v[i]) + (1.0 - b2) * g * g;
        st.m[i] = static_cast<T>(m);
        st.v[i] = static_cast<T>(v);
        param[i] -= static_cast<T>(step * (m / bc1) / (std::sqrt(v / bc2) + eps));
    }
}

struct RoutedIndices {
    std::vector<size_t> muon;        // decoder weight matrices
    std::vector<size_t> adam_grid;   // feature grids
    std::vector<size_t> adam_scalar; // biases, beta, log-variances
};

template <typename T>
RoutedIndices route_parameters(const std::vector<fields::ParamRef<T>>& params) {
    RoutedIndices r;
    for (size_t i = 0; i < params.size(); ++i) {
        switch (params[i].kind) {
            case fields::ParamKind::Matrix: r.muon.push_back(i); break;
            case fields::ParamKind::Grid: r.adam_grid.push_back(i); break;
            case fields::ParamKind::Bias:
            case fields::ParamKind::Scalar: r.adam_scalar.push_back(i); break;
            default:
                throw std::logic_error("route_parameters: unrouted parameter " + params[i].name);
        }
    }
    if (r.muon.size() + r.adam_grid.size() + r.adam_scalar.size() != params.size())
        throw std::logic_error("route_parameters: partition is not total");
    return r;
}

} // namespace duofit::optim
