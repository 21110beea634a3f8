#pragma once

// Orthonormal Haar analysis/synthesis on (H, W, C) planes. Subband letters
// name the filter along width first, then height: HL is high-pass across
// columns, low-pass across rows. For the 2x2 block [[a, b], [c, d]] one level
// produces
//   LL = (a+b+c+d)/2   HL = (-a+b-c+d)/2
//   LH = (-a-b+c+d)/2  HH = (a-b-c+d)/2
// so [[1,2],[3,4]] -> LL=5, HL=1, LH=2, HH=0. Synthesis is the transpose and
// reconstruction is exact; total energy is preserved (orthonormal basis).

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

#include "duofit/autograd.hpp"
#include "duofit/tensor.hpp"

namespace duofit::wav {

// Analysis stencil coefficients (c00, c01, c10, c11) per subband.
template <typename T>
constexpr std::array<T, 4> kLL{T(0.5), T(0.5), T(0.5), T(0.5)};
template <typename T>
constexpr std::array<T, 4> kHL{T(-0.5), T(0.5), T(-0.5), T(0.5)};
template <typename T>
constexpr std::array<T, 4> kLH{T(-0.5), T(-0.5), T(0.5), T(0.5)};
template <typename T>
constexpr std::array<T, 4> kHH{T(0.5), T(-0.5), T(-0.5), T(0.5)};

template <typename T>
struct Subbands {
    Tensor<T> ll, lh, hl, hh;
};

template <typename T>
struct Pyramid {
    // ll[s] and details[s] live at resolution H/2^(s+1); ll.back() is the
    // coarsest approximation used for reconstruction.
    std::vector<Tensor<T>> ll;
    std::vector<Subbands<T>> details; // lh/hl/hh filled, ll left empty
    int levels = 0;
};

namespace detail {

template <typename T>
Tensor<T> apply_stencil(const Tensor<T>& x, const std::array<T, 4>& c) {
    const int64_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
    const int64_t h = H / 2, w = W / 2;
    Tensor<T> out{Shape{h, w, C}};
    const T* xp = x.data();
    T* op = out.data();
    for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j)
            for (int64_t ch = 0; ch < C; ++ch) {
                const int64_t r = 2 * i * W * C + 2 * j * C + ch;
                op[(i * w + j) * C + ch] =
                    c[0] * xp[r] + c[1] * xp[r + C] + c[2] * xp[r + W * C] + c[3] * xp[r + W * C + C];
            }
    return out;
}

template <typename T>
void check_even(const Tensor<T>& x, const char* who) {
    if (x.rank() != 3)
        throw std::invalid_argument(std::string(who) + ": expects (H, W, C), got " +
                                    x.shape().str());
    if (x.dim(0) % 2 != 0 || x.dim(1) % 2 != 0)
        throw std::invalid_argument(std::string(who) + ": odd dimension in " + x.shape().str() +
                                    "; crop to even size first");
}

} // namespace detail

template <typename T>
Subbands<T> dwt_level(const Tensor<T>& x) {
    detail::check_even(x, "dwt_level");
    return Subbands<T>{detail::apply_stencil(x, kLL<T>), detail::apply_stencil(x, kLH<T>),
                       detail::apply_stencil(x, kHL<T>), detail::apply_stencil(x, kHH<T>)};
}

template <typename T>
Tensor<T> idwt_level(const Tensor<T>& ll, const Tensor<T>& lh, const Tensor<T>& hl,
                     const Tensor<T>& hh) {
    if (!(ll.shape() == lh.shape() && ll.shape() == hl.shape() && ll.shape() == hh.shape()))
        throw std::invalid_argument("idwt_level: subband shape mismatch");
    const int64_t h = ll.dim(0), w = ll.dim(1), C = ll.dim(2);
    Tensor<T> out{Shape{2 * h, 2 * w, C}};
    T* op = out.data();
    const int64_t W = 2 * w;
    for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j)
            for (int64_t ch = 0; ch < C; ++ch) {
                const T a = ll.at(i, j, ch), bq = hl.at(i, j, ch), cq = lh.at(i, j, ch),
                        dq = hh.at(i, j, ch);
                const int64_t r = 2 * i * W * C + 2 * j * C + ch;
                op[r] = (a - bq - cq + dq) / T(2);
                op[r + C] = (a + bq - cq - dq) / T(2);
                op[r + W * C] = (a - bq + cq - dq) / T(2);
                op[r + W * C + C] = (a + bq + cq + dq) / T(2);
            }
    return out;
}

template <typename T>
Pyramid<T> decompose(const Tensor<T>& x, int levels) {
    if (levels < 1) throw std::invalid_argument("decompose: levels must be >= 1");
    const int64_t div = int64_t(1) << levels;
    if (x.rank() != 3 || x.dim(0) % div != 0 || x.dim(1) % div != 0)
        throw std::invalid_argument("decompose: " + x.shape().str() + " not divisible by 2^" +
                                    std::to_string(levels));
    Pyramid<T> pyr;
    pyr.levels = levels;
    Tensor<T> cur = x;
    for (int s = 0; s < levels; ++s) {
        Subbands<T> sb = dwt_level(cur);
        cur = sb.ll;
        pyr.ll.push_back(sb.ll);
        sb.ll = Tensor<T>{};
        pyr.details.push_back(std::move(sb));
    }
    return pyr;
}

template <typename T>
Tensor<T> reconstruct(const Pyramid<T>& pyr) {
    if (pyr.levels < 1 || pyr.ll.empty()) throw std::invalid_argument("reconstruct: empty pyramid");
    Tensor<T> cur = pyr.ll.back();
    for (int s = pyr.levels - 1; s >= 0; --s)
        cur = idwt_level(cur, pyr.details[s].lh, pyr.details[s].hl, pyr.details[s].hh);
    return cur;
}

template <typename T>
T energy(const Tensor<T>& x) {
    T acc(0);
    for (int64_t i = 0; i < x.numel(); ++i) acc += x[i] * x[i];
    return acc;
}

// ---- differentiable counterparts ----

template <typename T>
struct SubbandsVar {
    ag::Var<T> ll, lh, hl, hh;
};

template <typename T>
struct PyramidVar {
    std::vector<ag::Var<T>> ll;
    std::vector<SubbandsVar<T>> details;
    int levels = 0;
};

template <typename T>
SubbandsVar<T> dwt_level_t(ag::Var<T> x) {
    detail::check_even(x.value(), "dwt_level");
    auto apply = [&](const std::array<T, 4>& c) {
        return ag::stencil2x2(x, c[0], c[1], c[2], c[3]);
    };
    return SubbandsVar<T>{apply(kLL<T>), apply(kLH<T>), apply(kHL<T>), apply(kHH<T>)};
}

template <typename T>
PyramidVar<T> decompose_t(ag::Var<T> x, int levels) {
    if (levels < 1) throw std::invalid_argument("decompose: levels must be >= 1");
    const int64_t div = int64_t(1) << levels;
    if (x.value().rank() != 3 || x.value().dim(0) % div != 0 || x.value().dim(1) % div != 0)
        throw std::invalid_argument("decompose: " + x.value().shape().str() +
                                    " not divisible by 2^" + std::to_string(levels));
    PyramidVar<T> pyr;
    pyr.levels = levels;
    ag::Var<T> cur = x;
    for (int s = 0; s < levels; ++s) {
        SubbandsVar<T> sb = dwt_level_t(cur);
        cur = sb.ll;
        pyr.ll.push_back(sb.ll);
        pyr.details.push_back(sb);
    }
    return pyr;
}

} // namespace duofit::wav
