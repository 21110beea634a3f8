#pragma once

// Supervision terms over wavelet pyramids and composed renders, plus the
// uncertainty-weighted aggregate. Everything runs on the tape so gradients
// reach every model parameter, including the log-variances s_k.

#include <cmath>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "duofit/autograd.hpp"
#include "duofit/errors.hpp"
#include "duofit/wavelet.hpp"

namespace duofit::losses {

template <typename T>
struct SsimParams {
    int window = 11;
    double sigma = 1.5;
    double range = 1.0;
};

template <typename T>
std::shared_ptr<const std::vector<T>> gaussian_kernel(int window, double sigma) {
    auto k = std::make_shared<std::vector<T>>(window);
    const double c = (window - 1) / 2.0;
    double s = 0;
    for (int i = 0; i < window; ++i) {
        const double v = std::exp(-(i - c) * (i - c) / (2.0 * sigma * sigma));
        (*k)[i] = static_cast<T>(v);
        s += v;
    }
    for (auto& v : *k) v = static_cast<T>(double(v) / s);
    return k;
}

// Mean SSIM between two rank-2 planes (valid-region Gaussian statistics).
template <typename T>
ag::Var<T> ssim_t(ag::Var<T> a, ag::Var<T> b, const SsimParams<T>& p) {
    if (!(a.shape() == b.shape()))
        throw std::invalid_argument("ssim: shape mismatch " + a.shape().str() + " vs " +
                                    b.shape().str());
    if (a.shape().rank != 2)
        throw std::invalid_argument("ssim: expects rank-2 planes, got " + a.shape().str());
    if (a.shape()[0] < p.window || a.shape()[1] < p.window)
        throw std::invalid_argument("ssim: plane " + a.shape().str() + " smaller than window " +
                                    std::to_string(p.window));
    auto k = gaussian_kernel<T>(p.window, p.sigma);
    auto filt = [&k](ag::Var<T> x) { return ag::conv1d_cols(ag::conv1d_rows(x, k), k); };
    ag::Var<T> mu_a = filt(a);
    ag::Var<T> mu_b = filt(b);
    ag::Var<T> m_a2 = filt(ag::square(a));
    ag::Var<T> m_b2 = filt(ag::square(b));
    ag::Var<T> m_ab = filt(ag::mul(a, b));
    const T c1 = static_cast<T>(0.01 * p.range) * static_cast<T>(0.01 * p.range);
    const T c2 = static_cast<T>(0.03 * p.range) * static_cast<T>(0.03 * p.range);
    ag::Var<T> va = ag::sub(m_a2, ag::square(mu_a));
    ag::Var<T> vb = ag::sub(m_b2, ag::square(mu_b));
    ag::Var<T> cov = ag::sub(m_ab, ag::mul(mu_a, mu_b));
    ag::Var<T> num = ag::mul(ag::affine(ag::mul(mu_a, mu_b), T(2), c1),
                             ag::affine(cov, T(2), c2));
    ag::Var<T> den = ag::mul(ag::affine(ag::add(ag::square(mu_a), ag::square(mu_b)), T(1), c1),
                             ag::affine(ag::add(va, vb), T(1), c2));
    return ag::mean_all(ag::div(num, den));
}

namespace detail {

template <typename T>
void check_conformal(const Shape& a, const Shape& b, const char* who) {
    if (!(a == b))
        throw std::invalid_argument(std::string(who) + ": subband shape mismatch " + a.str() +
                                    " vs " + b.str());
}

template <typename T>
ag::Var<T> mean_abs(ag::Var<T> x) {
    return ag::mean_all(ag::abs_(x));
}

} // namespace detail

// Charbonnier distance between the LL coefficients of every level.
template <typename T>
ag::Var<T> loss_lf_t(ag::Tape<T>& tape, const wav::PyramidVar<T>& pred,
                     const wav::Pyramid<T>& target, T eps) {
    if (pred.levels != target.levels)
        throw std::invalid_argument("loss_lf: level count mismatch");
    ag::Var<T> acc;
    for (int s = 0; s < pred.levels; ++s) {
        detail::check_conformal<T>(pred.ll[size_t(s)].shape(), target.ll[size_t(s)].shape(),
                                   "loss_lf");
        ag::Var<T> tll = ag::constant(tape, target.ll[size_t(s)]);
        ag::Var<T> diff = ag::sub(pred.ll[size_t(s)], tll);
        ag::Var<T> charb = ag::sqrt_(ag::affine(ag::square(diff), T(1), eps * eps));
        ag::Var<T> term = ag::mean_all(charb);
        acc = s == 0 ? term : ag::add(acc, term);
    }
    return acc;
}

// l1 + (1 - SSIM) over every detail subband. SSIM is skipped (and counted)
// for subbands smaller than the window.
template <typename T>
ag::Var<T> loss_hf_t(ag::Tape<T>& tape, const wav::PyramidVar<T>& pred,
                     const wav::Pyramid<T>& target, T lambda1, T lambda2,
                     const SsimParams<T>& sp, int* ssim_skipped = nullptr) {
    if (pred.levels != target.levels)
        throw std::invalid_argument("loss_hf: level count mismatch");
    ag::Var<T> acc;
    bool first = true;
    int skipped = 0;
    for (int s = 0; s < pred.levels; ++s) {
        const wav::SubbandsVar<T>& ps = pred.details[size_t(s)];
        const wav::Subbands<T>& ts = target.details[size_t(s)];
        const std::array<ag::Var<T>, 3> pv{ps.lh, ps.hl, ps.hh};
        const std::array<const Tensor<T>*, 3> tv{&ts.lh, &ts.hl, &ts.hh};
        for (int w = 0; w < 3; ++w) {
            // by value: recording ops below may reallocate the tape's node
            // storage and invalidate references into it
            const Shape psh = pv[size_t(w)].shape();
            const Shape tsh = tv[size_t(w)]->shape();
            const int64_t pc = psh[2], tc = tsh[2];
            if (psh[0] != tsh[0] || psh[1] != tsh[1] || (pc != tc && tc != 1))
                throw std::invalid_argument("loss_hf: subband shape mismatch " + psh.str() +
                                            " vs " + tsh.str());
            ag::Var<T> tgt = ag::constant(tape, *tv[size_t(w)]);
            ag::Var<T> term = ag::affine(detail::mean_abs(ag::sub(pv[size_t(w)], tgt)), lambda1,
                                         T(0));
            if (lambda2 > T(0)) {
                if (psh[0] >= sp.window && psh[1] >= sp.window) {
                    ag::Var<T> sacc;
                    for (int64_t c = 0; c < pc; ++c) {
                        ag::Var<T> pa = ag::reshape(ag::channel_select(pv[size_t(w)], c),
                                                    Shape{psh[0], psh[1]});
                        ag::Var<T> tb = ag::reshape(
                            ag::channel_select(tgt, tc == 1 ? 0 : c), Shape{psh[0], psh[1]});
                        ag::Var<T> sv = ssim_t(pa, tb, sp);
                        sacc = c == 0 ? sv : ag::add(sacc, sv);
                    }
                    if (pc > 1) sacc = ag::affine(sacc, T(1) / T(pc), T(0));
                    term = ag::add(term, ag::affine(sacc, -lambda2, lambda2)); // λ2·(1−SSIM)
                } else {
                    ++skipped;
                }
            }
            acc = first ? term : ag::add(acc, term);
            first = false;
        }
    }
    if (ssim_skipped) *ssim_skipped = skipped;
    return acc;
}

// Forward-difference alignment between the luma of the composed render and
// the NIR plane.
template <typename T>
ag::Var<T> loss_grad_t(ag::Tape<T>& tape, ag::Var<T> pred_rgb, const Tensor<T>& nir,
                       bool abs_variant) {
    const Shape s = pred_rgb.shape(); // copy, not a reference into tape storage
    if (s.rank != 3 || s[2] != 3)
        throw std::invalid_argument("loss_grad: pred must be (H, W, 3), got " + s.str());
    if (nir.rank() != 3 || nir.dim(2) != 1 || nir.dim(0) != s[0] || nir.dim(1) != s[1])
        throw std::invalid_argument("loss_grad: nir shape mismatch " + nir.shape().str());
    const int64_t h = s[0], w = s[1];
    if (h < 2 || w < 2) throw std::invalid_argument("loss_grad: window too small");

    Tensor<T> ymat{Shape{3, 1}, {T(0.299), T(0.587), T(0.114)}};
    ag::Var<T> y = ag::reshape(
        ag::matmul(ag::reshape(pred_rgb, Shape{h * w, 3}), ag::constant(tape, ymat)),
        Shape{h, w, 1});

    auto target_diff = [&](bool horizontal) {
        Tensor<T> d = horizontal ? Tensor<T>{Shape{h, w - 1, 1}} : Tensor<T>{Shape{h - 1, w, 1}};
        for (int64_t i = 0; i < d.dim(0); ++i)
            for (int64_t j = 0; j < d.dim(1); ++j) {
                T v = horizontal ? nir.at(i, j + 1, 0) - nir.at(i, j, 0)
                                 : nir.at(i + 1, j, 0) - nir.at(i, j, 0);
                if (abs_variant) v = v < T(0) ? -v : v;
                d.at(i, j, 0) = v;
            }
        return d;
    };

    ag::Var<T> dx = ag::sub(ag::crop2d(y, 0, 1, h, w - 1), ag::crop2d(y, 0, 0, h, w - 1));
    ag::Var<T> dy = ag::sub(ag::crop2d(y, 1, 0, h - 1, w), ag::crop2d(y, 0, 0, h - 1, w));
    if (abs_variant) {
        dx = ag::abs_(dx);
        dy = ag::abs_(dy);
    }
    ag::Var<T> tx = ag::constant(tape, target_diff(true));
    ag::Var<T> ty = ag::constant(tape, target_diff(false));
    return ag::add(detail::mean_abs(ag::sub(dx, tx)), detail::mean_abs(ag::sub(dy, ty)));
}

// |mean(structure field) - beta|
template <typename T>
ag::Var<T> loss_zero_t(ag::Var<T> hf_plane, ag::Var<T> beta) {
    return ag::abs_(ag::sub(ag::mean_all(hf_plane), beta));
}

// l1 pull on the low branch's detail coefficients and the high branch's
// approximation coefficients.
template <typename T>
ag::Var<T> loss_reg_t(const wav::PyramidVar<T>& lf_pyr, const wav::PyramidVar<T>& hf_pyr) {
    if (lf_pyr.levels != hf_pyr.levels)
        throw std::invalid_argument("loss_reg: level count mismatch");
    ag::Var<T> acc;
    bool first = true;
    for (int s = 0; s < lf_pyr.levels; ++s) {
        const wav::SubbandsVar<T>& d = lf_pyr.details[size_t(s)];
        for (ag::Var<T> band : {d.lh, d.hl, d.hh}) {
            ag::Var<T> term = detail::mean_abs(band);
            acc = first ? term : ag::add(acc, term);
            first = false;
        }
        acc = ag::add(acc, detail::mean_abs(hf_pyr.ll[size_t(s)]));
    }
    return acc;
}

struct LossReport {
    int64_t iteration = 0;
    double lf = 0, hf = 0, grad = 0, zero = 0, reg = 0;
    double w_lf = 0, w_hf = 0, w_grad = 0;
    double total = 0;
    int ssim_skipped = 0;

    static std::string csv_header() {
        return "iteration,l_lf,l_hf,l_grad,l_zero,l_reg,w_lf,w_hf,w_grad,total,ssim_skipped";
    }
    std::string csv_row() const {
        std::ostringstream os;
        os.precision(10);
        os << iteration << ',' << lf << ',' << hf << ',' << grad << ',' << zero << ',' << reg
           << ',' << w_lf << ',' << w_hf << ',' << w_grad << ',' << total << ',' << ssim_skipped;
        return os.str();
    }
};

template <typename T>
struct AssembledLoss {
    ag::Var<T> total;
    LossReport report;
};

// Uncertainty-weighted sum: each active task contributes exp(-s_k)/2 * L_k +
// s_k/2; the regularizers enter with fixed weights. Disabled terms (ablation
// switches) drop out of the sum together with their s_k.
template <typename T>
AssembledLoss<T> total_loss_t(ag::Tape<T>& tape, ag::Var<T> lf, ag::Var<T> hf,
                              ag::Var<T> grad, bool use_grad, ag::Var<T> zero, bool use_zero,
                              ag::Var<T> reg, bool use_reg, ag::Var<T> s_lf, ag::Var<T> s_hf,
                              ag::Var<T> s_grad, T alpha, T gamma) {
    auto check = [](ag::Var<T> v, const char* name) {
        if (v.valid() && std::isnan(static_cast<double>(v.value().value())))
            throw NumericalAbort(std::string("loss term '") + name + "' is NaN");
    };
    check(lf, "lf");
    check(hf, "hf");
    if (use_grad) check(grad, "grad");
    if (use_zero) check(zero, "zero");
    if (use_reg) check(reg, "reg");

    auto weighted = [&](ag::Var<T> term, ag::Var<T> s) {
        ag::Var<T> w = ag::affine(ag::exp_(ag::neg(s)), T(0.5), T(0));
        return ag::add(ag::mul(w, term), ag::affine(s, T(0.5), T(0)));
    };
    ag::Var<T> total = ag::add(weighted(lf, s_lf), weighted(hf, s_hf));
    if (use_grad) total = ag::add(total, weighted(grad, s_grad));
    if (use_reg) total = ag::add(total, ag::affine(reg, alpha, T(0)));
    if (use_zero) total = ag::add(total, ag::affine(zero, gamma, T(0)));
    (void)tape;

    AssembledLoss<T> out{total, {}};
    out.report.lf = static_cast<double>(lf.value().value());
    out.report.hf = static_cast<double>(hf.value().value());
    out.report.grad = use_grad ? static_cast<double>(grad.value().value()) : 0.0;
    out.report.zero = use_zero ? static_cast<double>(zero.value().value()) : 0.0;
    out.report.reg = use_reg ? static_cast<double>(reg.value().value()) : 0.0;
    out.report.w_lf = 0.5 * std::exp(-static_cast<double>(s_lf.value().value()));
    out.report.w_hf = 0.5 * std::exp(-static_cast<double>(s_hf.value().value()));
    out.report.w_grad = use_grad ? 0.5 * std::exp(-static_cast<double>(s_grad.value().value()))
                                 : 0.0;
    out.report.total = static_cast<double>(total.value().value());
    if (std::isnan(out.report.total)) throw NumericalAbort("total loss is NaN");
    return out;
}

} // namespace duofit::losses
