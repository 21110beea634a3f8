#pragma once

// One training step's loss graph: evaluate both branches on a window, build
// the four pyramids, and assemble the weighted total. Templated so the f64
// gradient-check path and the f32 fit path share this exact code.

#include "duofit/fields.hpp"
#include "duofit/losses.hpp"
#include "duofit/wavelet.hpp"

namespace duofit {

template <typename T>
struct StepData {
    Tensor<T> rgb; // (h, w, 3) crop
    Tensor<T> nir; // (h, w, 1) crop
    wav::Pyramid<T> rgb_pyr, nir_pyr;
};

template <typename T>
StepData<T> make_step_data(Tensor<T> rgb_crop, Tensor<T> nir_crop, int levels) {
    StepData<T> d;
    d.rgb_pyr = wav::decompose(rgb_crop, levels);
    d.nir_pyr = wav::decompose(nir_crop, levels);
    d.rgb = std::move(rgb_crop);
    d.nir = std::move(nir_crop);
    return d;
}

template <typename T>
losses::AssembledLoss<T> assemble_step_loss(ag::Tape<T>& tape, fields::FieldModelT<T>& m,
                                            const fields::ModelVars<T>& v, int64_t r0,
                                            int64_t c0, const StepData<T>& data) {
    const TrainConfig& cfg = m.cfg;
    const int64_t h = data.rgb.dim(0), w = data.rgb.dim(1);
    const fields::QuerySpec q = fields::window_queries(m.img_h, m.img_w, r0, c0, h, w);

    ag::Var<T> low = fields::eval_low_t(tape, m, v, q);
    ag::Var<T> high = fields::eval_high_t(tape, m, v, q);
    ag::Var<T> composed = ag::sub(ag::add(low, high), v.beta);

    const wav::PyramidVar<T> lf_pyr = wav::decompose_t(low, cfg.wavelet_levels);
    const wav::PyramidVar<T> hf_pyr = wav::decompose_t(high, cfg.wavelet_levels);

    losses::SsimParams<T> sp{cfg.ssim_window, cfg.ssim_sigma, cfg.ssim_range};
    int skipped = 0;
    ag::Var<T> l_lf = losses::loss_lf_t(tape, lf_pyr, data.rgb_pyr, static_cast<T>(cfg.eps));
    ag::Var<T> l_hf = losses::loss_hf_t(tape, hf_pyr, data.nir_pyr,
                                        static_cast<T>(cfg.lambda1),
                                        static_cast<T>(cfg.lambda2), sp, &skipped);
    ag::Var<T> l_grad, l_zero, l_reg;
    if (cfg.use_loss_grad)
        l_grad = losses::loss_grad_t(tape, composed, data.nir, cfg.grad_abs != 0);
    if (cfg.use_loss_zero) l_zero = losses::loss_zero_t(high, v.beta);
    if (cfg.use_loss_reg) l_reg = losses::loss_reg_t(lf_pyr, hf_pyr);

    losses::AssembledLoss<T> out = losses::total_loss_t(
        tape, l_lf, l_hf, l_grad, cfg.use_loss_grad != 0, l_zero, cfg.use_loss_zero != 0, l_reg,
        cfg.use_loss_reg != 0, v.s_lf, v.s_hf, v.s_grad, static_cast<T>(cfg.alpha),
        static_cast<T>(cfg.gamma));
    out.report.ssim_skipped = skipped;
    return out;
}

} // namespace duofit
