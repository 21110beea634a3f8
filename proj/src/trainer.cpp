#include "duofit/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <iostream>
#include <stdexcept>

#include "duofit/checkpoint.hpp"
#include "duofit/errors.hpp"
#include "duofit/kernels.hpp"
#include "duofit/optim.hpp"
#include "duofit/rng.hpp"
#include "duofit/step.hpp"

namespace duofit::train {

namespace {

int resolve_threads(const TrainConfig& cfg) {
    if (cfg.threads > 0) return cfg.threads;
    if (const char* env = std::getenv("DUOFIT_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v >= 1) return static_cast<int>(v);
    }
    return 1;
}

Tensor<float> crop_of(const img::Image& im, int64_t r0, int64_t c0, int64_t h, int64_t w) {
    const int64_t ch = im.dim(2);
    Tensor<float> out{Shape{h, w, ch}};
    for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j)
            for (int64_t c = 0; c < ch; ++c) out.at(i, j, c) = im.at(r0 + i, c0 + j, c);
    return out;
}

img::Image clamp01(const Tensor<float>& t) {
    img::Image out{t.shape()};
    for (int64_t i = 0; i < t.numel(); ++i)
        out[i] = t[i] < 0.f ? 0.f : (t[i] > 1.f ? 1.f : t[i]);
    return out;
}

bool any_nan(const Tensor<float>& t) {
    for (int64_t i = 0; i < t.numel(); ++i)
        if (std::isnan(t[i])) return true;
    return false;
}

} // namespace

FitResult fit(const img::Image& rgb, const img::Image& nir, const TrainConfig& cfg,
              const FitOptions& opts) {
    if (rgb.rank() != 3 || rgb.dim(2) != 3)
        throw std::invalid_argument("fit: rgb must be (H, W, 3), got " + rgb.shape().str());
    if (nir.rank() != 3 || nir.dim(2) != 1)
        throw std::invalid_argument("fit: nir must be (H, W, 1), got " + nir.shape().str());
    if (rgb.dim(0) != nir.dim(0) || rgb.dim(1) != nir.dim(1))
        throw std::invalid_argument("fit: rgb " + rgb.shape().str() + " and nir " +
                                    nir.shape().str() + " disagree on image dims");
    cfg.validate();

    const int64_t H = rgb.dim(0), W = rgb.dim(1);
    const int64_t div = int64_t(1) << cfg.wavelet_levels;
    const bool full_frame =
        H * W <= cfg.full_frame_max * cfg.full_frame_max && H % div == 0 && W % div == 0;
    if (!full_frame && (cfg.crop > H || cfg.crop > W))
        throw std::invalid_argument("fit: image " + rgb.shape().str() +
                                    " is smaller than the training crop " +
                                    std::to_string(cfg.crop) +
                                    " and not eligible for full-frame training");

    kern::set_threads(resolve_threads(cfg));
    kern::set_deterministic(cfg.deterministic != 0);

    FitResult res;
    res.model = fields::make_model<float>(cfg, H, W);
    auto params = fields::parameters(res.model);
    const auto routed = optim::route_parameters(params);
    std::vector<optim::MuonState<float>> mstate(params.size());
    std::vector<optim::AdamState<float>> astate(params.size());

    const int64_t win_h = full_frame ? H : cfg.crop;
    const int64_t win_w = full_frame ? W : cfg.crop;
    StepData<float> frame_data;
    if (full_frame)
        frame_data = make_step_data(crop_of(rgb, 0, 0, H, W), crop_of(nir, 0, 0, H, W),
                                    cfg.wavelet_levels);

    if (!opts.quiet)
        std::cout << "fit: " << H << "x" << W << ", "
                  << (full_frame ? "full-frame" : "crop " + std::to_string(cfg.crop)) << ", "
                  << fields::parameter_count(res.model) << " parameters, " << cfg.iterations
                  << " iterations\n";

    // Crop positions come from their own stream so the model init (which also
    // consumed cfg.seed) stays independent of the sampling schedule.
    Rng crop_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);

    const auto t0 = std::chrono::steady_clock::now();
    std::vector<Tensor<float>> grads(params.size());
    for (int64_t it = 0; it < cfg.iterations; ++it) {
        int64_t r0 = 0, c0 = 0;
        if (!full_frame) {
            r0 = static_cast<int64_t>(crop_rng.below(uint64_t(H - cfg.crop + 1)));
            c0 = static_cast<int64_t>(crop_rng.below(uint64_t(W - cfg.crop + 1)));
        }

        auto abort_with_checkpoint = [&](const std::string& why) -> NumericalAbort {
            if (!opts.abort_checkpoint_path.empty())
                save_checkpoint(opts.abort_checkpoint_path, res.model);
            return NumericalAbort("fit aborted at iteration " + std::to_string(it + 1) + ": " +
                                  why);
        };

        ag::Tape<float> tape(true);
        losses::LossReport report;
        try {
            auto vars = fields::make_vars(tape, res.model, true);
            StepData<float> local;
            if (!full_frame)
                local = make_step_data(crop_of(rgb, r0, c0, win_h, win_w),
                                       crop_of(nir, r0, c0, win_h, win_w), cfg.wavelet_levels);
            const StepData<float>& data = full_frame ? frame_data : local;
            auto loss = assemble_step_loss(tape, res.model, vars, r0, c0, data);
            report = loss.report;
            tape.backward(loss.total);
            const auto leaves = fields::flatten(vars);
            for (size_t i = 0; i < params.size(); ++i) {
                grads[i] = tape.grad(leaves[i]);
                if (any_nan(grads[i]))
                    throw abort_with_checkpoint("NaN gradient for " + params[i].name);
            }
        } catch (const NumericalAbort&) {
            throw;
        } catch (const std::runtime_error& e) {
            // tape NaN check and loss assembly surface here; parameters have
            // not been touched this iteration, so the saved state is the last
            // one that completed a step
            throw abort_with_checkpoint(e.what());
        }

        const double lr_scale =
            cfg.cosine_decay
                ? 0.5 * (1.0 + std::cos(M_PI * double(it) / double(std::max<int64_t>(1, cfg.iterations))))
                : 1.0;
        for (size_t i : routed.muon)
            optim::muon_step(*params[i].data, grads[i], mstate[i], cfg, lr_scale);
        for (size_t i : routed.adam_grid)
            optim::adam_step(*params[i].data, grads[i], astate[i], cfg.lr_grids, cfg.beta1,
                             cfg.beta2, cfg.adam_eps, lr_scale);
        for (size_t i : routed.adam_scalar)
            optim::adam_step(*params[i].data, grads[i], astate[i], cfg.lr_scalars, cfg.beta1,
                             cfg.beta2, cfg.adam_eps, lr_scale);

        report.iteration = it + 1;
        if ((it + 1) % cfg.log_every == 0) {
            res.log.push_back(report);
            if (opts.on_log) opts.on_log(report);
        }
        if (cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0 &&
            !opts.periodic_checkpoint_path.empty())
            save_checkpoint(opts.periodic_checkpoint_path, res.model);
    }
    const auto t1 = std::chrono::steady_clock::now();
    res.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
    res.per_iter_ms = cfg.iterations > 0 ? res.wall_seconds * 1000.0 / double(cfg.iterations) : 0;

    res.restored = fields::render(res.model, H, W);
    const fields::QuerySpec ql = fields::full_queries(H, W);
    res.panel_lf = clamp01(fields::eval_plane(res.model, ql, true));

    Tensor<float> hf = fields::eval_plane(res.model, ql, false);
    const float beta = res.model.beta.value();
    double m = 0;
    for (int64_t i = 0; i < hf.numel(); ++i) {
        hf[i] -= beta;
        m = std::max(m, std::abs(double(hf[i])));
    }
    res.panel_hf_scale = m;
    res.panel_hf = img::Image{hf.shape()};
    for (int64_t i = 0; i < hf.numel(); ++i)
        res.panel_hf[i] = m < 1e-12 ? 0.5f : static_cast<float>(0.5 + 0.5 * double(hf[i]) / m);

    if (!opts.quiet)
        std::cout << "fit: done in " << res.wall_seconds << " s (" << res.per_iter_ms
                  << " ms/iter)\n";
    return res;
}

} // namespace duofit::train
