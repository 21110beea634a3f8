#pragma once

#include <functional>
#include <string>
#include <vector>

#include "duofit/config.hpp"
#include "duofit/fields.hpp"
#include "duofit/imaging.hpp"
#include "duofit/losses.hpp"

namespace duofit::train {

using FieldModel = fields::FieldModelT<float>;

struct FitResult {
    FieldModel model;
    std::vector<losses::LossReport> log;
    double wall_seconds = 0;
    double per_iter_ms = 0;
    img::Image restored;       // clamped composite at input resolution
    img::Image panel_lf;       // low branch alone, clamped
    img::Image panel_hf;       // high branch minus beta, mapped [-m,m] -> [0,1]
    double panel_hf_scale = 0; // the m used for the mapping
};

struct FitOptions {
    std::string abort_checkpoint_path;    // last-good state on numerical abort
    std::string periodic_checkpoint_path; // written every cfg.checkpoint_every iters
    std::function<void(const losses::LossReport&)> on_log;
    bool quiet = false;
};

FitResult fit(const img::Image& rgb, const img::Image& nir, const TrainConfig& cfg,
              const FitOptions& opts = {});

} // namespace duofit::train
