#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <numeric>

#include "duofit/checkpoint.hpp"
#include "duofit/errors.hpp"
#include "duofit/refscene.hpp"
#include "duofit/synth.hpp"
#include "duofit/trainer.hpp"

using namespace duofit;
using duofit::img::Image;

namespace {

namespace fs = std::filesystem;

fs::path scratch() {
    static fs::path dir = [] {
        fs::path p = fs::temp_directory_path() /
                     ("duofit_trainer_" + std::to_string(static_cast<long>(::getpid())));
        fs::create_directories(p);
        return p;
    }();
    return dir;
}

// Small pair for smoke fits: the reference scene recipe shrunk to `n` px with
// the texture band dropped below the tiny frame's Nyquist.
struct SmokePair {
    Image noisy, nir;
};

SmokePair smoke_pair(int64_t n) {
    synth::SceneSpec spec;
    spec.h = spec.w = n;
    spec.tex_freq_min = 4.0;
    spec.tex_freq_max = 12.0;
    const synth::Scene sc = synth::generate_scene(spec);
    Rng noise(ref::kNoiseSeed);
    SmokePair p;
    p.noisy = synth::degrade(sc.clean_rgb, synth::DegradeSpec{}, noise);
    p.nir = sc.nir;
    return p;
}

// 3-layer config sized for sub-second iterations.
TrainConfig smoke_config() {
    TrainConfig cfg;
    cfg.iterations = 30;
    cfg.crop = 32;
    cfg.seed = 5;
    cfg.hidden = 16;
    cfg.grid_levels = 3;
    cfg.log_every = 10;
    return cfg;
}

double max_abs_diff(const Image& a, const Image& b) {
    REQUIRE(a.shape() == b.shape());
    double m = 0;
    for (int64_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(double(a[i]) - double(b[i])));
    return m;
}

bool all_in_unit(const Image& im) {
    for (int64_t i = 0; i < im.numel(); ++i)
        if (im[i] < 0.0f || im[i] > 1.0f) return false;
    return true;
}

} // namespace

TEST_CASE("fit: zero iterations returns the initialized model untouched") {
    const SmokePair p = smoke_pair(32);
    TrainConfig cfg = smoke_config();
    cfg.iterations = 0;
    train::FitOptions opts;
    opts.quiet = true;
    const auto res = train::fit(p.noisy, p.nir, cfg, opts);
    CHECK(res.log.empty());
    CHECK(res.restored.shape() == Shape{32, 32, 3});
    // the untouched model renders exactly what the result carries
    auto fresh = fields::make_model<float>(cfg, 32, 32);
    CHECK(max_abs_diff(fields::render(fresh, 32, 32), res.restored) == 0.0);
}

TEST_CASE("fit: same seed twice is bit-identical, different seed is not") {
    const SmokePair p = smoke_pair(32);
    const TrainConfig cfg = smoke_config();
    train::FitOptions opts;
    opts.quiet = true;
    const auto a = train::fit(p.noisy, p.nir, cfg, opts);
    const auto b = train::fit(p.noisy, p.nir, cfg, opts);
    CHECK(max_abs_diff(a.restored, b.restored) == 0.0);
    REQUIRE(a.log.size() == b.log.size());
    for (size_t i = 0; i < a.log.size(); ++i) CHECK(a.log[i].total == b.log[i].total);

    TrainConfig other = cfg;
    other.seed = cfg.seed + 1;
    const auto c = train::fit(p.noisy, p.nir, other, opts);
    CHECK(max_abs_diff(a.restored, c.restored) > 0.0);
}

TEST_CASE("fit: loss descends over a short full-frame run") {
    const SmokePair p = smoke_pair(32);
    TrainConfig cfg = smoke_config();
    cfg.iterations = 400;
    cfg.log_every = 10;
    train::FitOptions opts;
    opts.quiet = true;
    const auto res = train::fit(p.noisy, p.nir, cfg, opts);
    REQUIRE(res.log.size() == 40);
    auto mean_total = [&](size_t from, size_t to) {
        double s = 0;
        for (size_t i = from; i < to; ++i) s += res.log[i].total;
        return s / double(to - from);
    };
    const double head = mean_total(0, 4);
    const double tail = mean_total(res.log.size() - 4, res.log.size());
    CHECK(tail < head);
    // the per-branch uncertainty weights must have moved off their init
    CHECK(res.log.back().w_lf != doctest::Approx(0.5).epsilon(1e-6));
    CHECK(res.wall_seconds > 0.0);
    CHECK(res.per_iter_ms > 0.0);
    CHECK(res.wall_seconds < 60.0);
    CHECK(all_in_unit(res.restored));
    CHECK(all_in_unit(res.panel_lf));
    CHECK(all_in_unit(res.panel_hf));
    CHECK(res.panel_hf_scale >= 0.0);
}

TEST_CASE("fit: crop mode covers a frame larger than the window") {
    const SmokePair p = smoke_pair(64);
    TrainConfig cfg = smoke_config();
    cfg.iterations = 60;
    cfg.full_frame_max = 0; // force crops
    cfg.crop = 32;
    train::FitOptions opts;
    opts.quiet = true;
    const auto res = train::fit(p.noisy, p.nir, cfg, opts);
    CHECK(res.restored.shape() == Shape{64, 64, 3});
    CHECK(res.log.size() == 6);
}

TEST_CASE("fit: input shape errors") {
    const SmokePair p = smoke_pair(32);
    const TrainConfig cfg = smoke_config();
    train::FitOptions opts;
    opts.quiet = true;
    CHECK_THROWS_AS(train::fit(p.nir, p.nir, cfg, opts), std::invalid_argument);
    CHECK_THROWS_AS(train::fit(p.noisy, p.noisy, cfg, opts), std::invalid_argument);
    const SmokePair q = smoke_pair(64);
    CHECK_THROWS_AS(train::fit(p.noisy, q.nir, cfg, opts), std::invalid_argument);
    // crop larger than the frame with full-frame disabled
    TrainConfig bad = cfg;
    bad.full_frame_max = 0;
    bad.crop = 64;
    CHECK_THROWS_AS(train::fit(p.noisy, p.nir, bad, opts), std::invalid_argument);
}

TEST_CASE("fit: log rows appear every log_every iterations") {
    const SmokePair p = smoke_pair(32);
    TrainConfig cfg = smoke_config();
    cfg.iterations = 55;
    cfg.log_every = 10;
    train::FitOptions opts;
    opts.quiet = true;
    int calls = 0;
    opts.on_log = [&](const losses::LossReport& r) {
        ++calls;
        CHECK(r.iteration % 10 == 0);
    };
    const auto res = train::fit(p.noisy, p.nir, cfg, opts);
    CHECK(res.log.size() == 5);
    CHECK(calls == 5);
    CHECK(res.log.front().iteration == 10);
    CHECK(res.log.back().iteration == 50);
}

TEST_CASE("fit: periodic checkpoints are written and loadable") {
    const SmokePair p = smoke_pair(32);
    TrainConfig cfg = smoke_config();
    cfg.iterations = 20;
    cfg.checkpoint_every = 10;
    const auto ck = (scratch() / "periodic.bin").string();
    train::FitOptions opts;
    opts.quiet = true;
    opts.periodic_checkpoint_path = ck;
    const auto res = train::fit(p.noisy, p.nir, cfg, opts);
    REQUIRE(fs::exists(ck));
    auto model = load_checkpoint(ck);
    // the last periodic write lands on the final iteration of this schedule,
    // so the loaded model renders the fit's restored frame
    CHECK(max_abs_diff(fields::render(model, 32, 32), res.restored) == 0.0);
}

TEST_CASE("fit: runaway step size aborts with the last-good checkpoint") {
    const SmokePair p = smoke_pair(32);
    TrainConfig cfg = smoke_config();
    cfg.iterations = 25;
    cfg.lr_grids = 1e19; // drives activations past float range within a step
    const auto ck = (scratch() / "abort.bin").string();
    train::FitOptions opts;
    opts.quiet = true;
    opts.abort_checkpoint_path = ck;
    CHECK_THROWS_AS(train::fit(p.noisy, p.nir, cfg, opts), NumericalAbort);
    REQUIRE(fs::exists(ck));
    auto model = load_checkpoint(ck); // parseable last-good state
    CHECK(model.img_h == 32);
}
