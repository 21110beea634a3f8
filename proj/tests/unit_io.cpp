#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "duofit/checkpoint.hpp"
#include "duofit/config.hpp"
#include "duofit/errors.hpp"
#include "duofit/imaging.hpp"
#include "duofit/refscene.hpp"
#include "duofit/rng.hpp"
#include "duofit/synth.hpp"
#include "duofit/wavelet.hpp"

using namespace duofit;
using duofit::img::Image;

namespace {

namespace fs = std::filesystem;

// Unique scratch dir per process so parallel ctest runs don't collide.
fs::path scratch() {
    static fs::path dir = [] {
        fs::path p = fs::temp_directory_path() /
                     ("duofit_io_" + std::to_string(static_cast<long>(::getpid())));
        fs::create_directories(p);
        return p;
    }();
    return dir;
}

Image random_image(Rng& rng, int64_t h, int64_t w, int64_t c) {
    Image im{Shape{h, w, c}};
    for (int64_t i = 0; i < im.numel(); ++i) im[i] = static_cast<float>(rng.uniform());
    return im;
}

double max_abs_diff(const Image& a, const Image& b) {
    REQUIRE(a.shape() == b.shape());
    double m = 0;
    for (int64_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(double(a[i]) - double(b[i])));
    return m;
}

double ncc_vec(const std::vector<double>& a, const std::vector<double>& b) {
    double ma = 0, mb = 0;
    for (size_t i = 0; i < a.size(); ++i) { ma += a[i]; mb += b[i]; }
    ma /= double(a.size());
    mb /= double(b.size());
    double num = 0, da = 0, db = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        num += (a[i] - ma) * (b[i] - mb);
        da += (a[i] - ma) * (a[i] - ma);
        db += (b[i] - mb) * (b[i] - mb);
    }
    return num / std::sqrt(std::max(1e-30, da * db));
}

// NCC over wavelet coefficients of the pair's luma planes: concatenated
// detail subbands when `details`, else the deepest approximation.
double subband_ncc(const Image& a, const Image& b, int levels, bool details) {
    auto plane = [](const Image& x) { return x.shape()[2] == 3 ? img::to_y(x) : x; };
    const auto pa = wav::decompose(plane(a), levels);
    const auto pb = wav::decompose(plane(b), levels);
    std::vector<double> va, vb;
    auto push = [](std::vector<double>& v, const Tensor<float>& t) {
        for (int64_t i = 0; i < t.numel(); ++i) v.push_back(t[i]);
    };
    if (details) {
        for (int s = 0; s < levels; ++s) {
            push(va, pa.details[s].lh), push(va, pa.details[s].hl), push(va, pa.details[s].hh);
            push(vb, pb.details[s].lh), push(vb, pb.details[s].hl), push(vb, pb.details[s].hh);
        }
    } else {
        push(va, pa.ll.back());
        push(vb, pb.ll.back());
    }
    return ncc_vec(va, vb);
}

} // namespace

// ---------------------------------------------------------------- config

TEST_CASE("config: serialize -> parse round trip preserves every field") {
    TrainConfig c;
    c.iterations = 123;
    c.crop = 64;
    c.seed = 99;
    c.eps = 2.5e-4;
    c.lambda1 = 0.25;
    c.hf_per_channel = 1;
    c.lr_grids = 3e-2;
    c.cosine_decay = 1;
    const TrainConfig back = parse_config_text(serialize_config(c));
    CHECK(serialize_config(back) == serialize_config(c));
    CHECK(back.iterations == 123);
    CHECK(back.crop == 64);
    CHECK(back.eps == doctest::Approx(2.5e-4).epsilon(1e-12));
    CHECK(back.hf_per_channel == 1);
    CHECK(back.cosine_decay == 1);
}

TEST_CASE("config: defaults survive an empty text block") {
    const TrainConfig base;
    const TrainConfig parsed = parse_config_text("");
    CHECK(serialize_config(parsed) == serialize_config(base));
}

TEST_CASE("config: unknown keys and malformed lines are rejected") {
    CHECK_THROWS_AS(parse_config_text("not_a_knob=1\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_config_text("iterations\n"), std::invalid_argument);
    TrainConfig c;
    CHECK_THROWS_AS(set_config_field(c, "definitely_missing", "0"), std::invalid_argument);
}

TEST_CASE("config: comments and blank lines are ignored") {
    const TrainConfig c = parse_config_text("# comment only\n\n  iterations = 7 # trailing\n");
    CHECK(c.iterations == 7);
}

TEST_CASE("config: digest tracks content, not identity") {
    TrainConfig a, b;
    CHECK(config_digest(a) == config_digest(b));
    b.iterations = a.iterations + 1;
    CHECK(config_digest(a) != config_digest(b));
}

TEST_CASE("config: validate rejects bad combinations") {
    TrainConfig c;
    c.iterations = -1;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = TrainConfig{};
    c.crop = 92; // not a multiple of 2^3
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = TrainConfig{};
    c.wavelet_levels = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = TrainConfig{};
    c.validate(); // defaults are a legal fit
}

TEST_CASE("config: load_config_file missing path raises IoError") {
    CHECK_THROWS_AS(load_config_file((scratch() / "absent.cfg").string()), IoError);
}

TEST_CASE("config: list_config_fields covers the serialized keys") {
    TrainConfig c;
    const auto fields = list_config_fields(c);
    CHECK(fields.size() > 20);
    // every listed key must be settable
    for (const auto& f : fields) CHECK_NOTHROW(set_config_field(c, f.key, f.value));
    CHECK(serialize_config(c) == serialize_config(TrainConfig{}));
}

// ---------------------------------------------------------------- png

TEST_CASE("png: 8-bit round trip is exact on quantized values") {
    Rng rng(11);
    Image im = random_image(rng, 9, 13, 3);
    // snap to the 8-bit lattice so the round trip is lossless
    for (int64_t i = 0; i < im.numel(); ++i)
        im[i] = std::round(im[i] * 255.0f) / 255.0f;
    const auto path = (scratch() / "rt8.png").string();
    img::save_png(path, im, 8);
    const Image back = img::load_png(path);
    CHECK(back.shape() == im.shape());
    CHECK(max_abs_diff(back, im) < 1e-6);
}

TEST_CASE("png: 16-bit round trip is exact on quantized values") {
    Rng rng(12);
    Image im = random_image(rng, 7, 5, 1);
    for (int64_t i = 0; i < im.numel(); ++i)
        im[i] = std::round(im[i] * 65535.0f) / 65535.0f;
    const auto path = (scratch() / "rt16.png").string();
    img::save_png(path, im, 16);
    const Image back = img::load_png(path);
    CHECK(back.shape() == im.shape());
    CHECK(max_abs_diff(back, im) < 1e-7);
}

TEST_CASE("png: quantization error is bounded by half a step") {
    Rng rng(13);
    const Image im = random_image(rng, 16, 16, 3);
    const auto p8 = (scratch() / "q8.png").string();
    const auto p16 = (scratch() / "q16.png").string();
    img::save_png(p8, im, 8);
    img::save_png(p16, im, 16);
    CHECK(max_abs_diff(img::load_png(p8), im) <= 0.5 / 255.0 + 1e-7);
    CHECK(max_abs_diff(img::load_png(p16), im) <= 0.5 / 65535.0 + 1e-9);
}

TEST_CASE("png: out-of-range values are clamped on save") {
    Image im{Shape{2, 2, 1}};
    im[0] = -0.5f;
    im[1] = 1.5f;
    im[2] = 0.0f;
    im[3] = 1.0f;
    const auto path = (scratch() / "clamp.png").string();
    img::save_png(path, im, 8);
    const Image back = img::load_png(path);
    CHECK(back[0] == 0.0f);
    CHECK(back[1] == 1.0f);
}

TEST_CASE("png: write twice produces identical bytes") {
    Rng rng(14);
    const Image im = random_image(rng, 8, 8, 3);
    const auto pa = (scratch() / "dup_a.png").string();
    const auto pb = (scratch() / "dup_b.png").string();
    img::save_png(pa, im, 8);
    img::save_png(pb, im, 8);
    std::ifstream fa(pa, std::ios::binary), fb(pb, std::ios::binary);
    const std::string ba((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    const std::string bb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    CHECK(ba == bb);
    CHECK(!ba.empty());
}

TEST_CASE("png: errors are IoError, bad shapes invalid_argument") {
    CHECK_THROWS_AS(img::load_png((scratch() / "missing.png").string()), IoError);
    Image im{Shape{2, 2, 2}};
    CHECK_THROWS_AS(img::save_png((scratch() / "bad.png").string(), im, 8),
                    std::invalid_argument);
    Image ok{Shape{2, 2, 1}};
    CHECK_THROWS_AS(img::save_png((scratch() / "bad.png").string(), ok, 12),
                    std::invalid_argument);
    // truncated file
    const auto trunc = (scratch() / "trunc.png").string();
    {
        std::ofstream f(trunc, std::ios::binary);
        f << "\x89PNG\r\n";
    }
    CHECK_THROWS_AS(img::load_png(trunc), IoError);
}

// ---------------------------------------------------------------- metrics

TEST_CASE("metrics: identical images hit the sentinels") {
    Rng rng(15);
    const Image im = random_image(rng, 24, 24, 3);
    CHECK(img::psnr(im, im) == 99.0);
    CHECK(img::ssim(im, im) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("metrics: psnr closed form for a constant offset") {
    Image a{Shape{8, 8, 1}}, b{Shape{8, 8, 1}};
    for (int64_t i = 0; i < a.numel(); ++i) {
        a[i] = 0.5f;
        b[i] = 0.6f;
    }
    // mse = 0.01 -> 10*log10(1/0.01) = 20 dB
    CHECK(img::psnr(a, b) == doctest::Approx(20.0).epsilon(1e-6));
    CHECK(img::psnr(a, b, 2.0) == doctest::Approx(20.0 + 20.0 * std::log10(2.0)).epsilon(1e-6));
}

TEST_CASE("metrics: ncc is affine-invariant and sign-aware") {
    Rng rng(16);
    const Image a = random_image(rng, 12, 12, 1);
    Image b{a.shape()}, neg{a.shape()};
    for (int64_t i = 0; i < a.numel(); ++i) {
        b[i] = 3.0f * a[i] + 0.25f; // positive affine map
        neg[i] = -a[i];
    }
    CHECK(img::ncc(a, b) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(img::ncc(a, neg) == doctest::Approx(-1.0).epsilon(1e-6));
    Image c{a.shape()};
    for (int64_t i = 0; i < c.numel(); ++i) c[i] = 0.7f;
    CHECK_THROWS_AS(img::ncc(a, c), std::domain_error);
}

TEST_CASE("metrics: shape mismatch is rejected") {
    Image a{Shape{4, 4, 1}}, b{Shape{4, 5, 1}};
    CHECK_THROWS_AS(img::psnr(a, b), std::invalid_argument);
    CHECK_THROWS_AS(img::ncc(a, b), std::invalid_argument);
    CHECK_THROWS_AS(img::ssim(a, b), std::invalid_argument);
}

TEST_CASE("crop_border trims symmetrically, to_y matches the luma weights") {
    Rng rng(17);
    const Image im = random_image(rng, 10, 12, 3);
    const Image crop = img::crop_border(im, 2);
    CHECK(crop.shape() == Shape{6, 8, 3});
    CHECK(crop.at(0, 0, 0) == im.at(2, 2, 0));
    CHECK(crop.at(5, 7, 2) == im.at(7, 9, 2));
    CHECK_THROWS_AS(img::crop_border(im, 5), std::invalid_argument);

    const Image y = img::to_y(im);
    CHECK(y.shape() == Shape{10, 12, 1});
    const double want =
        0.299 * im.at(3, 4, 0) + 0.587 * im.at(3, 4, 1) + 0.114 * im.at(3, 4, 2);
    CHECK(double(y.at(3, 4, 0)) == doctest::Approx(want).epsilon(1e-6));
}

TEST_CASE("box_downsample2 averages 2x2 blocks exactly") {
    Image im{Shape{4, 4, 1}};
    for (int64_t i = 0; i < 16; ++i) im[i] = float(i);
    const Image d = img::box_downsample2(im);
    CHECK(d.shape() == Shape{2, 2, 1});
    CHECK(d.at(0, 0, 0) == doctest::Approx((0 + 1 + 4 + 5) / 4.0));
    CHECK(d.at(1, 1, 0) == doctest::Approx((10 + 11 + 14 + 15) / 4.0));
    Image odd{Shape{3, 4, 1}};
    CHECK_THROWS_AS(img::box_downsample2(odd), std::invalid_argument);
}

TEST_CASE("structure_ncc: restored-Y equal to NIR gives 1") {
    Rng rng(18);
    const Image nir = random_image(rng, 48, 48, 1);
    Image rgb{Shape{48, 48, 3}};
    for (int64_t y = 0; y < 48; ++y)
        for (int64_t x = 0; x < 48; ++x)
            for (int c = 0; c < 3; ++c) rgb.at(y, x, c) = nir.at(y, x, 0);
    CHECK(img::structure_ncc(rgb, nir, 4) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("evaluate_pair reports GT metrics only when GT is given") {
    Rng rng(19);
    const Image nir = random_image(rng, 40, 40, 1);
    const Image rgb = random_image(rng, 40, 40, 3);
    const auto bare = img::evaluate_pair(rgb, nir);
    CHECK(!bare.psnr_gt.has_value());
    const auto with_gt = img::evaluate_pair(rgb, nir, &rgb, 4);
    REQUIRE(with_gt.psnr_gt.has_value());
    CHECK(*with_gt.psnr_gt == 99.0);
    CHECK(*with_gt.ssim_gt == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(!img::report_table(with_gt).empty());
    CHECK(img::report_jsonl(with_gt).find("structure_ncc") != std::string::npos);
}

// ---------------------------------------------------------------- synth

TEST_CASE("synth: same spec regenerates the identical scene") {
    synth::SceneSpec spec;
    spec.h = spec.w = 64;
    const synth::Scene a = synth::generate_scene(spec);
    const synth::Scene b = synth::generate_scene(spec);
    CHECK(max_abs_diff(a.clean_rgb, b.clean_rgb) == 0.0);
    CHECK(max_abs_diff(a.nir, b.nir) == 0.0);
    spec.seed = 43;
    const synth::Scene c = synth::generate_scene(spec);
    CHECK(max_abs_diff(a.clean_rgb, c.clean_rgb) > 0.0);
}

TEST_CASE("synth: texture is zero-mean with peak equal to the amplitude") {
    synth::SceneSpec spec;
    spec.h = spec.w = 128;
    const synth::Scene sc = synth::generate_scene(spec);
    double mean = 0, peak = 0;
    for (int64_t i = 0; i < sc.texture.numel(); ++i) {
        mean += sc.texture[i];
        peak = std::max(peak, std::abs(double(sc.texture[i])));
    }
    mean /= double(sc.texture.numel());
    CHECK(std::abs(mean) < 1e-6);
    CHECK(peak == doctest::Approx(spec.texture_amplitude).epsilon(1e-5));
}

TEST_CASE("synth: clean_rgb = color_field + texture before clamping") {
    synth::SceneSpec spec;
    spec.h = spec.w = 64;
    const synth::Scene sc = synth::generate_scene(spec);
    double worst = 0;
    for (int64_t y = 0; y < 64; ++y)
        for (int64_t x = 0; x < 64; ++x)
            for (int c = 0; c < 3; ++c) {
                const double want = std::clamp(
                    double(sc.color_field.at(y, x, c)) + double(sc.texture.at(y, x, 0)), 0.0, 1.0);
                worst = std::max(worst, std::abs(want - double(sc.clean_rgb.at(y, x, c))));
            }
    CHECK(worst < 1e-6);
}

TEST_CASE("synth: degrade with gain 1 and zero noise is the identity") {
    synth::SceneSpec spec;
    spec.h = spec.w = 32;
    const synth::Scene sc = synth::generate_scene(spec);
    synth::DegradeSpec d;
    d.gain = 1.0;
    d.sigma_r = 0.0;
    d.k_s = 0.0;
    Rng rng(5);
    const Image out = synth::degrade(sc.clean_rgb, d, rng);
    CHECK(max_abs_diff(out, sc.clean_rgb) < 1e-7);
}

TEST_CASE("synth: noise-free gain scales exactly") {
    Image flat{Shape{4, 4, 1}};
    for (int64_t i = 0; i < flat.numel(); ++i) flat[i] = 0.5f;
    synth::DegradeSpec d;
    d.gain = 0.2;
    d.sigma_r = 0.0;
    d.k_s = 0.0;
    Rng rng(6);
    const Image out = synth::degrade(flat, d, rng);
    for (int64_t i = 0; i < out.numel(); ++i)
        CHECK(double(out[i]) == doctest::Approx(0.1).epsilon(1e-7));
    d.gain = 0.0;
    CHECK_THROWS_AS(synth::degrade(flat, d, rng), std::invalid_argument);
}

TEST_CASE("synth: degrade noise variance matches sigma_r^2 + k_s * gain * signal") {
    // flat mid-gray input, away from the clamp, Monte-Carlo over one large image
    const double level = 0.5;
    Image flat{Shape{256, 256, 1}};
    for (int64_t i = 0; i < flat.numel(); ++i) flat[i] = float(level);
    synth::DegradeSpec d; // gain 0.2, sigma_r 0.05, k_s 0.02
    Rng rng(7);
    const Image out = synth::degrade(flat, d, rng);
    const double sig = d.gain * level;
    double mean = 0;
    for (int64_t i = 0; i < out.numel(); ++i) mean += out[i];
    mean /= double(out.numel());
    double var = 0;
    for (int64_t i = 0; i < out.numel(); ++i) {
        const double dv = out[i] - mean;
        var += dv * dv;
    }
    var /= double(out.numel());
    const double want = d.sigma_r * d.sigma_r + d.k_s * sig;
    CHECK(mean == doctest::Approx(sig).epsilon(0.01));
    CHECK(var == doctest::Approx(want).epsilon(0.05));
}

TEST_CASE("synth: reference scene fixture properties") {
    // frozen pair: texture correlates the detail subbands, the modality gap
    // decorrelates the approximation, and the ideal target stays achievable
    const ref::RefPair pair = ref::make_reference_pair();
    CHECK(subband_ncc(pair.scene.clean_rgb, pair.scene.nir, 3, true) > 0.9);
    CHECK(subband_ncc(pair.scene.clean_rgb, pair.scene.nir, 3, false) < 0.5);
    CHECK(img::structure_ncc(pair.reference, pair.scene.nir) > 0.95);
    // the noisy observation leaves real headroom for the +4 dB gate
    const double base = img::psnr(pair.noisy, pair.reference);
    CHECK(base > 21.0);
    CHECK(base < 24.0);
}

TEST_CASE("synth: restoration reference is gain-scaled colors plus texture") {
    synth::SceneSpec spec;
    spec.h = spec.w = 32;
    const synth::Scene sc = synth::generate_scene(spec);
    const Image ref = synth::restoration_reference(sc, 0.2);
    double worst = 0;
    for (int64_t y = 0; y < 32; ++y)
        for (int64_t x = 0; x < 32; ++x)
            for (int c = 0; c < 3; ++c) {
                const double want = std::clamp(
                    0.2 * double(sc.color_field.at(y, x, c)) + double(sc.texture.at(y, x, 0)),
                    0.0, 1.0);
                worst = std::max(worst, std::abs(want - double(ref.at(y, x, c))));
            }
    CHECK(worst < 1e-6);
}

// ---------------------------------------------------------------- checkpoint

TEST_CASE("checkpoint: save -> load -> save is bit-identical") {
    TrainConfig cfg;
    cfg.grid_levels = 2;
    cfg.grid_features = 2;
    cfg.hidden = 8;
    cfg.crop = 16;
    cfg.seed = 21;
    auto model = fields::make_model<float>(cfg, 32, 32);
    const auto pa = (scratch() / "ck_a.bin").string();
    const auto pb = (scratch() / "ck_b.bin").string();
    save_checkpoint(pa, model);
    auto back = load_checkpoint(pa);
    save_checkpoint(pb, back);
    std::ifstream fa(pa, std::ios::binary), fb(pb, std::ios::binary);
    const std::string ba((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    const std::string bb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    REQUIRE(!ba.empty());
    CHECK(ba == bb);
    // loaded model renders identically
    const Image ra = fields::render(model, 32, 32);
    const Image rb = fields::render(back, 32, 32);
    CHECK(max_abs_diff(ra, rb) == 0.0);
}

TEST_CASE("checkpoint: corrupt magic or truncation raise IoError") {
    TrainConfig cfg;
    cfg.grid_levels = 2;
    cfg.grid_features = 2;
    cfg.hidden = 8;
    cfg.crop = 16;
    cfg.seed = 22;
    auto model = fields::make_model<float>(cfg, 16, 16);
    const auto path = (scratch() / "ck_corrupt.bin").string();
    save_checkpoint(path, model);

    // flip the magic
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.write("XX", 2);
    }
    CHECK_THROWS_AS(load_checkpoint(path), IoError);

    // rewrite, then truncate the tail
    save_checkpoint(path, model);
    {
        std::ifstream f(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
        bytes.resize(bytes.size() / 2);
        std::ofstream o(path, std::ios::binary | std::ios::trunc);
        o.write(bytes.data(), std::streamsize(bytes.size()));
    }
    CHECK_THROWS_AS(load_checkpoint(path), IoError);
    CHECK_THROWS_AS(load_checkpoint((scratch() / "ck_missing.bin").string()), IoError);
}
