// Command-line surface: fit / render / metrics / synth / dwt.
// Exit codes: 0 ok, 1 usage, 2 I/O, 3 numerical abort.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "duofit/checkpoint.hpp"
#include "duofit/config.hpp"
#include "duofit/errors.hpp"
#include "duofit/imaging.hpp"
#include "duofit/synth.hpp"
#include "duofit/trainer.hpp"
#include "duofit/wavelet.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace duofit;

namespace {

struct ConfigArgs {
    std::string config_path;
    std::map<std::string, std::string> overrides; // flag -> raw value
};

// One --<key> flag per config field so experiment records stay greppable.
void attach_config_flags(CLI::App* cmd, ConfigArgs& args) {
    cmd->add_option("--config", args.config_path, "key=value config file; flags override it")
        ->check(CLI::ExistingFile);
    const TrainConfig defaults;
    for (const auto& f : list_config_fields(defaults)) {
        const std::string key = f.key;
        cmd->add_option_function<std::string>(
               "--" + key, [&args, key](const std::string& v) { args.overrides[key] = v; },
               f.desc)
            ->default_str(f.value);
    }
}

TrainConfig resolve_config(const ConfigArgs& args) {
    TrainConfig cfg;
    if (!args.config_path.empty()) cfg = load_config_file(args.config_path);
    for (const auto& [k, v] : args.overrides) set_config_field(cfg, k, v);
    cfg.validate();
    return cfg;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    os << text;
    if (!os) throw IoError("write failed for '" + path + "'");
}

std::string hex64(uint64_t v) {
    char buf[19];
    std::snprintf(buf, sizeof buf, "0x%016llx", static_cast<unsigned long long>(v));
    return buf;
}

int run_fit(const std::string& rgb_path, const std::string& nir_path, const std::string& out_dir,
            const ConfigArgs& cargs, bool quiet) {
    const TrainConfig cfg = resolve_config(cargs);
    const img::Image rgb = img::load_png(rgb_path);
    const img::Image nir = img::load_png(nir_path);
    fs::create_directories(out_dir);
    const auto out = [&out_dir](const char* name) { return (fs::path(out_dir) / name).string(); };

    std::ofstream csv(out("train_log.csv"), std::ios::binary);
    if (!csv) throw IoError("cannot open '" + out("train_log.csv") + "' for writing");
    csv << losses::LossReport::csv_header() << "\n";

    train::FitOptions opts;
    opts.quiet = quiet;
    opts.abort_checkpoint_path = out("model.ckpt");
    opts.periodic_checkpoint_path = out("model.ckpt");
    opts.on_log = [&csv, quiet](const losses::LossReport& r) {
        csv << r.csv_row() << "\n";
        if (!quiet)
            std::cout << "iter " << r.iteration << "  total " << r.total << "  lf " << r.lf
                      << "  hf " << r.hf << "  grad " << r.grad << "\n";
    };

    train::FitResult res;
    try {
        res = train::fit(rgb, nir, cfg, opts);
    } catch (...) {
        // keep the checkpoint written by the abort path, drop partial outputs
        csv.close();
        std::error_code ec;
        fs::remove(out("train_log.csv"), ec);
        throw;
    }

    save_checkpoint(out("model.ckpt"), res.model);
    img::save_png(out("restored.png"), res.restored);
    img::save_png(out("panel_lf.png"), res.panel_lf);
    img::save_png(out("panel_hf.png"), res.panel_hf);
    csv.close();

    json meta;
    meta["rgb"] = rgb_path;
    meta["nir"] = nir_path;
    meta["height"] = res.model.img_h;
    meta["width"] = res.model.img_w;
    meta["parameters"] = fields::parameter_count(res.model);
    meta["iterations"] = cfg.iterations;
    meta["wall_seconds"] = res.wall_seconds;
    meta["per_iter_ms"] = res.per_iter_ms;
    meta["panel_hf_scale"] = res.panel_hf_scale; // [-m, m] -> [0, 1] display map
    meta["config_digest"] = hex64(config_digest(cfg));
    meta["outputs"] = {"restored.png", "model.ckpt", "train_log.csv", "panel_lf.png",
                       "panel_hf.png"};
    write_text(out("fit_meta.json"), meta.dump(2) + "\n");

    if (!quiet) std::cout << "wrote " << out_dir << "/{restored.png,model.ckpt,...}\n";
    return 0;
}

int run_render(const std::string& ckpt_path, const std::string& out_path, int64_t width,
               int64_t height) {
    auto model = load_checkpoint(ckpt_path);
    const int64_t w = width > 0 ? width : model.img_w;
    const int64_t h = height > 0 ? height : model.img_h;
    img::save_png(out_path, fields::render(model, h, w));
    return 0;
}

int run_metrics(const std::string& restored_path, const std::string& nir_path,
                const std::string& gt_path, const std::string& out_json) {
    const img::Image restored = img::load_png(restored_path);
    const img::Image nir = img::load_png(nir_path);
    std::optional<img::Image> gt;
    if (!gt_path.empty()) gt = img::load_png(gt_path);
    const img::PairReport rep = img::evaluate_pair(restored, nir, gt ? &*gt : nullptr);
    std::cout << img::report_table(rep);
    if (!out_json.empty()) write_text(out_json, img::report_jsonl(rep) + "\n");
    return 0;
}

int run_synth(const std::string& out_dir, synth::SceneSpec scene, synth::DegradeSpec degrade,
              uint64_t noise_seed) {
    const synth::Scene s = synth::generate_scene(scene);
    Rng noise_rng(noise_seed);
    const img::Image noisy = synth::degrade(s.clean_rgb, degrade, noise_rng);
    const img::Image reference = synth::restoration_reference(s, degrade.gain);

    fs::create_directories(out_dir);
    const auto out = [&out_dir](const char* name) { return (fs::path(out_dir) / name).string(); };
    img::save_png(out("clean_rgb.png"), s.clean_rgb);
    img::save_png(out("noisy_rgb.png"), noisy);
    img::save_png(out("nir.png"), s.nir);
    img::save_png(out("reference.png"), reference);

    json meta;
    meta["seed"] = scene.seed;
    meta["height"] = scene.h;
    meta["width"] = scene.w;
    meta["regions"] = scene.regions;
    meta["texture_amplitude"] = scene.texture_amplitude;
    meta["tex_freq_min"] = scene.tex_freq_min;
    meta["tex_freq_max"] = scene.tex_freq_max;
    meta["tex_waves"] = scene.tex_waves;
    meta["gain"] = degrade.gain;
    meta["sigma_r"] = degrade.sigma_r;
    meta["k_s"] = degrade.k_s;
    meta["noise_seed"] = noise_seed;
    meta["outputs"] = {"clean_rgb.png", "noisy_rgb.png", "nir.png", "reference.png"};
    meta["reference"] = "clamp(gain * region colors + shared texture); the noise-free target "
                        "at the degraded brightness";
    write_text(out("scene.json"), meta.dump(2) + "\n");
    return 0;
}

int run_dwt(const std::string& in_path, int levels, const std::string& out_dir) {
    const img::Image im = img::load_png(in_path);
    const img::Image plane = im.dim(2) == 3 ? img::to_y(im) : im;
    const int64_t h = plane.dim(0), w = plane.dim(1);
    const int64_t div = int64_t(1) << levels;
    if (levels < 1) throw std::invalid_argument("dwt: levels must be >= 1");
    if (h % div != 0 || w % div != 0)
        throw std::invalid_argument("dwt: dims " + plane.shape().str() +
                                    " not divisible by 2^levels = " + std::to_string(div) +
                                    "; crop the image to a multiple of " + std::to_string(div) +
                                    " first");

    Tensor<double> p{Shape{h, w, 1}};
    for (int64_t i = 0; i < p.numel(); ++i) p[i] = plane[i];
    const wav::Pyramid<double> pyr = wav::decompose(p, levels);

    fs::create_directories(out_dir);
    json meta;
    meta["input"] = in_path;
    meta["levels"] = levels;
    meta["normalization"] =
        "LL divided by 2^level; details mapped [-m, m] -> [0, 1] with per-subband m = max |v| "
        "(mid-gray when the subband is all zero)";

    auto save_centered = [&](const Tensor<double>& sb, const std::string& name) {
        double m = 0;
        for (int64_t i = 0; i < sb.numel(); ++i) m = std::max(m, std::abs(sb[i]));
        img::Image view{sb.shape()};
        for (int64_t i = 0; i < sb.numel(); ++i)
            view[i] = m < 1e-300 ? 0.5f : static_cast<float>(0.5 + 0.5 * sb[i] / m);
        img::save_png((fs::path(out_dir) / (name + ".png")).string(), view);
        meta["scales"][name] = m;
    };

    for (int l = 0; l < levels; ++l) {
        const auto& d = pyr.details[l];
        const std::string suffix = "_L" + std::to_string(l + 1);
        save_centered(d.lh, "lh" + suffix);
        save_centered(d.hl, "hl" + suffix);
        save_centered(d.hh, "hh" + suffix);
    }
    const Tensor<double>& ll = pyr.ll.back();
    img::Image view{ll.shape()};
    const double scale = double(int64_t(1) << levels);
    for (int64_t i = 0; i < ll.numel(); ++i) {
        const double v = ll[i] / scale;
        view[i] = static_cast<float>(std::min(1.0, std::max(0.0, v)));
    }
    img::save_png((fs::path(out_dir) / ("ll_L" + std::to_string(levels) + ".png")).string(),
                  view);
    meta["scales"]["ll_L" + std::to_string(levels)] = scale;

    write_text((fs::path(out_dir) / "dwt_meta.json").string(), meta.dump(2) + "\n");
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"duofit: per-pair RGB+NIR low-light restoration by fitting a "
                 "frequency-decoupled implicit image model"};
    app.require_subcommand(1);

    // fit
    auto* fit = app.add_subcommand("fit", "fit a model to one RGB+NIR pair");
    std::string rgb_path, nir_path, out_dir = ".";
    bool quiet = false;
    fit->add_option("--rgb", rgb_path, "low-light RGB PNG")->required()->check(CLI::ExistingFile);
    fit->add_option("--nir", nir_path, "aligned NIR PNG")->required()->check(CLI::ExistingFile);
    fit->add_option("--out", out_dir, "output directory");
    fit->add_flag("--quiet", quiet, "suppress progress lines");
    ConfigArgs fit_cfg;
    attach_config_flags(fit, fit_cfg);

    // render
    auto* render = app.add_subcommand("render", "render a fitted model at any resolution");
    std::string ckpt_path, render_out;
    int64_t width = 0, height = 0;
    render->add_option("--checkpoint", ckpt_path, "model checkpoint")
        ->required()
        ->check(CLI::ExistingFile);
    render->add_option("--out", render_out, "output PNG")->required();
    render->add_option("--width", width, "output width (default: training width)")
        ->check(CLI::PositiveNumber);
    render->add_option("--height", height, "output height (default: training height)")
        ->check(CLI::PositiveNumber);

    // metrics
    auto* metrics = app.add_subcommand("metrics", "evaluate a restored image");
    std::string m_restored, m_nir, m_gt, m_json;
    metrics->add_option("--restored", m_restored, "restored RGB PNG")
        ->required()
        ->check(CLI::ExistingFile);
    metrics->add_option("--nir", m_nir, "aligned NIR PNG")->required()->check(CLI::ExistingFile);
    metrics->add_option("--gt", m_gt, "clean reference PNG (enables PSNR/SSIM/NCC)")
        ->check(CLI::ExistingFile);
    metrics->add_option("--out-json", m_json, "also write the report as JSON lines");

    // synth
    auto* synth_cmd = app.add_subcommand("synth", "generate an aligned synthetic RGB+NIR pair");
    std::string synth_out = ".";
    synth::SceneSpec scene;
    synth::DegradeSpec degrade;
    uint64_t noise_seed = 1000;
    synth_cmd->add_option("--out", synth_out, "output directory");
    synth_cmd->add_option("--seed", scene.seed, "scene seed");
    synth_cmd->add_option("--height", scene.h, "image height")->check(CLI::PositiveNumber);
    synth_cmd->add_option("--width", scene.w, "image width")->check(CLI::PositiveNumber);
    synth_cmd->add_option("--regions", scene.regions, "number of flat color regions");
    synth_cmd->add_option("--amplitude", scene.texture_amplitude, "shared texture amplitude");
    synth_cmd->add_option("--gain", degrade.gain, "brightness gain of the degraded RGB");
    synth_cmd->add_option("--sigma-r", degrade.sigma_r, "read noise std");
    synth_cmd->add_option("--k-s", degrade.k_s, "signal-dependent noise scale");
    synth_cmd->add_option("--noise-seed", noise_seed, "seed of the degradation stream");

    // dwt
    auto* dwt = app.add_subcommand("dwt", "decompose an image into wavelet subband previews");
    std::string dwt_in, dwt_out = ".";
    int dwt_levels = 3;
    dwt->add_option("--in", dwt_in, "input PNG (RGB uses its luma)")
        ->required()
        ->check(CLI::ExistingFile);
    dwt->add_option("--levels", dwt_levels, "analysis depth");
    dwt->add_option("--out-dir", dwt_out, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        return 1;
    }

    try {
        if (app.got_subcommand(fit)) return run_fit(rgb_path, nir_path, out_dir, fit_cfg, quiet);
        if (app.got_subcommand(render)) return run_render(ckpt_path, render_out, width, height);
        if (app.got_subcommand(metrics)) return run_metrics(m_restored, m_nir, m_gt, m_json);
        if (app.got_subcommand(synth_cmd)) return run_synth(synth_out, scene, degrade, noise_seed);
        if (app.got_subcommand(dwt)) return run_dwt(dwt_in, dwt_levels, dwt_out);
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const NumericalAbort& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
