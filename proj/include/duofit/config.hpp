#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace duofit {

// Every knob of a fit, serializable as a flat key=value text block. The same
// text is embedded in checkpoints so a saved model can be rebuilt exactly.
struct TrainConfig {
    // schedule
    int64_t iterations = 10000;
    int64_t crop = 256;          // training window, must divide by 2^wavelet_levels
    int64_t full_frame_max = 512; // train full-frame when H*W <= this^2
    uint64_t seed = 1;
    int deterministic = 1;
    int threads = 0; // 0 = DUOFIT_THREADS env or 1

    // wavelet / losses
    int wavelet_levels = 3;
    double eps = 1e-3;     // Charbonnier tolerance
    double lambda1 = 0.5;  // l1 weight in the detail loss
    double lambda2 = 0.5;  // SSIM weight in the detail loss
    double alpha = 0.01;   // spectral decoupling regularizer weight
    double gamma = 0.1;    // zero-mean centering weight
    int ssim_window = 11;
    double ssim_sigma = 1.5;
    double ssim_range = 1.0;
    int grad_abs = 0;        // compare |grad| instead of signed gradients
    int use_loss_grad = 1;   // ablation switches
    int use_loss_zero = 1;
    int use_loss_reg = 1;

    // model
    int grid_levels = 4;
    int grid_features = 2;
    double low_frac_min = 1.0 / 16.0; // grid resolution band, fraction of image dim
    double low_frac_max = 1.0 / 4.0;
    double high_frac_min = 1.0 / 4.0;
    double high_frac_max = 1.0 / 2.0;
    int hidden = 128;
    int hf_per_channel = 0; // structure field per RGB channel instead of scalar
    int hash_cap_log2 = 16; // levels above 2^this many cells use the hashed store
    int hash_probes = 8;

    // optimizers
    double lr_muon = 1e-3;
    double muon_momentum = 0.95;
    int ns_steps = 5;
    int nesterov = 0;
    double lr_grids = 1e-2;
    double lr_scalars = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.99;
    double adam_eps = 1e-8;
    int cosine_decay = 0;

    // logging
    int64_t log_every = 10;
    int64_t checkpoint_every = 0; // 0 = final only

    void validate() const; // throws std::invalid_argument on bad combinations
};

struct ConfigField {
    std::string key;
    std::string value; // current value, serialized
    std::string desc;
};
std::vector<ConfigField> list_config_fields(const TrainConfig& c);

std::string serialize_config(const TrainConfig& c);
TrainConfig parse_config_text(const std::string& text);   // unknown key -> error
TrainConfig load_config_file(const std::string& path);    // IoError if unreadable
void set_config_field(TrainConfig& c, const std::string& key, const std::string& value);
uint64_t config_digest(const TrainConfig& c); // FNV-1a over the serialized text

} // namespace duofit
