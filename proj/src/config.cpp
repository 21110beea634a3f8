#include "duofit/config.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "duofit/errors.hpp"

namespace duofit {

namespace {

std::string fmt_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

struct Field {
    const char* key;
    const char* desc;
    std::function<std::string(const TrainConfig&)> get;
    std::function<void(TrainConfig&, const std::string&)> set;
};

template <typename T>
T parse_num(const std::string& key, const std::string& v) {
    std::istringstream is(v);
    T out{};
    is >> out;
    if (is.fail() || !is.eof())
        throw std::invalid_argument("config: bad value '" + v + "' for key '" + key + "'");
    return out;
}

#define NUM_FIELD(name, d)                                                               \
    Field{#name, d,                                                                      \
          [](const TrainConfig& c) {                                                     \
              if constexpr (std::is_floating_point_v<decltype(c.name)>)                  \
                  return fmt_double(c.name);                                             \
              else                                                                       \
                  return std::to_string(c.name);                                         \
          },                                                                             \
          [](TrainConfig& c, const std::string& v) {                                     \
              c.name = parse_num<decltype(c.name)>(#name, v);                            \
          }}

const std::vector<Field>& fields() {
    static const std::vector<Field> f = {
        NUM_FIELD(iterations, "optimization steps"),
        NUM_FIELD(crop, "training window side, multiple of 2^wavelet_levels"),
        NUM_FIELD(full_frame_max, "train full-frame when H*W <= this squared"),
        NUM_FIELD(seed, "RNG seed for init and crop sampling"),
        NUM_FIELD(deterministic, "1 = fixed reduction order, single-threaded BLAS"),
        NUM_FIELD(threads, "OpenMP threads for pixel-parallel kernels; 0 = DUOFIT_THREADS env or 1"),
        NUM_FIELD(wavelet_levels, "analysis depth S of the Haar pyramid"),
        NUM_FIELD(eps, "Charbonnier tolerance in the approximation loss"),
        NUM_FIELD(lambda1, "l1 weight on detail subbands"),
        NUM_FIELD(lambda2, "SSIM weight on detail subbands"),
        NUM_FIELD(alpha, "spectral decoupling regularizer weight"),
        NUM_FIELD(gamma, "zero-mean centering weight"),
        NUM_FIELD(ssim_window, "Gaussian window side for subband SSIM, odd"),
        NUM_FIELD(ssim_sigma, "Gaussian window sigma"),
        NUM_FIELD(ssim_range, "dynamic range R in the SSIM constants"),
        NUM_FIELD(grad_abs, "1 = match |gradient| instead of signed gradients"),
        NUM_FIELD(use_loss_grad, "0 ablates NIR gradient supervision"),
        NUM_FIELD(use_loss_zero, "0 ablates the zero-mean constraint"),
        NUM_FIELD(use_loss_reg, "0 ablates the spectral regularizer"),
        NUM_FIELD(grid_levels, "feature grid resolutions per branch"),
        NUM_FIELD(grid_features, "feature channels per grid level"),
        NUM_FIELD(low_frac_min, "coarsest low-branch grid, fraction of image dim"),
        NUM_FIELD(low_frac_max, "finest low-branch grid fraction"),
        NUM_FIELD(high_frac_min, "coarsest high-branch grid fraction"),
        NUM_FIELD(high_frac_max, "finest high-branch grid fraction"),
        NUM_FIELD(hidden, "decoder MLP width"),
        NUM_FIELD(hf_per_channel, "1 = per-RGB structure field instead of scalar"),
        NUM_FIELD(hash_cap_log2, "grids above 2^this cells share a hashed table"),
        NUM_FIELD(hash_probes, "open-addressing probe length"),
        NUM_FIELD(lr_muon, "step size for decoder weight matrices"),
        NUM_FIELD(muon_momentum, "momentum of the orthogonalized buffer"),
        NUM_FIELD(ns_steps, "Newton-Schulz iterations"),
        NUM_FIELD(nesterov, "1 = Nesterov-style momentum blend"),
        NUM_FIELD(lr_grids, "Adam step size for feature grids"),
        NUM_FIELD(lr_scalars, "Adam step size for biases, beta and log-variances"),
        NUM_FIELD(beta1, "Adam first-moment decay"),
        NUM_FIELD(beta2, "Adam second-moment decay"),
        NUM_FIELD(adam_eps, "Adam denominator floor"),
        NUM_FIELD(cosine_decay, "1 = cosine learning-rate decay to zero"),
        NUM_FIELD(log_every, "iterations between log rows"),
        NUM_FIELD(checkpoint_every, "iterations between periodic checkpoints; 0 = final only"),
    };
    return f;
}

#undef NUM_FIELD

} // namespace

void TrainConfig::validate() const {
    if (iterations < 0) throw std::invalid_argument("config: iterations must be >= 0");
    if (wavelet_levels < 1) throw std::invalid_argument("config: wavelet_levels must be >= 1");
    const int64_t div = int64_t(1) << wavelet_levels;
    if (crop < div || crop % div != 0)
        throw std::invalid_argument("config: crop " + std::to_string(crop) +
                                    " must be a positive multiple of 2^wavelet_levels = " +
                                    std::to_string(div));
    if (eps <= 0) throw std::invalid_argument("config: eps must be > 0");
    if (lambda1 < 0 || lambda2 < 0)
        throw std::invalid_argument("config: lambda1/lambda2 must be >= 0");
    if (grid_levels < 1 || grid_features < 1)
        throw std::invalid_argument("config: grid_levels and grid_features must be >= 1");
    if (!(low_frac_min > 0 && low_frac_min <= low_frac_max && high_frac_min <= high_frac_max))
        throw std::invalid_argument("config: grid resolution bands must be positive and ordered");
    if (low_frac_max > high_frac_min + 1e-12)
        throw std::invalid_argument("config: low band must not exceed the high band start");
    if (hidden < 1) throw std::invalid_argument("config: hidden must be >= 1");
    if (ssim_window < 3 || ssim_window % 2 == 0)
        throw std::invalid_argument("config: ssim_window must be odd and >= 3");
    if (ns_steps < 1) throw std::invalid_argument("config: ns_steps must be >= 1");
}

std::vector<ConfigField> list_config_fields(const TrainConfig& c) {
    std::vector<ConfigField> out;
    for (const Field& f : fields()) out.push_back({f.key, f.get(c), f.desc});
    return out;
}

std::string serialize_config(const TrainConfig& c) {
    std::ostringstream os;
    for (const Field& f : fields()) os << f.key << "=" << f.get(c) << "\n";
    return os.str();
}

void set_config_field(TrainConfig& c, const std::string& key, const std::string& value) {
    for (const Field& f : fields()) {
        if (key == f.key) {
            f.set(c, value);
            return;
        }
    }
    throw std::invalid_argument("config: unknown key '" + key + "'");
}

TrainConfig parse_config_text(const std::string& text) {
    TrainConfig c;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        const size_t a = line.find_first_not_of(" \t\r");
        if (a == std::string::npos) continue;
        const size_t b = line.find_last_not_of(" \t\r");
        line = line.substr(a, b - a + 1);
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                        " is not key=value: '" + line + "'");
        std::string key = line.substr(0, eq);
        std::string value = line.substr(eq + 1);
        while (!key.empty() && (key.back() == ' ' || key.back() == '\t')) key.pop_back();
        size_t v0 = value.find_first_not_of(" \t");
        value = v0 == std::string::npos ? "" : value.substr(v0);
        set_config_field(c, key, value);
    }
    return c;
}

TrainConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

uint64_t config_digest(const TrainConfig& c) {
    const std::string s = serialize_config(c);
    uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return h;
}

} // namespace duofit
