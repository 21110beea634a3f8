#include "duofit/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace duofit::synth {

namespace {

inline float clamp01(double v) {
    return static_cast<float>(std::min(1.0, std::max(0.0, v)));
}

} // namespace

Scene generate_scene(const SceneSpec& spec) {
    if (spec.h < 2 || spec.w < 2) throw std::invalid_argument("generate_scene: image too small");
    if (spec.regions < 1) throw std::invalid_argument("generate_scene: need at least one region");

    Rng rng(spec.seed);
    const int64_t h = spec.h, w = spec.w;
    const int n = spec.regions;

    // Draw order is part of the fixture contract: seeds, colors, reflectance
    // permutation, then texture parameters. Reordering changes every image.
    std::vector<double> sy(n), sx(n);
    for (int i = 0; i < n; ++i) {
        sy[i] = rng.uniform(0.0, static_cast<double>(h));
        sx[i] = rng.uniform(0.0, static_cast<double>(w));
    }

    std::vector<double> colors(static_cast<size_t>(n) * 3);
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < 3; ++c)
            colors[static_cast<size_t>(i) * 3 + c] = rng.uniform(spec.color_min, spec.color_max);

    // NIR reflectance: a shuffled remap of region index, so bright RGB regions
    // need not be bright in NIR.
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = n - 1; i > 0; --i) {
        const int j = static_cast<int>(rng.below(static_cast<uint64_t>(i + 1)));
        std::swap(perm[i], perm[j]);
    }
    std::vector<double> refl(n);
    const double rspan = spec.refl_max - spec.refl_min;
    for (int i = 0; i < n; ++i)
        refl[i] = n == 1 ? 0.5 * (spec.refl_min + spec.refl_max)
                         : spec.refl_min +
                               rspan * static_cast<double>(perm[i]) / static_cast<double>(n - 1);

    struct Wave {
        double fy, fx, phase, amp;
    };
    std::vector<Wave> waves(static_cast<size_t>(spec.tex_waves));
    for (auto& wv : waves) {
        const double freq = rng.uniform(spec.tex_freq_min, spec.tex_freq_max);
        const double theta = rng.uniform(0.0, 2.0 * M_PI);
        // cycles per image -> radians per pixel
        wv.fy = 2.0 * M_PI * freq * std::sin(theta) / static_cast<double>(h);
        wv.fx = 2.0 * M_PI * freq * std::cos(theta) / static_cast<double>(w);
        wv.phase = rng.uniform(0.0, 2.0 * M_PI);
        wv.amp = rng.uniform(0.5, 1.0);
    }

    img::Image texture{Shape{h, w, 1}};
    double acc = 0.0;
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            double v = 0.0;
            for (const auto& wv : waves)
                v += wv.amp * std::sin(wv.fy * static_cast<double>(y) + wv.fx * static_cast<double>(x) + wv.phase);
            texture.at(y, x, 0) = static_cast<float>(v);
            acc += v;
        }
    // Normalize to zero mean with the largest excursion equal to the
    // amplitude, so "amplitude 0.15" bounds the texture swing itself.
    const double npix = static_cast<double>(h * w);
    const double mean = acc / npix;
    double peak = 0.0;
    {
        const float* tp = texture.data();
        const int64_t cnt = texture.numel();
        for (int64_t i = 0; i < cnt; ++i)
            peak = std::max(peak, std::abs(static_cast<double>(tp[i]) - mean));
    }
    const double scale = spec.texture_amplitude / std::max(peak, 1e-30);
    {
        float* tp = texture.data();
        const int64_t cnt = texture.numel();
        for (int64_t i = 0; i < cnt; ++i)
            tp[i] = static_cast<float>((tp[i] - mean) * scale);
    }

    Scene out;
    out.color_field = img::Image{Shape{h, w, 3}};
    out.clean_rgb = img::Image{Shape{h, w, 3}};
    out.nir = img::Image{Shape{h, w, 1}};

    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            int best = 0;
            double best_d = 1e300;
            for (int i = 0; i < n; ++i) {
                const double dy = static_cast<double>(y) - sy[i];
                const double dx = static_cast<double>(x) - sx[i];
                const double d = dy * dy + dx * dx;
                if (d < best_d) {
                    best_d = d;
                    best = i;
                }
            }
            const double t = texture.at(y, x, 0);
            for (int c = 0; c < 3; ++c) {
                const double col = colors[static_cast<size_t>(best) * 3 + c];
                out.color_field.at(y, x, c) = static_cast<float>(col);
                out.clean_rgb.at(y, x, c) = clamp01(col + t);
            }
            out.nir.at(y, x, 0) = clamp01(refl[best] + t);
        }
    out.texture = std::move(texture);
    return out;
}

img::Image degrade(const img::Image& clean, const DegradeSpec& spec, Rng& rng) {
    if (spec.gain <= 0.0) throw std::invalid_argument("degrade: gain must be positive");
    img::Image out{clean.shape()};
    const float* src = clean.data();
    float* dst = out.data();
    const int64_t cnt = clean.numel();
    for (int64_t i = 0; i < cnt; ++i) {
        const double sig = spec.gain * src[i];
        const double var = spec.sigma_r * spec.sigma_r + spec.k_s * sig;
        dst[i] = clamp01(sig + rng.normal(0.0, std::sqrt(std::max(0.0, var))));
    }
    return out;
}

img::Image restoration_reference(const Scene& scene, double gain) {
    const int64_t h = scene.color_field.dim(0), w = scene.color_field.dim(1);
    img::Image out{Shape{h, w, 3}};
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            const double t = scene.texture.at(y, x, 0);
            for (int c = 0; c < 3; ++c)
                out.at(y, x, c) = clamp01(gain * scene.color_field.at(y, x, c) + t);
        }
    return out;
}

} // namespace duofit::synth
