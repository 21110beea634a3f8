#pragma once

#include <cstdint>

#include "duofit/imaging.hpp"
#include "duofit/rng.hpp"

namespace duofit::synth {

// Piecewise-constant color regions with a shared band-limited texture: the
// RGB image carries the texture on its luminance, the NIR image carries the
// SAME texture over per-region reflectances drawn independently of the RGB
// colors. High frequencies correlate across the pair by construction while
// low-frequency levels do not.
struct SceneSpec {
    uint64_t seed = 42;
    int64_t h = 256, w = 256;
    int regions = 12;
    double texture_amplitude = 0.15; // peak texture excursion
    double tex_freq_min = 20.0;      // cycles per image
    double tex_freq_max = 56.0;
    int tex_waves = 24;
    // Region contrast. Boundary steps must stay small against the texture
    // gradients or the pair's structure maps decorrelate at the borders and
    // no restoration, however good, can align with both images at once.
    double color_min = 0.50, color_max = 0.85;
    double refl_min = 0.47, refl_max = 0.53; // NIR remap span
};

struct DegradeSpec {
    double gain = 0.2;    // brightness scale in (0, 1]
    double sigma_r = 0.05; // read noise std
    double k_s = 0.02;    // shot noise scale (variance ~ signal)
};

struct Scene {
    img::Image clean_rgb;   // colors + texture, clamped to [0,1]
    img::Image nir;         // reflectance remap + texture, clamped
    img::Image color_field; // colors alone (no texture)
    img::Image texture;     // (h, w, 1), zero-mean
};

Scene generate_scene(const SceneSpec& spec);
img::Image degrade(const img::Image& clean, const DegradeSpec& spec, Rng& rng);

// Noise-free target for PSNR gating: the scene's colors at the degraded
// brightness plus the full-amplitude shared texture — the signal content a
// restoration of (degraded RGB, NIR) can actually recover.
img::Image restoration_reference(const Scene& scene, double gain);

} // namespace duofit::synth
