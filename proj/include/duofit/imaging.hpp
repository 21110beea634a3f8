#pragma once

#include <optional>
#include <string>

#include "duofit/tensor.hpp"

namespace duofit::img {

// (H, W, C) float plane, C = 1 or 3. Loaded images are in [0,1]; model
// outputs may be unclamped until export.
using Image = Tensor<float>;

Image load_png(const std::string& path);
void save_png(const std::string& path, const Image& im, int bit_depth = 8);

Image crop_border(const Image& im, int margin);
Image to_y(const Image& rgb);                      // BT.601 luma, (H,W,3) -> (H,W,1)
Tensor<float> to_ycbcr(const Image& rgb);          // diagnostics only
Image gradient_magnitude(const Image& plane1ch);   // forward diffs, (H-1, W-1, 1)
Image box_downsample2(const Image& im);            // 2x2 mean

double ncc(const Image& a, const Image& b);                    // error on constant input
double psnr(const Image& a, const Image& b, double peak = 1.0); // capped at 99 dB
double ssim(const Image& a, const Image& b, int window = 11, double sigma = 1.5,
            double range = 1.0);

// NCC between gradient magnitudes of restored-Y and NIR after border cropping.
double structure_ncc(const Image& restored_rgb, const Image& nir, int margin = 16);

struct PairReport {
    double structure_ncc = 0.0;
    std::optional<double> psnr_gt;
    std::optional<double> ssim_gt;
    std::optional<double> ncc_gt;
};

PairReport evaluate_pair(const Image& restored_rgb, const Image& nir,
                         const Image* clean_gt = nullptr, int margin = 16);
std::string report_table(const PairReport& r);
std::string report_jsonl(const PairReport& r);

} // namespace duofit::img
