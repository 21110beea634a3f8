#include "duofit/imaging.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <sstream>
#include <vector>

#include "duofit/errors.hpp"

namespace duofit::img {

namespace {

struct FileCloser {
    FILE* f = nullptr;
    ~FileCloser() {
        if (f) std::fclose(f);
    }
};

const char* color_type_name(int t) {
    switch (t) {
        case PNG_COLOR_TYPE_GRAY: return "gray";
        case PNG_COLOR_TYPE_RGB: return "rgb";
        case PNG_COLOR_TYPE_PALETTE: return "palette";
        case PNG_COLOR_TYPE_GRAY_ALPHA: return "gray+alpha";
        case PNG_COLOR_TYPE_RGB_ALPHA: return "rgb+alpha";
        default: return "unknown";
    }
}

} // namespace

Image load_png(const std::string& path) {
    FileCloser fc{std::fopen(path.c_str(), "rb")};
    if (!fc.f) throw IoError("cannot open image: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("libpng init failed for " + path);
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("libpng init failed for " + path);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("malformed PNG: " + path);
    }
    png_init_io(png, fc.f);
    png_read_info(png, info);

    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    const int depth = png_get_bit_depth(png, info);
    const int ctype = png_get_color_type(png, info);

    if ((ctype != PNG_COLOR_TYPE_GRAY && ctype != PNG_COLOR_TYPE_RGB) ||
        (depth != 8 && depth != 16)) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("unsupported PNG format in " + path + ": " + color_type_name(ctype) + " " +
                      std::to_string(depth) + "-bit (need 8/16-bit gray or rgb)");
    }
    const int channels = ctype == PNG_COLOR_TYPE_GRAY ? 1 : 3;

    png_set_interlace_handling(png);
    png_read_update_info(png, info);

    const size_t rowbytes = png_get_rowbytes(png, info);
    std::vector<unsigned char> raw(static_cast<size_t>(h) * rowbytes);
    std::vector<png_bytep> rows(h);
    for (int i = 0; i < h; ++i) rows[i] = raw.data() + static_cast<size_t>(i) * rowbytes;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    Image out{Shape{h, w, channels}};
    float* op = out.data();
    if (depth == 8) {
        for (int i = 0; i < h; ++i) {
            const unsigned char* r = rows[i];
            for (int64_t j = 0; j < int64_t(w) * channels; ++j)
                op[int64_t(i) * w * channels + j] = static_cast<float>(r[j]) / 255.0f;
        }
    } else {
        for (int i = 0; i < h; ++i) {
            const unsigned char* r = rows[i]; // PNG 16-bit samples are big-endian
            for (int64_t j = 0; j < int64_t(w) * channels; ++j) {
                const unsigned v = (unsigned(r[2 * j]) << 8) | unsigned(r[2 * j + 1]);
                op[int64_t(i) * w * channels + j] = static_cast<float>(v) / 65535.0f;
            }
        }
    }
    return out;
}

void save_png(const std::string& path, const Image& im, int bit_depth) {
    if (im.rank() != 3 || (im.dim(2) != 1 && im.dim(2) != 3))
        throw std::invalid_argument("save_png: expects (H, W, 1) or (H, W, 3), got " +
                                    im.shape().str());
    if (bit_depth != 8 && bit_depth != 16)
        throw std::invalid_argument("save_png: bit depth must be 8 or 16");

    const int h = static_cast<int>(im.dim(0)), w = static_cast<int>(im.dim(1)),
              c = static_cast<int>(im.dim(2));
    FileCloser fc{std::fopen(path.c_str(), "wb")};
    if (!fc.f) throw IoError("cannot write image: " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("libpng init failed for " + path);
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("libpng init failed for " + path);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("PNG write failed: " + path);
    }
    png_init_io(png, fc.f);
    png_set_IHDR(png, info, w, h, bit_depth,
                 c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    const int64_t stride = int64_t(w) * c;
    const float maxv = bit_depth == 8 ? 255.0f : 65535.0f;
    std::vector<unsigned char> row(static_cast<size_t>(stride) * (bit_depth / 8));
    for (int i = 0; i < h; ++i) {
        const float* src = im.data() + int64_t(i) * stride;
        for (int64_t j = 0; j < stride; ++j) {
            float v = src[j];
            v = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
            const long q = std::lround(double(v) * maxv);
            if (bit_depth == 8) {
                row[j] = static_cast<unsigned char>(q);
            } else {
                row[2 * j] = static_cast<unsigned char>(q >> 8); // big-endian
                row[2 * j + 1] = static_cast<unsigned char>(q & 0xff);
            }
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Image crop_border(const Image& im, int margin) {
    if (margin < 0) throw std::invalid_argument("crop_border: negative margin");
    if (margin == 0) return im;
    const int64_t H = im.dim(0), W = im.dim(1), C = im.dim(2);
    if (2 * margin >= std::min(H, W))
        throw std::invalid_argument("crop_border: image " + im.shape().str() +
                                    " too small for margin " + std::to_string(margin));
    Image out{Shape{H - 2 * margin, W - 2 * margin, C}};
    for (int64_t i = 0; i < out.dim(0); ++i)
        for (int64_t j = 0; j < out.dim(1); ++j)
            for (int64_t c = 0; c < C; ++c) out.at(i, j, c) = im.at(i + margin, j + margin, c);
    return out;
}

Image to_y(const Image& rgb) {
    if (rgb.dim(2) != 3) throw std::invalid_argument("to_y: expects 3 channels");
    Image out{Shape{rgb.dim(0), rgb.dim(1), 1}};
    for (int64_t i = 0; i < rgb.dim(0); ++i)
        for (int64_t j = 0; j < rgb.dim(1); ++j)
            out.at(i, j, 0) = 0.299f * rgb.at(i, j, 0) + 0.587f * rgb.at(i, j, 1) +
                              0.114f * rgb.at(i, j, 2);
    return out;
}

Tensor<float> to_ycbcr(const Image& rgb) {
    if (rgb.dim(2) != 3) throw std::invalid_argument("to_ycbcr: expects 3 channels");
    Tensor<float> out{rgb.shape()};
    for (int64_t i = 0; i < rgb.dim(0); ++i)
        for (int64_t j = 0; j < rgb.dim(1); ++j) {
            const float r = rgb.at(i, j, 0), g = rgb.at(i, j, 1), b = rgb.at(i, j, 2);
            out.at(i, j, 0) = 0.299f * r + 0.587f * g + 0.114f * b;
            out.at(i, j, 1) = 0.5f - 0.168736f * r - 0.331264f * g + 0.5f * b;
            out.at(i, j, 2) = 0.5f + 0.5f * r - 0.418688f * g - 0.081312f * b;
        }
    return out;
}

Image gradient_magnitude(const Image& p) {
    if (p.dim(2) != 1) throw std::invalid_argument("gradient_magnitude: expects 1 channel");
    const int64_t H = p.dim(0), W = p.dim(1);
    if (H < 2 || W < 2) throw std::invalid_argument("gradient_magnitude: plane too small");
    Image out{Shape{H - 1, W - 1, 1}};
    for (int64_t i = 0; i + 1 < H; ++i)
        for (int64_t j = 0; j + 1 < W; ++j) {
            const float dx = p.at(i, j + 1, 0) - p.at(i, j, 0);
            const float dy = p.at(i + 1, j, 0) - p.at(i, j, 0);
            out.at(i, j, 0) = std::sqrt(dx * dx + dy * dy);
        }
    return out;
}

Image box_downsample2(const Image& im) {
    const int64_t H = im.dim(0), W = im.dim(1), C = im.dim(2);
    if (H % 2 != 0 || W % 2 != 0)
        throw std::invalid_argument("box_downsample2: odd dimension " + im.shape().str());
    Image out{Shape{H / 2, W / 2, C}};
    for (int64_t i = 0; i < H / 2; ++i)
        for (int64_t j = 0; j < W / 2; ++j)
            for (int64_t c = 0; c < C; ++c)
                out.at(i, j, c) = 0.25f * (im.at(2 * i, 2 * j, c) + im.at(2 * i, 2 * j + 1, c) +
                                           im.at(2 * i + 1, 2 * j, c) +
                                           im.at(2 * i + 1, 2 * j + 1, c));
    return out;
}

namespace {

void check_same_shape(const Image& a, const Image& b, const char* who) {
    if (!(a.shape() == b.shape()))
        throw std::invalid_argument(std::string(who) + ": shape mismatch " + a.shape().str() +
                                    " vs " + b.shape().str());
}

} // namespace

double ncc(const Image& a, const Image& b) {
    check_same_shape(a, b, "ncc");
    const int64_t n = a.numel();
    double ma = 0, mb = 0;
    for (int64_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= double(n);
    mb /= double(n);
    double va = 0, vb = 0, cov = 0;
    for (int64_t i = 0; i < n; ++i) {
        const double da = a[i] - ma, db = b[i] - mb;
        va += da * da;
        vb += db * db;
        cov += da * db;
    }
    if (va == 0.0 || vb == 0.0)
        throw std::domain_error("ncc: constant input, correlation undefined");
    return cov / std::sqrt(va * vb);
}

double psnr(const Image& a, const Image& b, double peak) {
    check_same_shape(a, b, "psnr");
    double mse = 0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        const double d = double(a[i]) - double(b[i]);
        mse += d * d;
    }
    mse /= double(a.numel());
    if (mse == 0.0) return 99.0; // identical-input sentinel
    const double v = 10.0 * std::log10(peak * peak / mse);
    return v > 99.0 ? 99.0 : v;
}

namespace {

std::vector<double> gaussian_window(int window, double sigma) {
    std::vector<double> w(window);
    const double c = (window - 1) / 2.0;
    double s = 0;
    for (int i = 0; i < window; ++i) {
        w[i] = std::exp(-(i - c) * (i - c) / (2.0 * sigma * sigma));
        s += w[i];
    }
    for (double& v : w) v /= s;
    return w;
}

// Valid-region separable Gaussian filter of one channel plane (double math).
std::vector<double> filter_valid(const std::vector<double>& x, int64_t H, int64_t W,
                                 const std::vector<double>& k) {
    const int64_t K = static_cast<int64_t>(k.size());
    const int64_t Wo = W - K + 1, Ho = H - K + 1;
    std::vector<double> tmp(static_cast<size_t>(H) * Wo);
    for (int64_t i = 0; i < H; ++i)
        for (int64_t j = 0; j < Wo; ++j) {
            double acc = 0;
            for (int64_t t = 0; t < K; ++t) acc += k[t] * x[i * W + j + t];
            tmp[i * Wo + j] = acc;
        }
    std::vector<double> out(static_cast<size_t>(Ho) * Wo);
    for (int64_t i = 0; i < Ho; ++i)
        for (int64_t j = 0; j < Wo; ++j) {
            double acc = 0;
            for (int64_t t = 0; t < K; ++t) acc += k[t] * tmp[(i + t) * Wo + j];
            out[i * Wo + j] = acc;
        }
    return out;
}

double ssim_channel(const std::vector<double>& a, const std::vector<double>& b, int64_t H,
                    int64_t W, int window, double sigma, double range) {
    const std::vector<double> k = gaussian_window(window, sigma);
    const int64_t n = (H - window + 1) * (W - window + 1);
    std::vector<double> a2(a.size()), b2(b.size()), ab(a.size());
    for (size_t i = 0; i < a.size(); ++i) {
        a2[i] = a[i] * a[i];
        b2[i] = b[i] * b[i];
        ab[i] = a[i] * b[i];
    }
    const auto mu_a = filter_valid(a, H, W, k);
    const auto mu_b = filter_valid(b, H, W, k);
    const auto m_a2 = filter_valid(a2, H, W, k);
    const auto m_b2 = filter_valid(b2, H, W, k);
    const auto m_ab = filter_valid(ab, H, W, k);
    const double C1 = (0.01 * range) * (0.01 * range);
    const double C2 = (0.03 * range) * (0.03 * range);
    double acc = 0;
    for (int64_t i = 0; i < n; ++i) {
        const double va = m_a2[i] - mu_a[i] * mu_a[i];
        const double vb = m_b2[i] - mu_b[i] * mu_b[i];
        const double cab = m_ab[i] - mu_a[i] * mu_b[i];
        acc += ((2 * mu_a[i] * mu_b[i] + C1) * (2 * cab + C2)) /
               ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + C1) * (va + vb + C2));
    }
    return acc / double(n);
}

} // namespace

double ssim(const Image& a, const Image& b, int window, double sigma, double range) {
    check_same_shape(a, b, "ssim");
    const int64_t H = a.dim(0), W = a.dim(1), C = a.dim(2);
    if (H < window || W < window)
        throw std::invalid_argument("ssim: plane " + a.shape().str() + " smaller than window " +
                                    std::to_string(window));
    double acc = 0;
    std::vector<double> ca(static_cast<size_t>(H) * W), cb(ca.size());
    for (int64_t c = 0; c < C; ++c) {
        for (int64_t i = 0; i < H; ++i)
            for (int64_t j = 0; j < W; ++j) {
                ca[i * W + j] = a.at(i, j, c);
                cb[i * W + j] = b.at(i, j, c);
            }
        acc += ssim_channel(ca, cb, H, W, window, sigma, range);
    }
    return acc / double(C);
}

double structure_ncc(const Image& restored_rgb, const Image& nir, int margin) {
    const Image ry = crop_border(to_y(restored_rgb), margin);
    const Image nc = crop_border(nir, margin);
    if (nc.dim(2) != 1) throw std::invalid_argument("structure_ncc: nir must be 1-channel");
    if (ry.dim(0) != nc.dim(0) || ry.dim(1) != nc.dim(1))
        throw std::invalid_argument("structure_ncc: dimension mismatch " + ry.shape().str() +
                                    " vs " + nc.shape().str());
    return ncc(gradient_magnitude(ry), gradient_magnitude(nc));
}

PairReport evaluate_pair(const Image& restored_rgb, const Image& nir, const Image* clean_gt,
                         int margin) {
    PairReport r;
    r.structure_ncc = structure_ncc(restored_rgb, nir, margin);
    if (clean_gt) {
        const Image a = crop_border(restored_rgb, margin);
        const Image g = crop_border(*clean_gt, margin);
        r.psnr_gt = psnr(a, g);
        r.ssim_gt = ssim(a, g);
        r.ncc_gt = ncc(a, g);
    }
    return r;
}

std::string report_table(const PairReport& r) {
    std::ostringstream os;
    os.precision(4);
    os << std::fixed;
    os << "metric         value\n";
    os << "structure-ncc  " << r.structure_ncc << "\n";
    if (r.psnr_gt) os << "psnr-gt        " << *r.psnr_gt << "\n";
    if (r.ssim_gt) os << "ssim-gt        " << *r.ssim_gt << "\n";
    if (r.ncc_gt) os << "ncc-gt         " << *r.ncc_gt << "\n";
    return os.str();
}

std::string report_jsonl(const PairReport& r) {
    std::ostringstream os;
    os.precision(10);
    os << "{\"metric\":\"structure_ncc\",\"value\":" << r.structure_ncc << "}\n";
    if (r.psnr_gt) os << "{\"metric\":\"psnr_gt\",\"value\":" << *r.psnr_gt << "}\n";
    if (r.ssim_gt) os << "{\"metric\":\"ssim_gt\",\"value\":" << *r.ssim_gt << "}\n";
    if (r.ncc_gt) os << "{\"metric\":\"ncc_gt\",\"value\":" << *r.ncc_gt << "}\n";
    return os.str();
}

} // namespace duofit::img
