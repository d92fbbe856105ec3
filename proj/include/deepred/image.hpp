#pragma once

#include <png.h>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "deepred/linear_operator.hpp"
#include "deepred/rng.hpp"
#include "deepred/tensor.hpp"

namespace deepred {

/// Image carrier: C×H×W planes on the [0,1] scale, C ∈ {1,3}.
struct Image {
    Tensor planes;

    Image() = default;
    explicit Image(Tensor t) : planes(std::move(t)) {
        if (planes.ndim() != 3 || (planes.dim(0) != 1 && planes.dim(0) != 3))
            throw std::invalid_argument("image: expected 1 or 3 planes, got " +
                                        shape_str(planes.shape()));
        planes.clamp(0.0, 1.0);
    }

    std::size_t channels() const { return planes.dim(0); }
    std::size_t height() const { return planes.dim(1); }
    std::size_t width() const { return planes.dim(2); }
    bool is_rgb() const { return channels() == 3; }
};

namespace detail {

struct PngReadCloser {
    png_structp png = nullptr;
    png_infop info = nullptr;
    std::FILE* fp = nullptr;
    ~PngReadCloser() {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        if (fp) std::fclose(fp);
    }
};

struct PngWriteCloser {
    png_structp png = nullptr;
    png_infop info = nullptr;
    std::FILE* fp = nullptr;
    ~PngWriteCloser() {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
        if (fp) std::fclose(fp);
    }
};

}  // namespace detail

inline Image load_png(const std::string& path) {
    detail::PngReadCloser s;
    s.fp = std::fopen(path.c_str(), "rb");
    if (!s.fp) throw std::runtime_error("png: cannot open " + path);
    unsigned char sig[8];
    if (std::fread(sig, 1, 8, s.fp) != 8 || png_sig_cmp(sig, 0, 8))
        throw std::runtime_error("png: parse error in " + path + " at offset 0: bad signature");
    s.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    s.info = png_create_info_struct(s.png);
    if (setjmp(png_jmpbuf(s.png)))
        throw std::runtime_error("png: parse error in " + path + " at offset " +
                                 std::to_string(std::ftell(s.fp)));
    png_init_io(s.png, s.fp);
    png_set_sig_bytes(s.png, 8);
    png_read_info(s.png, s.info);

    if (png_get_color_type(s.png, s.info) == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(s.png);
    if (png_get_bit_depth(s.png, s.info) < 8) png_set_expand_gray_1_2_4_to_8(s.png);
    png_set_strip_alpha(s.png);
    png_set_swap(s.png);  // 16-bit samples arrive big-endian
    png_read_update_info(s.png, s.info);

    const std::size_t W = png_get_image_width(s.png, s.info);
    const std::size_t H = png_get_image_height(s.png, s.info);
    const int depth = png_get_bit_depth(s.png, s.info);
    const int ctype = png_get_color_type(s.png, s.info);
    std::size_t C;
    if (ctype == PNG_COLOR_TYPE_GRAY)
        C = 1;
    else if (ctype == PNG_COLOR_TYPE_RGB)
        C = 3;
    else
        throw std::runtime_error("png: unsupported color type in " + path);

    const std::size_t rowbytes = png_get_rowbytes(s.png, s.info);
    std::vector<unsigned char> buf(rowbytes * H);
    std::vector<png_bytep> rows(H);
    for (std::size_t y = 0; y < H; ++y) rows[y] = buf.data() + y * rowbytes;
    png_read_image(s.png, rows.data());

    Tensor t({C, H, W});
    const double scale = depth == 16 ? 65535.0 : 255.0;
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x)
            for (std::size_t c = 0; c < C; ++c) {
                double v;
                if (depth == 16) {
                    const std::uint16_t* p = reinterpret_cast<const std::uint16_t*>(rows[y]);
                    v = p[x * C + c];
                } else {
                    v = rows[y][x * C + c];
                }
                t.at3(c, y, x) = v / scale;
            }
    return Image(std::move(t));
}

inline void save_png(const Image& img, const std::string& path, int bit_depth = 8) {
    if (bit_depth != 8 && bit_depth != 16) throw std::invalid_argument("png: bit depth must be 8 or 16");
    detail::PngWriteCloser s;
    s.fp = std::fopen(path.c_str(), "wb");
    if (!s.fp) throw std::runtime_error("png: cannot write " + path);
    s.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    s.info = png_create_info_struct(s.png);
    if (setjmp(png_jmpbuf(s.png))) throw std::runtime_error("png: write error in " + path);
    png_init_io(s.png, s.fp);
    const std::size_t C = img.channels(), H = img.height(), W = img.width();
    png_set_IHDR(s.png, s.info, W, H, bit_depth,
                 C == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(s.png, s.info);
    if (bit_depth == 16) png_set_swap(s.png);

    const double scale = bit_depth == 16 ? 65535.0 : 255.0;
    std::vector<unsigned char> row(W * C * (bit_depth / 8));
    for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x)
            for (std::size_t c = 0; c < C; ++c) {
                double v = img.planes.at3(c, y, x);
                long q = std::lround(v * scale);
                if (q < 0) q = 0;
                if (q > long(scale)) q = long(scale);
                if (bit_depth == 16)
                    reinterpret_cast<std::uint16_t*>(row.data())[x * C + c] =
                        static_cast<std::uint16_t>(q);
                else
                    row[x * C + c] = static_cast<unsigned char>(q);
            }
        png_write_row(s.png, row.data());
    }
    png_write_end(s.png, s.info);
}

// ---- portable float map (PF color / Pf gray, little-endian float32) ----
// Shared wire format of the external-denoiser bridge. Rows are stored
// top-to-bottom, flagged by a negative scale per PFM convention.

inline void write_pfm(const Tensor& planes, std::FILE* out) {
    const std::size_t C = planes.dim(0), H = planes.dim(1), W = planes.dim(2);
    if (C != 1 && C != 3) throw std::invalid_argument("pfm: 1 or 3 channels only");
    std::fprintf(out, "%s\n%zu %zu\n-1.0\n", C == 3 ? "PF" : "Pf", W, H);
    std::vector<float> row(W * C);
    for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x)
            for (std::size_t c = 0; c < C; ++c)
                row[x * C + c] = static_cast<float>(planes.at3(c, y, x));
        if (std::fwrite(row.data(), sizeof(float), row.size(), out) != row.size())
            throw std::runtime_error("pfm: short write");
    }
    std::fflush(out);
}

inline Tensor read_pfm(std::FILE* in) {
    char magic[3] = {0, 0, 0};
    if (std::fscanf(in, "%2s", magic) != 1) throw std::runtime_error("pfm: missing magic");
    std::size_t C;
    if (std::strcmp(magic, "PF") == 0)
        C = 3;
    else if (std::strcmp(magic, "Pf") == 0)
        C = 1;
    else
        throw std::runtime_error("pfm: bad magic");
    std::size_t W, H;
    double scale;
    if (std::fscanf(in, "%zu %zu %lf", &W, &H, &scale) != 3 || scale >= 0)
        throw std::runtime_error("pfm: bad header (expect little-endian, top-down)");
    std::fgetc(in);  // single whitespace after header
    Tensor t({C, H, W});
    std::vector<float> row(W * C);
    for (std::size_t y = 0; y < H; ++y) {
        if (std::fread(row.data(), sizeof(float), row.size(), in) != row.size())
            throw std::runtime_error("pfm: short read");
        for (std::size_t x = 0; x < W; ++x)
            for (std::size_t c = 0; c < C; ++c) t.at3(c, y, x) = row[x * C + c];
    }
    return t;
}

// ---- metrics and degradation ----

/// ITU-R BT.601 luminance weights; they sum to 1.
constexpr double kLumaR = 0.299, kLumaG = 0.587, kLumaB = 0.114;

inline Image rgb_to_luminance(const Image& img) {
    if (!img.is_rgb()) return img;
    const std::size_t H = img.height(), W = img.width();
    Tensor t({1, H, W});
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x)
            t.at3(0, y, x) = kLumaR * img.planes.at3(0, y, x) + kLumaG * img.planes.at3(1, y, x) +
                             kLumaB * img.planes.at3(2, y, x);
    return Image(std::move(t));
}

enum class PsnrChannel { rgb, luminance };

/// 10·log10(1/MSE) on the [0,1] scale; +inf for identical images.
inline double psnr(const Image& a, const Image& b, PsnrChannel mode = PsnrChannel::rgb) {
    Image aa = mode == PsnrChannel::luminance ? rgb_to_luminance(a) : a;
    Image bb = mode == PsnrChannel::luminance ? rgb_to_luminance(b) : b;
    aa.planes.check_congruent(bb.planes, "psnr");
    double mse = 0;
    for (std::size_t i = 0; i < aa.planes.numel(); ++i) {
        double d = aa.planes[i] - bb.planes[i];
        mse += d * d;
    }
    mse /= double(aa.planes.numel());
    if (mse == 0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

/// AWGN with std given on the 0–255 convention; output clamped to [0,1].
inline Image add_awgn(const Image& img, double sigma_255, std::uint64_t seed) {
    if (sigma_255 < 0) throw std::invalid_argument("awgn: sigma must be nonnegative");
    Tensor t = img.planes;
    if (sigma_255 > 0) {
        Rng rng(seed);
        for (auto& v : t.vec()) v += rng.normal(0.0, sigma_255 / 255.0);
    }
    return Image(std::move(t));
}

/// y = Hx + v: the single entry point for synthesizing experiment inputs.
/// The measurement is NOT clamped (it may leave [0,1] and is not an Image).
inline Tensor degrade(const Image& img, const LinearOperator& H, double sigma_255,
                      std::uint64_t seed) {
    Tensor y = H.forward(img.planes);
    if (sigma_255 > 0) {
        Rng rng(seed);
        for (auto& v : y.vec()) v += rng.normal(0.0, sigma_255 / 255.0);
    }
    return y;
}

/// Catmull-Rom bicubic upsampling (half-pixel mapping); used to initialize
/// x for super-resolution where Algorithm-style x0 = y has the wrong shape.
inline Tensor bicubic_upsample(const Tensor& x, std::size_t factor) {
    auto kern = [](double t) {
        t = std::abs(t);
        if (t < 1) return 1.5 * t * t * t - 2.5 * t * t + 1.0;
        if (t < 2) return -0.5 * t * t * t + 2.5 * t * t - 4.0 * t + 2.0;
        return 0.0;
    };
    const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const std::size_t Ho = H * factor, Wo = W * factor;
    Tensor out({C, Ho, Wo});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t oy = 0; oy < Ho; ++oy) {
            double sy = (oy + 0.5) / factor - 0.5;
            long fy = long(std::floor(sy));
            for (std::size_t ox = 0; ox < Wo; ++ox) {
                double sx = (ox + 0.5) / factor - 0.5;
                long fx = long(std::floor(sx));
                double acc = 0, wsum = 0;
                for (long dy = -1; dy <= 2; ++dy)
                    for (long dx = -1; dx <= 2; ++dx) {
                        long iy = fy + dy, ix = fx + dx;
                        iy = iy < 0 ? 0 : (iy >= long(H) ? long(H) - 1 : iy);
                        ix = ix < 0 ? 0 : (ix >= long(W) ? long(W) - 1 : ix);
                        double w = kern(sy - double(fy + dy)) * kern(sx - double(fx + dx));
                        acc += w * x.at3(c, std::size_t(iy), std::size_t(ix));
                        wsum += w;
                    }
                out.at3(c, oy, ox) = acc / wsum;
            }
        }
    return out;
}

}  // namespace deepred
