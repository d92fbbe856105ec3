#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "deepred/tape.hpp"  // pad2d / reflect_index
#include "deepred/tensor.hpp"

namespace deepred {

enum class DenoiserKind { nlm, gaussian, median, box };

/// Plug-in denoiser selection. σ_f follows the paper's 0–255 convention and
/// is converted to the [0,1] scale internally.
struct DenoiserSpec {
    DenoiserKind kind = DenoiserKind::nlm;
    double sigma_f = 3.0;

    // nlm
    std::size_t patch = 7;
    std::size_t window = 21;
    double h = 0.0;  // 0 -> tied to sigma_f as 0.8·σ_f/255

    // gaussian: std in pixels (0 -> identity); box/median: window extent
    double gaussian_width = 1.0;
    std::size_t box_width = 3;
    std::size_t median_window = 3;

    void validate() const {
        if (sigma_f < 0) throw std::invalid_argument("denoiser: sigma_f must be nonnegative");
        if (patch % 2 == 0 || window % 2 == 0 || box_width % 2 == 0 || median_window % 2 == 0)
            throw std::invalid_argument("denoiser: patch/window sizes must be odd");
        if (window < patch) throw std::invalid_argument("denoiser: window smaller than patch");
    }
};

using DenoiseFn = std::function<Tensor(const Tensor&)>;

/// Weighted patch-similarity averaging restricted to a search window.
/// Weights are exp(−max(d² − 2σ², 0)/h²) with d² the per-pixel mean squared
/// patch difference taken jointly over channels; per-pixel weights are
/// normalized to sum 1. Boundaries are handled by reflecting the image by
/// (window+patch−2)/2 pixels before filtering.
inline Tensor nlm_denoise(const Tensor& x, std::size_t patch, std::size_t window, double h,
                          double sigma01 = 0.0) {
    if (patch % 2 == 0 || window % 2 == 0)
        throw std::invalid_argument("nlm: patch and window must be odd");
    if (window < patch) throw std::invalid_argument("nlm: window smaller than patch");
    if (!(h > 0)) throw std::invalid_argument("nlm: h must be positive");

    const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const long pr = long(patch - 1) / 2, wr = long(window - 1) / 2;
    const std::size_t R = std::size_t(pr + wr);
    const Tensor P = detail::pad2d(x, R, R, Padding::reflect);
    const std::size_t Hp = P.dim(1), Wp = P.dim(2);

    const double npatch = double(patch * patch * C);
    const double thresh = 2.0 * sigma01 * sigma01;
    const double inv_h2 = 1.0 / (h * h);

    Tensor num({C, H, W});
    std::vector<double> wsum(H * W, 0.0);
    std::vector<double> sqd(Hp * Wp);
    std::vector<double> sat((Hp + 1) * (Wp + 1));

    for (long dy = -wr; dy <= wr; ++dy)
        for (long dx = -wr; dx <= wr; ++dx) {
            // squared channel-summed difference between the image and its
            // (dy,dx)-shifted copy, on the padded frame
            std::fill(sqd.begin(), sqd.end(), 0.0);
            const std::size_t y_lo = dy < 0 ? std::size_t(-dy) : 0;
            const std::size_t y_hi = dy > 0 ? Hp - std::size_t(dy) : Hp;
            const std::size_t x_lo = dx < 0 ? std::size_t(-dx) : 0;
            const std::size_t x_hi = dx > 0 ? Wp - std::size_t(dx) : Wp;
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t y = y_lo; y < y_hi; ++y) {
                    const double* a = &P.vec()[(c * Hp + y) * Wp];
                    const double* b = &P.vec()[(c * Hp + y + dy) * Wp + dx];
                    double* o = &sqd[y * Wp];
                    for (std::size_t xx = x_lo; xx < x_hi; ++xx) {
                        double d = a[xx] - b[xx];
                        o[xx] += d * d;
                    }
                }
            // summed-area table for O(1) patch sums
            for (std::size_t y = 0; y < Hp; ++y) {
                double rowsum = 0;
                for (std::size_t xx = 0; xx < Wp; ++xx) {
                    rowsum += sqd[y * Wp + xx];
                    sat[(y + 1) * (Wp + 1) + xx + 1] = sat[y * (Wp + 1) + xx + 1] + rowsum;
                }
            }
            for (std::size_t py = 0; py < H; ++py)
                for (std::size_t px = 0; px < W; ++px) {
                    const std::size_t cy = py + R, cx = px + R;
                    const std::size_t t = cy - pr, bq = cy + pr + 1, l = cx - pr, r = cx + pr + 1;
                    const double d2 = (sat[bq * (Wp + 1) + r] - sat[t * (Wp + 1) + r] -
                                       sat[bq * (Wp + 1) + l] + sat[t * (Wp + 1) + l]) /
                                      npatch;
                    const double w = std::exp(-std::max(d2 - thresh, 0.0) * inv_h2);
                    wsum[py * W + px] += w;
                    for (std::size_t c = 0; c < C; ++c)
                        num.at3(c, py, px) += w * P.at3(c, cy + dy, cx + dx);
                }
        }

    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < H * W; ++i) num.vec()[c * H * W + i] /= wsum[i];
    return num;
}

inline Tensor gaussian_denoise(const Tensor& x, double width) {
    if (width < 0) throw std::invalid_argument("gaussian denoiser: negative width");
    if (width == 0) return x;
    const long r = std::max<long>(1, long(std::ceil(3.0 * width)));
    std::vector<double> k(2 * r + 1);
    double s = 0;
    for (long i = -r; i <= r; ++i) s += k[i + r] = std::exp(-double(i * i) / (2 * width * width));
    for (auto& v : k) v /= s;

    const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    Tensor tmp({C, H, W}), out({C, H, W});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t xx = 0; xx < W; ++xx) {
                double a = 0;
                for (long i = -r; i <= r; ++i)
                    a += k[i + r] * x.at3(c, y, detail::reflect_index(long(xx) + i, long(W)));
                tmp.at3(c, y, xx) = a;
            }
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t xx = 0; xx < W; ++xx) {
                double a = 0;
                for (long i = -r; i <= r; ++i)
                    a += k[i + r] * tmp.at3(c, detail::reflect_index(long(y) + i, long(H)), xx);
                out.at3(c, y, xx) = a;
            }
    return out;
}

inline Tensor box_denoise(const Tensor& x, std::size_t width) {
    if (width % 2 == 0) throw std::invalid_argument("box denoiser: width must be odd");
    const long r = long(width - 1) / 2;
    const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const double inv = 1.0 / double(width * width);
    Tensor out({C, H, W});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t xx = 0; xx < W; ++xx) {
                double a = 0;
                for (long i = -r; i <= r; ++i)
                    for (long j = -r; j <= r; ++j)
                        a += x.at3(c, detail::reflect_index(long(y) + i, long(H)),
                                   detail::reflect_index(long(xx) + j, long(W)));
                out.at3(c, y, xx) = a * inv;
            }
    return out;
}

inline Tensor median_denoise(const Tensor& x, std::size_t window) {
    if (window % 2 == 0) throw std::invalid_argument("median denoiser: window must be odd");
    const long r = long(window - 1) / 2;
    const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    Tensor out({C, H, W});
    std::vector<double> vals(window * window);
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t xx = 0; xx < W; ++xx) {
                std::size_t n = 0;
                for (long i = -r; i <= r; ++i)
                    for (long j = -r; j <= r; ++j)
                        vals[n++] = x.at3(c, detail::reflect_index(long(y) + i, long(H)),
                                          detail::reflect_index(long(xx) + j, long(W)));
                std::nth_element(vals.begin(), vals.begin() + n / 2, vals.begin() + n);
                out.at3(c, y, xx) = vals[n / 2];
            }
    return out;
}

inline double nlm_h_for(const DenoiserSpec& spec) {
    return spec.h > 0 ? spec.h : 0.8 * spec.sigma_f / 255.0;
}

inline Tensor denoise(const Tensor& x, const DenoiserSpec& spec) {
    spec.validate();
    if (!x.all_finite()) throw std::invalid_argument("denoise: non-finite input");
    Tensor out;
    switch (spec.kind) {
        case DenoiserKind::nlm: {
            double h = nlm_h_for(spec);
            if (!(h > 0)) h = 1e-12;  // σ_f = 0 degenerates to near-identity weighting
            out = nlm_denoise(x, spec.patch, spec.window, h, spec.sigma_f / 255.0);
            break;
        }
        case DenoiserKind::gaussian:
            out = gaussian_denoise(x, spec.gaussian_width);
            break;
        case DenoiserKind::box:
            out = box_denoise(x, spec.box_width);
            break;
        case DenoiserKind::median:
            out = median_denoise(x, spec.median_window);
            break;
        default:
            throw std::invalid_argument("denoise: unknown kind");
    }
    out.clamp(0.0, 1.0);
    return out;
}

/// RED gradient direction: ∇ρ(x) = x − f(x).
inline Tensor residual(const Tensor& x, const DenoiserSpec& spec) {
    Tensor fx = denoise(x, spec);
    Tensor r = x;
    r -= fx;
    return r;
}

inline DenoiseFn make_denoiser(const DenoiserSpec& spec) {
    spec.validate();
    return [spec](const Tensor& x) { return denoise(x, spec); };
}

}  // namespace deepred
