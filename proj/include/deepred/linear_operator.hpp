#pragma once

#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "deepred/tensor.hpp"

namespace deepred {

/// Degradation model H as an explicit forward/adjoint pair. Immutable once
/// built; the adjoint identity ⟨Hx,y⟩ = ⟨x,Hᵀy⟩ is enforced by tests.
struct LinearOperator {
    std::function<Tensor(const Tensor&)> forward;
    std::function<Tensor(const Tensor&)> adjoint;
    Shape input_shape;
    Shape output_shape;
};

/// Nonnegative convolution taps summing to one.
struct BlurKernel {
    Tensor taps;  // h×w

    BlurKernel(Tensor t) : taps(std::move(t)) {
        if (taps.ndim() != 2) throw std::invalid_argument("blur kernel: taps must be 2-d");
        double s = 0;
        for (double v : taps.vec()) {
            if (v < 0) throw std::invalid_argument("blur kernel: negative tap");
            s += v;
        }
        if (std::abs(s - 1.0) > 1e-12)
            throw std::invalid_argument("blur kernel: taps sum to " + std::to_string(s) + ", not 1");
    }
};

struct MaskPattern {
    std::vector<bool> keep;  // row-major over H×W
    std::size_t height = 0, width = 0;

    std::size_t kept_count() const {
        std::size_t n = 0;
        for (bool b : keep) n += b;
        return n;
    }
};

inline BlurKernel make_uniform_kernel(std::size_t size) {
    if (size % 2 == 0) throw std::invalid_argument("uniform kernel: size must be odd");
    return BlurKernel(Tensor({size, size}, 1.0 / double(size * size)));
}

inline BlurKernel make_gaussian_kernel(std::size_t size, double sigma) {
    if (size % 2 == 0) throw std::invalid_argument("gaussian kernel: size must be odd");
    if (!(sigma > 0)) throw std::invalid_argument("gaussian kernel: sigma must be positive");
    Tensor taps({size, size});
    const double c = double(size - 1) / 2.0;
    double sum = 0;
    for (std::size_t i = 0; i < size; ++i)
        for (std::size_t j = 0; j < size; ++j) {
            double r2 = (i - c) * (i - c) + (j - c) * (j - c);
            double v = std::exp(-r2 / (2.0 * sigma * sigma));
            taps.vec()[i * size + j] = v;
            sum += v;
        }
    taps *= 1.0 / sum;
    return BlurKernel(std::move(taps));
}

/// Whitespace-separated rows; taps are normalized to sum 1 on load.
inline BlurKernel load_kernel(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("kernel file: cannot open " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::vector<double> row;
        double v;
        while (ls >> v) row.push_back(v);
        if (!ls.eof()) throw std::runtime_error("kernel file: bad token in " + path);
        if (!row.empty()) rows.push_back(std::move(row));
    }
    if (rows.empty()) throw std::runtime_error("kernel file: empty " + path);
    const std::size_t w = rows[0].size();
    double sum = 0;
    for (const auto& r : rows) {
        if (r.size() != w) throw std::runtime_error("kernel file: ragged rows in " + path);
        for (double v : r) sum += v;
    }
    if (sum == 0) throw std::runtime_error("kernel file: taps sum to zero in " + path);
    Tensor taps({rows.size(), w});
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < w; ++j) taps.vec()[i * w + j] = rows[i][j] / sum;
    return BlurKernel(std::move(taps));
}

namespace detail {

inline std::size_t wrap(long i, long n) { return static_cast<std::size_t>(((i % n) + n) % n); }

/// Circular convolution (flip=false) or correlation (flip=true) with a
/// centered kernel, applied per channel.
inline Tensor circular_filter(const Tensor& x, const Tensor& taps, bool correlate) {
    const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const std::size_t kh = taps.dim(0), kw = taps.dim(1);
    const long ch = long(kh - 1) / 2, cw = long(kw - 1) / 2;
    Tensor out({C, H, W});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < kh; ++i)
            for (std::size_t j = 0; j < kw; ++j) {
                const double t = taps.vec()[i * kw + j];
                if (t == 0) continue;
                const long dy = long(i) - ch, dx = long(j) - cw;
                for (std::size_t y = 0; y < H; ++y) {
                    std::size_t sy = correlate ? wrap(long(y) + dy, long(H))
                                               : wrap(long(y) - dy, long(H));
                    for (std::size_t xx = 0; xx < W; ++xx) {
                        std::size_t sx = correlate ? wrap(long(xx) + dx, long(W))
                                                   : wrap(long(xx) - dx, long(W));
                        out.at3(c, y, xx) += t * x.at3(c, sy, sx);
                    }
                }
            }
    return out;
}

}  // namespace detail

inline LinearOperator identity_op(Shape shape) {
    LinearOperator op;
    op.input_shape = shape;
    op.output_shape = shape;
    op.forward = [](const Tensor& x) { return x; };
    op.adjoint = [](const Tensor& x) { return x; };
    return op;
}

/// Circular convolution with a normalized kernel; the adjoint is circular
/// correlation. Acts per channel on C×H×W images.
inline LinearOperator blur_op(const BlurKernel& kernel, Shape shape) {
    if (shape.size() != 3) throw std::invalid_argument("blur_op: expected C×H×W shape");
    // kernels larger than the image are fine: indices simply wrap repeatedly
    Tensor taps = kernel.taps;
    LinearOperator op;
    op.input_shape = shape;
    op.output_shape = shape;
    op.forward = [taps](const Tensor& x) { return detail::circular_filter(x, taps, false); };
    op.adjoint = [taps](const Tensor& x) { return detail::circular_filter(x, taps, true); };
    return op;
}

/// Blur followed by keeping every factor-th pixel. Adjoint zero-fills and
/// applies the blur adjoint.
inline LinearOperator downsample_op(const BlurKernel& kernel, std::size_t factor, Shape shape) {
    if (shape.size() != 3) throw std::invalid_argument("downsample_op: expected C×H×W shape");
    if (factor == 0) throw std::invalid_argument("downsample_op: factor must be positive");
    if (shape[1] % factor != 0 || shape[2] % factor != 0)
        throw std::invalid_argument("downsample_op: image sides must be divisible by factor");
    if (factor == 1) return blur_op(kernel, shape);
    LinearOperator blur = blur_op(kernel, shape);
    const std::size_t C = shape[0], H = shape[1], W = shape[2];
    const std::size_t Ho = H / factor, Wo = W / factor;
    LinearOperator op;
    op.input_shape = shape;
    op.output_shape = {C, Ho, Wo};
    op.forward = [blur, C, Ho, Wo, factor](const Tensor& x) {
        Tensor b = blur.forward(x);
        Tensor out({C, Ho, Wo});
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t y = 0; y < Ho; ++y)
                for (std::size_t xx = 0; xx < Wo; ++xx)
                    out.at3(c, y, xx) = b.at3(c, y * factor, xx * factor);
        return out;
    };
    op.adjoint = [blur, C, H, W, factor](const Tensor& y) {
        Tensor up({C, H, W});
        const std::size_t Ho = H / factor, Wo = W / factor;
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t yy = 0; yy < Ho; ++yy)
                for (std::size_t xx = 0; xx < Wo; ++xx)
                    up.at3(c, yy * factor, xx * factor) = y.at3(c, yy, xx);
        return blur.adjoint(up);
    };
    return op;
}

/// Pixel selection: forward keeps masked pixels (per channel), adjoint
/// scatters them back with zeros elsewhere.
inline LinearOperator mask_op(const MaskPattern& mask, std::size_t channels) {
    const std::size_t H = mask.height, W = mask.width;
    if (mask.keep.size() != H * W) throw std::invalid_argument("mask_op: mask/extent mismatch");
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < mask.keep.size(); ++i)
        if (mask.keep[i]) idx.push_back(i);
    const std::size_t kept = idx.size();
    LinearOperator op;
    op.input_shape = {channels, H, W};
    op.output_shape = {channels, kept};
    op.forward = [idx, channels, H, W, kept](const Tensor& x) {
        Tensor out({channels, kept});
        for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t i = 0; i < kept; ++i) out.vec()[c * kept + i] = x.vec()[c * H * W + idx[i]];
        return out;
    };
    op.adjoint = [idx, channels, H, W, kept](const Tensor& y) {
        Tensor out({channels, H, W});
        for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t i = 0; i < kept; ++i) out.vec()[c * H * W + idx[i]] = y.vec()[c * kept + i];
        return out;
    };
    return op;
}

}  // namespace deepred
