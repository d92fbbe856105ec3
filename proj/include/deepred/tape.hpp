#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <utility>
#include <vector>

#include "deepred/tensor.hpp"

namespace deepred {

enum class Padding { zero, reflect };
enum class Upsample { nearest, bilinear };

namespace detail {

// reflect-101 index map: -1 -> 1, n -> n-2 (clamps when the extent is 1)
inline std::size_t reflect_index(long i, long n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * (n - 1) - i;
    }
    return static_cast<std::size_t>(i);
}

template <class T>
TensorT<T> pad2d(const TensorT<T>& x, std::size_t ph, std::size_t pw, Padding mode) {
    const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    TensorT<T> out({C, H + 2 * ph, W + 2 * pw});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < H + 2 * ph; ++y) {
            long sy = static_cast<long>(y) - static_cast<long>(ph);
            bool yin = sy >= 0 && sy < static_cast<long>(H);
            std::size_t ry = yin ? static_cast<std::size_t>(sy) : reflect_index(sy, static_cast<long>(H));
            for (std::size_t xx = 0; xx < W + 2 * pw; ++xx) {
                long sx = static_cast<long>(xx) - static_cast<long>(pw);
                bool xin = sx >= 0 && sx < static_cast<long>(W);
                if (mode == Padding::zero && (!yin || !xin)) {
                    out.at3(c, y, xx) = T(0);
                } else {
                    std::size_t rx = xin ? static_cast<std::size_t>(sx) : reflect_index(sx, static_cast<long>(W));
                    out.at3(c, y, xx) = x.at3(c, ry, rx);
                }
            }
        }
    return out;
}

// adjoint of pad2d: fold padded-plane gradients back onto the source pixels
template <class T>
void unpad2d_accumulate(const TensorT<T>& gpad, std::size_t ph, std::size_t pw, Padding mode,
                        TensorT<T>& gx) {
    const std::size_t C = gx.dim(0), H = gx.dim(1), W = gx.dim(2);
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < H + 2 * ph; ++y) {
            long sy = static_cast<long>(y) - static_cast<long>(ph);
            bool yin = sy >= 0 && sy < static_cast<long>(H);
            if (mode == Padding::zero && !yin) continue;
            std::size_t ry = yin ? static_cast<std::size_t>(sy) : reflect_index(sy, static_cast<long>(H));
            for (std::size_t xx = 0; xx < W + 2 * pw; ++xx) {
                long sx = static_cast<long>(xx) - static_cast<long>(pw);
                bool xin = sx >= 0 && sx < static_cast<long>(W);
                if (mode == Padding::zero && !xin) continue;
                std::size_t rx = xin ? static_cast<std::size_t>(sx) : reflect_index(sx, static_cast<long>(W));
                gx.at3(c, ry, rx) += gpad.at3(c, y, xx);
            }
        }
}

inline bool& backward_flag() {
    thread_local bool flag = false;
    return flag;
}

}  // namespace detail

/// Define-by-run reverse-mode tape over dense tensors. Rebuilt every
/// iteration; node ids are indices into the creation-ordered node list.
template <class T>
class TapeT {
public:
    using Id = std::size_t;

    TapeT() = default;
    TapeT(const TapeT&) = delete;             // backprop closures capture `this`
    TapeT& operator=(const TapeT&) = delete;

    Id leaf(TensorT<T> value) { return add_node(std::move(value), {}); }

    const TensorT<T>& value(Id id) const { return nodes_[id].value; }
    const TensorT<T>& grad(Id id) const { return nodes_[id].grad; }
    std::size_t size() const { return nodes_.size(); }

    void zero_grad() {
        for (auto& n : nodes_) n.grad.fill(T(0));
    }

    /// True while gradients are being propagated on this thread; lets test
    /// instrumentation verify the denoiser is never entered from a tape.
    static bool in_backward() { return detail::backward_flag(); }

    void backward(Id loss) {
        if (nodes_[loss].value.numel() != 1)
            throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                        shape_str(nodes_[loss].value.shape()));
        detail::backward_flag() = true;
        nodes_[loss].grad[0] += T(1);
        for (Id i = loss + 1; i-- > 0;)
            if (nodes_[i].backprop) nodes_[i].backprop();
        detail::backward_flag() = false;
    }

    // ---- elementwise / reduction ops ----

    Id add(Id a, Id b) {
        nodes_[a].value.check_congruent(nodes_[b].value, "add");
        TensorT<T> v = nodes_[a].value;
        v += nodes_[b].value;
        Id out = add_node(std::move(v), [this, a, b](Id o) {
            nodes_[a].grad += nodes_[o].grad;
            nodes_[b].grad += nodes_[o].grad;
        });
        return out;
    }

    Id sub(Id a, Id b) {
        nodes_[a].value.check_congruent(nodes_[b].value, "sub");
        TensorT<T> v = nodes_[a].value;
        v -= nodes_[b].value;
        Id out = add_node(std::move(v), [this, a, b](Id o) {
            nodes_[a].grad += nodes_[o].grad;
            nodes_[b].grad -= nodes_[o].grad;
        });
        return out;
    }

    Id scale(Id a, T s) {
        TensorT<T> v = nodes_[a].value;
        v *= s;
        return add_node(std::move(v), [this, a, s](Id o) {
            auto& ga = nodes_[a].grad;
            const auto& go = nodes_[o].grad;
            for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += s * go[i];
        });
    }

    Id sum(Id a) {
        T s = 0;
        for (T v : nodes_[a].value.vec()) s += v;
        return add_node(TensorT<T>({1}, {s}), [this, a](Id o) {
            T g = nodes_[o].grad[0];
            for (auto& v : nodes_[a].grad.vec()) v += g;
        });
    }

    /// scalar node  ½‖a − target‖²
    Id half_sse(Id a, TensorT<T> target) {
        nodes_[a].value.check_congruent(target, "half_sse");
        const auto& av = nodes_[a].value;
        T s = 0;
        for (std::size_t i = 0; i < av.numel(); ++i) {
            T d = av[i] - target[i];
            s += d * d;
        }
        auto tgt = std::make_shared<TensorT<T>>(std::move(target));
        return add_node(TensorT<T>({1}, {s / 2}), [this, a, tgt](Id o) {
            T g = nodes_[o].grad[0];
            auto& ga = nodes_[a].grad;
            const auto& av = nodes_[a].value;
            for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += g * (av[i] - (*tgt)[i]);
        });
    }

    Id leaky_relu(Id a, T slope) {
        if (!(slope > T(0) && slope < T(1)))
            throw std::invalid_argument("leaky_relu: slope must lie in (0,1)");
        TensorT<T> v = nodes_[a].value;
        for (auto& x : v.vec()) x = x > T(0) ? x : slope * x;
        return add_node(std::move(v), [this, a, slope](Id o) {
            auto& ga = nodes_[a].grad;
            const auto& av = nodes_[a].value;
            const auto& go = nodes_[o].grad;
            for (std::size_t i = 0; i < ga.numel(); ++i)
                ga[i] += go[i] * (av[i] > T(0) ? T(1) : slope);
        });
    }

    Id sigmoid(Id a) {
        TensorT<T> v = nodes_[a].value;
        for (auto& x : v.vec()) x = T(1) / (T(1) + std::exp(-x));
        return add_node(std::move(v), [this, a](Id o) {
            auto& ga = nodes_[a].grad;
            const auto& ov = nodes_[o].value;
            const auto& go = nodes_[o].grad;
            for (std::size_t i = 0; i < ga.numel(); ++i)
                ga[i] += go[i] * ov[i] * (T(1) - ov[i]);
        });
    }

    // ---- structural ops ----

    Id concat_channels(Id a, Id b) {
        const auto& av = nodes_[a].value;
        const auto& bv = nodes_[b].value;
        if (av.ndim() != 3 || bv.ndim() != 3 || av.dim(1) != bv.dim(1) || av.dim(2) != bv.dim(2))
            throw std::invalid_argument("concat_channels: spatial mismatch " +
                                        shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
        TensorT<T> v({av.dim(0) + bv.dim(0), av.dim(1), av.dim(2)});
        std::copy(av.vec().begin(), av.vec().end(), v.vec().begin());
        std::copy(bv.vec().begin(), bv.vec().end(), v.vec().begin() + av.numel());
        return add_node(std::move(v), [this, a, b](Id o) {
            auto& ga = nodes_[a].grad;
            auto& gb = nodes_[b].grad;
            const auto& go = nodes_[o].grad;
            for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += go[i];
            for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] += go[i + ga.numel()];
        });
    }

    /// Cross-correlation, 'same'-style padding of (k-1)/2 per side, odd
    /// kernels only. input C×H×W, kernels K×C×kh×kw -> K×H'×W'.
    Id conv2d(Id input, Id kernels, std::size_t stride, Padding pad) {
        const auto& x = nodes_[input].value;
        const auto& w = nodes_[kernels].value;
        if (x.ndim() != 3 || w.ndim() != 4)
            throw std::invalid_argument("conv2d: expected input C×H×W and kernels K×C×h×w, got " +
                                        shape_str(x.shape()) + " and " + shape_str(w.shape()));
        if (x.dim(0) != w.dim(1))
            throw std::invalid_argument("conv2d: input channels " + std::to_string(x.dim(0)) +
                                        " != kernel channels " + std::to_string(w.dim(1)));
        const std::size_t kh = w.dim(2), kw = w.dim(3);
        if (kh % 2 == 0 || kw % 2 == 0)
            throw std::invalid_argument("conv2d: kernel extents must be odd");
        if (stride == 0) throw std::invalid_argument("conv2d: stride must be positive");
        const std::size_t ph = (kh - 1) / 2, pw = (kw - 1) / 2;
        if (kh > x.dim(1) + 2 * ph || kw > x.dim(2) + 2 * pw)
            throw std::invalid_argument("conv2d: kernel larger than padded input");

        auto pin = std::make_shared<TensorT<T>>(detail::pad2d(x, ph, pw, pad));
        const std::size_t Hp = pin->dim(1), Wp = pin->dim(2);
        const std::size_t Ho = (Hp - kh) / stride + 1, Wo = (Wp - kw) / stride + 1;
        const std::size_t K = w.dim(0), C = x.dim(0);

        TensorT<T> out({K, Ho, Wo});
        for (std::size_t k = 0; k < K; ++k)
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t i = 0; i < kh; ++i)
                    for (std::size_t j = 0; j < kw; ++j) {
                        const T wk = w.vec()[((k * C + c) * kh + i) * kw + j];
                        if (wk == T(0)) continue;
                        for (std::size_t oy = 0; oy < Ho; ++oy) {
                            const T* src = &pin->vec()[(c * Hp + oy * stride + i) * Wp + j];
                            T* dst = &out.vec()[(k * Ho + oy) * Wo];
                            if (stride == 1)
                                for (std::size_t ox = 0; ox < Wo; ++ox) dst[ox] += wk * src[ox];
                            else
                                for (std::size_t ox = 0; ox < Wo; ++ox) dst[ox] += wk * src[ox * stride];
                        }
                    }

        return add_node(std::move(out), [this, input, kernels, stride, pad, pin, ph, pw](Id o) {
            const auto& go = nodes_[o].grad;
            const auto& w = nodes_[kernels].value;
            auto& gw = nodes_[kernels].grad;
            const std::size_t K = w.dim(0), C = w.dim(1), kh = w.dim(2), kw = w.dim(3);
            const std::size_t Hp = pin->dim(1), Wp = pin->dim(2);
            const std::size_t Ho = go.dim(1), Wo = go.dim(2);

            TensorT<T> gpad(pin->shape());
            for (std::size_t k = 0; k < K; ++k)
                for (std::size_t c = 0; c < C; ++c)
                    for (std::size_t i = 0; i < kh; ++i)
                        for (std::size_t j = 0; j < kw; ++j) {
                            const T wk = w.vec()[((k * C + c) * kh + i) * kw + j];
                            T acc = 0;
                            for (std::size_t oy = 0; oy < Ho; ++oy) {
                                const T* g = &go.vec()[(k * Ho + oy) * Wo];
                                const T* src = &pin->vec()[(c * Hp + oy * stride + i) * Wp + j];
                                T* gp = &gpad.vec()[(c * Hp + oy * stride + i) * Wp + j];
                                for (std::size_t ox = 0; ox < Wo; ++ox) {
                                    acc += g[ox] * src[ox * stride];
                                    gp[ox * stride] += wk * g[ox];
                                }
                            }
                            gw.vec()[((k * C + c) * kh + i) * kw + j] += acc;
                        }
            detail::unpad2d_accumulate(gpad, ph, pw, pad, nodes_[input].grad);
        });
    }

    /// Nearest replicates f×f blocks. Bilinear uses the half-pixel
    /// convention: src = (dst + 0.5)/f − 0.5, clamped to the source plane
    /// (i.e. corners are NOT aligned).
    Id upsample(Id input, std::size_t factor, Upsample mode) {
        if (factor == 0) throw std::invalid_argument("upsample: factor must be positive");
        const auto& x = nodes_[input].value;
        const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
        const std::size_t Ho = H * factor, Wo = W * factor;

        // per-axis source indices and weights, shared by forward and backward
        auto axis_map = [&](std::size_t n, std::size_t no) {
            std::vector<std::size_t> i0(no), i1(no);
            std::vector<T> w1(no);
            for (std::size_t d = 0; d < no; ++d) {
                if (mode == Upsample::nearest) {
                    i0[d] = i1[d] = d / factor;
                    w1[d] = 0;
                } else {
                    double s = (d + 0.5) / factor - 0.5;
                    if (s < 0) s = 0;
                    if (s > double(n - 1)) s = double(n - 1);
                    std::size_t f0 = static_cast<std::size_t>(s);
                    i0[d] = f0;
                    i1[d] = f0 + 1 < n ? f0 + 1 : f0;
                    w1[d] = static_cast<T>(s - double(f0));
                }
            }
            return std::make_tuple(i0, i1, w1);
        };
        auto [y0, y1, wy] = axis_map(H, Ho);
        auto [x0, x1, wx] = axis_map(W, Wo);

        TensorT<T> out({C, Ho, Wo});
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t oy = 0; oy < Ho; ++oy)
                for (std::size_t ox = 0; ox < Wo; ++ox) {
                    T a = x.at3(c, y0[oy], x0[ox]), b = x.at3(c, y0[oy], x1[ox]);
                    T d = x.at3(c, y1[oy], x0[ox]), e = x.at3(c, y1[oy], x1[ox]);
                    out.at3(c, oy, ox) = (1 - wy[oy]) * ((1 - wx[ox]) * a + wx[ox] * b) +
                                         wy[oy] * ((1 - wx[ox]) * d + wx[ox] * e);
                }

        auto maps = std::make_shared<std::tuple<std::vector<std::size_t>, std::vector<std::size_t>,
                                                std::vector<T>, std::vector<std::size_t>,
                                                std::vector<std::size_t>, std::vector<T>>>(
            std::move(y0), std::move(y1), std::move(wy), std::move(x0), std::move(x1), std::move(wx));

        return add_node(std::move(out), [this, input, maps](Id o) {
            const auto& [y0, y1, wy, x0, x1, wx] = *maps;
            auto& gx = nodes_[input].grad;
            const auto& go = nodes_[o].grad;
            const std::size_t C = gx.dim(0), Ho = go.dim(1), Wo = go.dim(2);
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t oy = 0; oy < Ho; ++oy)
                    for (std::size_t ox = 0; ox < Wo; ++ox) {
                        T g = go.at3(c, oy, ox);
                        gx.at3(c, y0[oy], x0[ox]) += (1 - wy[oy]) * (1 - wx[ox]) * g;
                        gx.at3(c, y0[oy], x1[ox]) += (1 - wy[oy]) * wx[ox] * g;
                        gx.at3(c, y1[oy], x0[ox]) += wy[oy] * (1 - wx[ox]) * g;
                        gx.at3(c, y1[oy], x1[ox]) += wy[oy] * wx[ox] * g;
                    }
        });
    }

    /// Per-channel standardization over the spatial extent followed by a
    /// learned affine map: y_c = scale_c·(x_c − mean_c)/√(var_c + eps) + shift_c.
    Id channel_norm(Id input, Id scale_p, Id shift_p, T eps) {
        if (!(eps > T(0))) throw std::invalid_argument("channel_norm: eps must be positive");
        const auto& x = nodes_[input].value;
        const auto& g = nodes_[scale_p].value;
        const auto& b = nodes_[shift_p].value;
        const std::size_t C = x.dim(0), n = x.dim(1) * x.dim(2);
        if (g.numel() != C || b.numel() != C)
            throw std::invalid_argument("channel_norm: scale/shift must have one entry per channel");

        auto inv_std = std::make_shared<std::vector<T>>(C);
        auto xhat = std::make_shared<TensorT<T>>(x.shape());
        TensorT<T> out(x.shape());
        for (std::size_t c = 0; c < C; ++c) {
            T mean = 0;
            for (std::size_t i = 0; i < n; ++i) mean += x.vec()[c * n + i];
            mean /= T(n);
            T var = 0;
            for (std::size_t i = 0; i < n; ++i) {
                T d = x.vec()[c * n + i] - mean;
                var += d * d;
            }
            var /= T(n);
            T is = T(1) / std::sqrt(var + eps);
            (*inv_std)[c] = is;
            for (std::size_t i = 0; i < n; ++i) {
                T xh = (x.vec()[c * n + i] - mean) * is;
                xhat->vec()[c * n + i] = xh;
                out.vec()[c * n + i] = g[c] * xh + b[c];
            }
        }

        return add_node(std::move(out), [this, input, scale_p, shift_p, inv_std, xhat](Id o) {
            const auto& go = nodes_[o].grad;
            const auto& g = nodes_[scale_p].value;
            auto& gx = nodes_[input].grad;
            auto& gg = nodes_[scale_p].grad;
            auto& gb = nodes_[shift_p].grad;
            const std::size_t C = gx.dim(0), n = gx.dim(1) * gx.dim(2);
            for (std::size_t c = 0; c < C; ++c) {
                T sum_dy = 0, sum_dy_xh = 0;
                for (std::size_t i = 0; i < n; ++i) {
                    T dy = go.vec()[c * n + i];
                    sum_dy += dy;
                    sum_dy_xh += dy * xhat->vec()[c * n + i];
                }
                gg[c] += sum_dy_xh;
                gb[c] += sum_dy;
                const T k = g[c] * (*inv_std)[c];
                const T m_dy = sum_dy / T(n), m_dyxh = sum_dy_xh / T(n);
                for (std::size_t i = 0; i < n; ++i)
                    gx.vec()[c * n + i] +=
                        k * (go.vec()[c * n + i] - m_dy - xhat->vec()[c * n + i] * m_dyxh);
            }
        });
    }

    /// Apply an external linear map given as a forward/adjoint pair.
    Id apply_linear(Id input, std::function<TensorT<T>(const TensorT<T>&)> fwd,
                    std::function<TensorT<T>(const TensorT<T>&)> adj) {
        TensorT<T> v = fwd(nodes_[input].value);
        auto adj_fn = std::make_shared<std::function<TensorT<T>(const TensorT<T>&)>>(std::move(adj));
        return add_node(std::move(v), [this, input, adj_fn](Id o) {
            nodes_[input].grad += (*adj_fn)(nodes_[o].grad);
        });
    }

private:
    struct Node {
        TensorT<T> value;
        TensorT<T> grad;
        std::function<void()> backprop;
    };

    Id add_node(TensorT<T> value, std::function<void(Id)> backprop) {
        Id id = nodes_.size();
        Node n;
        n.grad = TensorT<T>(value.shape());
        n.value = std::move(value);
        if (backprop) n.backprop = [bp = std::move(backprop), id]() { bp(id); };
        nodes_.push_back(std::move(n));
        return id;
    }

    std::vector<Node> nodes_;
};

using Tape = TapeT<double>;

}  // namespace deepred
