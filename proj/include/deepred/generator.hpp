#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "deepred/rng.hpp"
#include "deepred/tape.hpp"
#include "deepred/tensor.hpp"

namespace deepred {

/// Hourglass synthesis network T_Θ(z): per scale a stride-2 encoder block,
/// a 1×1 skip branch, and a decoder block that consumes the skip plus the
/// upsampled deeper feature. A final 1×1 conv + sigmoid maps to [0,1].
struct GeneratorConfig {
    std::size_t depth = 5;
    std::vector<std::size_t> channels = {128, 128, 128, 128, 128};
    std::vector<std::size_t> skip_channels = {4, 4, 4, 4, 4};
    std::size_t kernel = 3;
    Upsample upsample_mode = Upsample::bilinear;
    std::size_t in_channels = 32;
    std::size_t out_channels = 3;
    Padding padding = Padding::reflect;
    double lrelu_slope = 0.2;
    double norm_eps = 1e-5;
    std::size_t height = 0;  // target image size
    std::size_t width = 0;

    void validate() const {
        if (depth < 1) throw std::invalid_argument("generator: depth must be >= 1");
        if (channels.size() != depth || skip_channels.size() != depth)
            throw std::invalid_argument("generator: channel lists must have one entry per scale");
        if (kernel % 2 == 0) throw std::invalid_argument("generator: kernel must be odd");
        if (out_channels != 1 && out_channels != 3)
            throw std::invalid_argument("generator: out_channels must be 1 or 3");
        if (height == 0 || width == 0)
            throw std::invalid_argument("generator: target size not set");
    }

    std::size_t scale_factor() const { return std::size_t(1) << depth; }
    std::size_t padded(std::size_t n) const {
        std::size_t f = scale_factor();
        return (n + f - 1) / f * f;
    }
};

/// Fixed random code z plus its per-iteration perturbation level.
struct SeedInput {
    Tensor z;  // in_channels × H × W, entries i.i.d. uniform on [0, 0.1]
    std::uint64_t rng_seed = 0;
    double sigma_noise = 0.0;
};

inline SeedInput init_seed(std::size_t width, std::size_t height, std::uint64_t rng_seed,
                           std::size_t in_channels = 32, double sigma_noise = 0.0) {
    if (width == 0 || height == 0) throw std::invalid_argument("init_seed: zero dimension");
    SeedInput s;
    s.rng_seed = rng_seed;
    s.sigma_noise = sigma_noise;
    s.z = Tensor({in_channels, height, width});
    Rng rng(rng_seed);
    rng.fill_uniform(s.z, 0.0, 0.1);
    return s;
}

/// z + n with n ~ N(0, σ_noise²); the stored z is untouched.
inline Tensor perturb_seed(const SeedInput& seed, Rng& rng) {
    if (seed.sigma_noise < 0) throw std::invalid_argument("perturb_seed: negative sigma_noise");
    Tensor out = seed.z;
    if (seed.sigma_noise > 0)
        for (auto& v : out.vec()) v += rng.normal(0.0, seed.sigma_noise);
    return out;
}

struct NamedTensor {
    std::string name;
    Tensor value;
};

using NetworkParams = std::vector<NamedTensor>;

class GeneratorNet {
public:
    GeneratorConfig config;
    NetworkParams params;

    static GeneratorNet init(GeneratorConfig cfg, Rng& rng) {
        cfg.validate();
        GeneratorNet net;
        net.config = std::move(cfg);
        const auto& c = net.config;
        std::size_t prev = c.in_channels;
        for (std::size_t i = 0; i < c.depth; ++i) {
            const std::string tag = std::to_string(i);
            net.add_conv(rng, "enc" + tag + ".down", c.channels[i], prev, c.kernel);
            net.add_norm("enc" + tag + ".norm1", c.channels[i]);
            net.add_conv(rng, "enc" + tag + ".conv", c.channels[i], c.channels[i], c.kernel);
            net.add_norm("enc" + tag + ".norm2", c.channels[i]);
            net.add_conv(rng, "skip" + tag + ".conv", c.skip_channels[i], c.channels[i], 1);
            net.add_norm("skip" + tag + ".norm", c.skip_channels[i]);
            prev = c.channels[i];
        }
        for (std::size_t i = c.depth; i-- > 0;) {
            const std::string tag = std::to_string(i);
            std::size_t below = i + 1 < c.depth ? c.channels[i + 1] : c.channels[c.depth - 1];
            net.add_conv(rng, "dec" + tag + ".conv", c.channels[i],
                         c.skip_channels[i] + below, c.kernel);
            net.add_norm("dec" + tag + ".norm1", c.channels[i]);
            net.add_conv(rng, "dec" + tag + ".conv1x1", c.channels[i], c.channels[i], 1);
            net.add_norm("dec" + tag + ".norm2", c.channels[i]);
        }
        net.add_conv(rng, "out.conv", c.out_channels, c.channels[0], 1);
        return net;
    }

    /// Build the forward graph on a tape. Appends one leaf per parameter to
    /// `param_ids` in the same order as `params`.
    Tape::Id build(Tape& tape, const Tensor& z_input, std::vector<Tape::Id>& param_ids) const {
        const auto& c = config;
        if (z_input.dim(0) != c.in_channels || z_input.dim(1) != c.height ||
            z_input.dim(2) != c.width)
            throw std::invalid_argument("generator: z shape " + shape_str(z_input.shape()) +
                                        " does not match config " +
                                        shape_str({c.in_channels, c.height, c.width}));
        // the hourglass needs sides divisible by 2^depth; pad reflectively
        // and crop the synthesized image back at the end
        const std::size_t Hp = c.padded(c.height), Wp = c.padded(c.width);
        Tensor z = (Hp == c.height && Wp == c.width)
                       ? z_input
                       : pad_to(z_input, Hp, Wp);

        param_ids.clear();
        for (const auto& p : params) param_ids.push_back(tape.leaf(p.value));
        std::size_t pi = 0;
        auto next = [&]() { return param_ids[pi++]; };

        auto block = [&](Tape::Id x, Tape::Id w, Tape::Id g, Tape::Id b, std::size_t stride) {
            Tape::Id y = tape.conv2d(x, w, stride, c.padding);
            y = tape.channel_norm(y, g, b, c.norm_eps);
            return tape.leaky_relu(y, c.lrelu_slope);
        };

        Tape::Id h = tape.leaf(z);
        std::vector<Tape::Id> skips;
        for (std::size_t i = 0; i < c.depth; ++i) {
            Tape::Id w_down = next(), g1 = next(), b1 = next();
            Tape::Id w_conv = next(), g2 = next(), b2 = next();
            Tape::Id w_skip = next(), gs = next(), bs = next();
            h = block(h, w_down, g1, b1, 2);
            h = block(h, w_conv, g2, b2, 1);
            skips.push_back(block(h, w_skip, gs, bs, 1));
        }
        for (std::size_t i = c.depth; i-- > 0;) {
            Tape::Id w1 = next(), g1 = next(), b1 = next();
            Tape::Id w2 = next(), g2 = next(), b2 = next();
            h = tape.concat_channels(skips[i], h);
            h = block(h, w1, g1, b1, 1);
            h = block(h, w2, g2, b2, 1);
            h = tape.upsample(h, 2, c.upsample_mode);
        }
        Tape::Id out = tape.conv2d(h, next(), 1, c.padding);
        out = tape.sigmoid(out);
        if (Hp != c.height || Wp != c.width) out = crop(tape, out, c.height, c.width);
        return out;
    }

    /// Forward evaluation without keeping gradients.
    Tensor forward(const Tensor& z) const {
        Tape tape;
        std::vector<Tape::Id> ids;
        return tape.value(build(tape, z, ids));
    }

    std::vector<Tensor> parameter_values() const {
        std::vector<Tensor> v;
        for (const auto& p : params) v.push_back(p.value);
        return v;
    }
    void set_parameter_values(const std::vector<Tensor>& v) {
        if (v.size() != params.size())
            throw std::invalid_argument("generator: parameter count mismatch");
        for (std::size_t i = 0; i < v.size(); ++i) params[i].value = v[i];
    }

private:
    void add_conv(Rng& rng, const std::string& name, std::size_t out_ch, std::size_t in_ch,
                  std::size_t k) {
        Tensor w({out_ch, in_ch, k, k});
        // centered uniform with fan-in scaling: U(−a, a), a = 1/√(in·k²)
        const double a = 1.0 / std::sqrt(double(in_ch * k * k));
        rng.fill_uniform(w, -a, a);
        params.push_back({name + ".weight", std::move(w)});
    }
    void add_norm(const std::string& name, std::size_t ch) {
        params.push_back({name + ".scale", Tensor({ch}, 1.0)});
        params.push_back({name + ".shift", Tensor({ch}, 0.0)});
    }

    static Tensor pad_to(const Tensor& x, std::size_t Hp, std::size_t Wp) {
        const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
        Tensor out({C, Hp, Wp});
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t y = 0; y < Hp; ++y)
                for (std::size_t xx = 0; xx < Wp; ++xx)
                    out.at3(c, y, xx) = x.at3(c, detail::reflect_index(long(y), long(H)),
                                              detail::reflect_index(long(xx), long(W)));
        return out;
    }

    static Tape::Id crop(Tape& tape, Tape::Id in, std::size_t H, std::size_t W) {
        const auto& v = tape.value(in);
        const std::size_t C = v.dim(0), Hi = v.dim(1), Wi = v.dim(2);
        // crop is a mask-style linear map; express it through apply_linear
        auto fwd = [C, H, W, Hi, Wi](const Tensor& x) {
            Tensor out({C, H, W});
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t y = 0; y < H; ++y)
                    for (std::size_t xx = 0; xx < W; ++xx) out.at3(c, y, xx) = x.at3(c, y, xx);
            return out;
        };
        auto adj = [C, H, W, Hi, Wi](const Tensor& g) {
            Tensor out({C, Hi, Wi});
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t y = 0; y < H; ++y)
                    for (std::size_t xx = 0; xx < W; ++xx) out.at3(c, y, xx) = g.at3(c, y, xx);
            return out;
        };
        return tape.apply_linear(in, fwd, adj);
    }
};

// ---- parameter checkpoint (version 1) ----
// layout: magic, u32 tensor count, then per tensor:
//   u32 name length, name bytes, u32 ndim, u64 extents…, f64 payload (LE)

inline constexpr char kCheckpointMagic[] = "DEEPRED-PARAMS-V1\n";

inline void save_params(const NetworkParams& params, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic) - 1);
    auto put_u32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    put_u32(static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
        put_u32(static_cast<std::uint32_t>(p.name.size()));
        out.write(p.name.data(), std::streamsize(p.name.size()));
        put_u32(static_cast<std::uint32_t>(p.value.ndim()));
        for (std::size_t d : p.value.shape()) {
            std::uint64_t e = d;
            out.write(reinterpret_cast<const char*>(&e), 8);
        }
        out.write(reinterpret_cast<const char*>(p.value.data()),
                  std::streamsize(p.value.numel() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("checkpoint: short write to " + path);
}

inline NetworkParams load_params(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[sizeof(kCheckpointMagic) - 1];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    auto get_u32 = [&]() {
        std::uint32_t v = 0;
        in.read(reinterpret_cast<char*>(&v), 4);
        return v;
    };
    NetworkParams params;
    const std::uint32_t count = get_u32();
    for (std::uint32_t t = 0; t < count; ++t) {
        std::uint32_t nlen = get_u32();
        std::string name(nlen, '\0');
        in.read(name.data(), nlen);
        std::uint32_t ndim = get_u32();
        Shape shape(ndim);
        for (auto& d : shape) {
            std::uint64_t e = 0;
            in.read(reinterpret_cast<char*>(&e), 8);
            d = static_cast<std::size_t>(e);
        }
        Tensor v(shape);
        in.read(reinterpret_cast<char*>(v.data()), std::streamsize(v.numel() * sizeof(double)));
        if (!in) throw std::runtime_error("checkpoint: truncated tensor '" + name + "' in " + path);
        params.push_back({std::move(name), std::move(v)});
    }
    return params;
}

}  // namespace deepred
