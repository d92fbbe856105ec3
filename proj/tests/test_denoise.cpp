#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "deepred/denoise.hpp"
#include "deepred/denoise_bridge.hpp"
#include "deepred/rng.hpp"

using namespace deepred;

namespace {

Tensor random01(const Shape& s, std::uint64_t seed) {
    Tensor t(s);
    Rng rng(seed);
    rng.fill_uniform(t, 0.0, 1.0);
    return t;
}

// Quadruple-loop reference: for each pixel, scan the window, compute the mean
// squared patch difference over all channels, weight, and average.
Tensor nlm_reference(const Tensor& x, std::size_t patch, std::size_t window, double h,
                     double sigma01) {
    const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const long pr = long(patch - 1) / 2, wr = long(window - 1) / 2;
    const std::size_t R = std::size_t(pr + wr);
    const Tensor P = detail::pad2d(x, R, R, Padding::reflect);
    Tensor out({C, H, W});
    for (std::size_t py = 0; py < H; ++py)
        for (std::size_t px = 0; px < W; ++px) {
            const long cy = long(py + R), cx = long(px + R);
            double wsum = 0;
            std::vector<double> acc(C, 0.0);
            for (long dy = -wr; dy <= wr; ++dy)
                for (long dx = -wr; dx <= wr; ++dx) {
                    double d2 = 0;
                    for (std::size_t c = 0; c < C; ++c)
                        for (long i = -pr; i <= pr; ++i)
                            for (long j = -pr; j <= pr; ++j) {
                                double a = P.at3(c, std::size_t(cy + i), std::size_t(cx + j));
                                double b = P.at3(c, std::size_t(cy + dy + i),
                                                 std::size_t(cx + dx + j));
                                d2 += (a - b) * (a - b);
                            }
                    d2 /= double(patch * patch * C);
                    double w = std::exp(-std::max(d2 - 2 * sigma01 * sigma01, 0.0) / (h * h));
                    wsum += w;
                    for (std::size_t c = 0; c < C; ++c)
                        acc[c] += w * P.at3(c, std::size_t(cy + dy), std::size_t(cx + dx));
                }
            for (std::size_t c = 0; c < C; ++c) out.at3(c, py, px) = acc[c] / wsum;
        }
    return out;
}

}  // namespace

TEST_CASE("fast nlm matches the brute-force reference") {
    for (std::size_t C : {std::size_t(1), std::size_t(3)}) {
        CAPTURE(C);
        Tensor x = random01({C, 9, 8}, 42 + C);
        Tensor fast = nlm_denoise(x, 3, 7, 0.05, 0.02);
        Tensor slow = nlm_reference(x, 3, 7, 0.05, 0.02);
        REQUIRE(fast.shape() == slow.shape());
        for (std::size_t i = 0; i < fast.numel(); ++i)
            CHECK(fast[i] == Catch::Approx(slow[i]).margin(1e-12));
    }
}

TEST_CASE("nlm validates its geometry") {
    Tensor x = random01({1, 8, 8}, 1);
    CHECK_THROWS_AS(nlm_denoise(x, 4, 7, 0.1), std::invalid_argument);
    CHECK_THROWS_AS(nlm_denoise(x, 3, 6, 0.1), std::invalid_argument);
    CHECK_THROWS_AS(nlm_denoise(x, 7, 3, 0.1), std::invalid_argument);
    CHECK_THROWS_AS(nlm_denoise(x, 3, 7, 0.0), std::invalid_argument);
}

TEST_CASE("denoisers preserve constant images") {
    Tensor flat({3, 10, 10}, 0.37);
    DenoiserSpec spec;
    for (auto kind : {DenoiserKind::nlm, DenoiserKind::gaussian, DenoiserKind::box,
                      DenoiserKind::median}) {
        spec.kind = kind;
        Tensor y = denoise(flat, spec);
        CAPTURE(int(kind));
        for (double v : y.vec()) CHECK(v == Catch::Approx(0.37).margin(1e-12));
    }
}

TEST_CASE("denoised output stays within the input range") {
    Tensor x = random01({1, 16, 16}, 3);
    DenoiserSpec spec;
    for (auto kind : {DenoiserKind::nlm, DenoiserKind::gaussian, DenoiserKind::box,
                      DenoiserKind::median}) {
        spec.kind = kind;
        Tensor y = denoise(x, spec);
        double lo = *std::min_element(x.vec().begin(), x.vec().end());
        double hi = *std::max_element(x.vec().begin(), x.vec().end());
        for (double v : y.vec()) {
            CHECK(v >= lo - 1e-12);
            CHECK(v <= hi + 1e-12);
        }
    }
}

TEST_CASE("denoising reduces noise on a smooth scene") {
    // piecewise-smooth ground truth plus noise: the filter must get closer
    Tensor clean({1, 24, 24});
    for (std::size_t y = 0; y < 24; ++y)
        for (std::size_t x = 0; x < 24; ++x)
            clean.at3(0, y, x) = 0.25 + 0.5 * (x >= 12);
    Tensor noisy = clean;
    Rng rng(9);
    for (auto& v : noisy.vec()) v += rng.normal(0.0, 10.0 / 255.0);
    noisy.clamp(0.0, 1.0);
    DenoiserSpec spec;
    spec.sigma_f = 10.0;
    Tensor out = denoise(noisy, spec);
    auto mse = [&](const Tensor& t) {
        double s = 0;
        for (std::size_t i = 0; i < t.numel(); ++i) s += (t[i] - clean[i]) * (t[i] - clean[i]);
        return s / double(t.numel());
    };
    CHECK(mse(out) < 0.5 * mse(noisy));
}

TEST_CASE("residual is x minus the denoised image") {
    Tensor x = random01({1, 8, 8}, 5);
    DenoiserSpec spec;
    Tensor r = residual(x, spec);
    Tensor fx = denoise(x, spec);
    for (std::size_t i = 0; i < x.numel(); ++i)
        CHECK(r[i] == Catch::Approx(x[i] - fx[i]).margin(1e-15));
}

TEST_CASE("spec defaults tie nlm bandwidth to sigma_f") {
    DenoiserSpec spec;
    spec.sigma_f = 3.0;
    CHECK(nlm_h_for(spec) == Catch::Approx(0.8 * 3.0 / 255.0));
    spec.h = 0.07;
    CHECK(nlm_h_for(spec) == 0.07);
    spec.patch = 8;
    CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
    spec.patch = 7;
    spec.sigma_f = -1;
    CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
}

TEST_CASE("denoise rejects non-finite input and clamps output") {
    Tensor x({1, 8, 8}, 0.5);
    x[3] = std::nan("");
    DenoiserSpec spec;
    CHECK_THROWS_AS(denoise(x, spec), std::invalid_argument);
    DenoiseFn fn = make_denoiser(spec);
    Tensor y = fn(random01({1, 8, 8}, 2));
    for (double v : y.vec()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("external denoiser round-trips through cat") {
    Tensor x = random01({3, 6, 5}, 8);
    Tensor y = external_denoise(x, "cat", 30.0);
    REQUIRE(y.shape() == x.shape());
    // float32 wire format: compare after a float round trip
    for (std::size_t i = 0; i < x.numel(); ++i)
        CHECK(y[i] == Catch::Approx(double(float(x[i]))).margin(1e-7));
}

TEST_CASE("external denoiser failure modes") {
    Tensor x = random01({1, 4, 4}, 8);
    CHECK_THROWS_AS(external_denoise(x, "exit 3", 30.0), DenoiserError);
    CHECK_THROWS_AS(external_denoise(x, "echo garbage", 30.0), DenoiserError);
    // wrong output shape
    CHECK_THROWS_AS(external_denoise(x, "printf 'Pf\\n2 2\\n-1.0\\n'; head -c 16 /dev/zero", 30.0),
                    DenoiserError);
    CHECK_THROWS_AS(external_denoise(x, "sleep 60", 1.0), DenoiserError);
}
