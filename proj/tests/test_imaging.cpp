#include <catch2/catch_amalgamated.hpp>

#include <cstdio>

#include "deepred/image.hpp"

using namespace deepred;

namespace {

Image make_gradient(std::size_t C, std::size_t H, std::size_t W) {
    Tensor t({C, H, W});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x)
                t.at3(c, y, x) = double((c * 37 + y * 11 + x * 5) % 256) / 255.0;
    return Image(std::move(t));
}

}  // namespace

TEST_CASE("image construction validates and clamps") {
    CHECK_THROWS_AS(Image(Tensor({2, 4, 4})), std::invalid_argument);
    CHECK_THROWS_AS(Image(Tensor({4, 4})), std::invalid_argument);
    Image img(Tensor({1, 1, 2}, {-0.5, 1.5}));
    CHECK(img.planes[0] == 0.0);
    CHECK(img.planes[1] == 1.0);
}

TEST_CASE("8-bit png round trip is exact") {
    const char* path = "rt8.png";
    for (std::size_t C : {std::size_t(1), std::size_t(3)}) {
        Image img = make_gradient(C, 13, 17);
        save_png(img, path);
        Image back = load_png(path);
        REQUIRE(back.channels() == C);
        REQUIRE(back.height() == 13);
        REQUIRE(back.width() == 17);
        // every written value is k/255, so quantization is lossless
        for (std::size_t i = 0; i < img.planes.numel(); ++i)
            CHECK(back.planes[i] == img.planes[i]);
    }
    std::remove(path);
}

TEST_CASE("16-bit png round trip is exact") {
    const char* path = "rt16.png";
    Tensor t({3, 5, 7});
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = double((i * 9973) % 65536) / 65535.0;
    Image img(std::move(t));
    save_png(img, path, 16);
    Image back = load_png(path);
    for (std::size_t i = 0; i < img.planes.numel(); ++i)
        CHECK(back.planes[i] == Catch::Approx(img.planes[i]).margin(1e-12));
    std::remove(path);
    CHECK_THROWS_AS(save_png(img, path, 12), std::invalid_argument);
    CHECK_THROWS_AS(load_png("missing.png"), std::runtime_error);
}

TEST_CASE("corrupt png reports the offending file") {
    const char* path = "bad.png";
    {
        std::FILE* f = std::fopen(path, "wb");
        std::fputs("not a png at all", f);
        std::fclose(f);
    }
    CHECK_THROWS_WITH(load_png(path), Catch::Matchers::ContainsSubstring("bad.png"));
    std::remove(path);
}

TEST_CASE("pfm round trip preserves float32 payloads") {
    Tensor t({3, 4, 6});
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = double(float(std::sin(double(i)) * 2.0));
    std::FILE* f = std::tmpfile();
    write_pfm(t, f);
    std::rewind(f);
    Tensor back = read_pfm(f);
    std::fclose(f);
    REQUIRE(back.shape() == t.shape());
    for (std::size_t i = 0; i < t.numel(); ++i) CHECK(back[i] == t[i]);
}

TEST_CASE("single-channel pfm uses the gray magic") {
    Tensor t({1, 2, 3}, {1, 2, 3, 4, 5, 6});
    std::FILE* f = std::tmpfile();
    write_pfm(t, f);
    std::rewind(f);
    char magic[3] = {};
    REQUIRE(std::fread(magic, 1, 2, f) == 2);
    CHECK(std::string(magic) == "Pf");
    std::rewind(f);
    Tensor back = read_pfm(f);
    std::fclose(f);
    CHECK(back.shape() == Shape{1, 2, 3});
    CHECK(back[4] == 5.0);
}

TEST_CASE("pfm rejects bottom-up and junk headers") {
    std::FILE* f = std::tmpfile();
    std::fprintf(f, "PF\n2 2\n1.0\n");
    std::rewind(f);
    CHECK_THROWS_AS(read_pfm(f), std::runtime_error);
    std::fclose(f);
    f = std::tmpfile();
    std::fprintf(f, "P6\n2 2\n255\n");
    std::rewind(f);
    CHECK_THROWS_AS(read_pfm(f), std::runtime_error);
    std::fclose(f);
}

TEST_CASE("psnr closed forms") {
    Image a(Tensor({1, 2, 2}, 0.5));
    CHECK(std::isinf(psnr(a, a)));

    // uniform offset of 10/255 → 20·log10(255/10) ≈ 28.1308 dB
    Tensor shifted({1, 2, 2}, 0.5 + 10.0 / 255.0);
    Image b(std::move(shifted));
    CHECK(psnr(a, b) == Catch::Approx(20.0 * std::log10(255.0 / 10.0)).margin(1e-9));

    // offset of exactly 1 → 0 dB
    Image z(Tensor({1, 2, 2}, 0.0)), o(Tensor({1, 2, 2}, 1.0));
    CHECK(psnr(z, o) == Catch::Approx(0.0).margin(1e-12));

    CHECK_THROWS_AS(psnr(a, Image(Tensor({1, 2, 3}))), std::invalid_argument);
}

TEST_CASE("luminance psnr matches the weighted conversion") {
    Image a = make_gradient(3, 4, 4);
    Image b = make_gradient(3, 4, 4);
    b.planes.at3(0, 1, 1) += 0.2;  // red-only perturbation
    b.planes.clamp(0.0, 1.0);
    double direct = psnr(rgb_to_luminance(a), rgb_to_luminance(b));
    CHECK(psnr(a, b, PsnrChannel::luminance) == Catch::Approx(direct));
    // red errors are down-weighted by 0.299 relative to rgb averaging
    CHECK(psnr(a, b, PsnrChannel::luminance) > psnr(a, b, PsnrChannel::rgb));
    CHECK(kLumaR + kLumaG + kLumaB == Catch::Approx(1.0).margin(1e-12));
    Image g = rgb_to_luminance(make_gradient(1, 3, 3));
    CHECK(g.channels() == 1);  // already gray: no-op
}

TEST_CASE("awgn has the right moments and determinism") {
    Image base(Tensor({1, 64, 64}, 0.5));
    Image n1 = add_awgn(base, 25.0, 7);
    Image n2 = add_awgn(base, 25.0, 7);
    Image n3 = add_awgn(base, 25.0, 8);
    CHECK(n1.planes.vec() == n2.planes.vec());
    CHECK(n1.planes.vec() != n3.planes.vec());
    double mean = 0, var = 0;
    for (double v : n1.planes.vec()) mean += v - 0.5;
    mean /= double(n1.planes.numel());
    for (double v : n1.planes.vec()) var += (v - 0.5 - mean) * (v - 0.5 - mean);
    var /= double(n1.planes.numel());
    CHECK(std::abs(mean) < 0.005);
    CHECK(std::sqrt(var) == Catch::Approx(25.0 / 255.0).epsilon(0.05));
    CHECK_THROWS_AS(add_awgn(base, -1.0, 0), std::invalid_argument);
    // sigma 0 is exactly the input
    CHECK(add_awgn(base, 0.0, 0).planes.vec() == base.planes.vec());
}

TEST_CASE("degrade composes the operator with unclamped noise") {
    Image img = make_gradient(1, 8, 8);
    auto H = blur_op(make_uniform_kernel(3), img.planes.shape());
    Tensor clean = degrade(img, H, 0.0, 0);
    Tensor ref = H.forward(img.planes);
    CHECK(clean.vec() == ref.vec());
    Tensor noisy = degrade(img, H, 25.0, 3);
    Rng rng(3);
    for (std::size_t i = 0; i < ref.numel(); ++i)
        CHECK(noisy[i] == Catch::Approx(ref[i] + /*same stream*/ rng.normal(0.0, 25.0 / 255.0)));
}

TEST_CASE("bicubic upsample reproduces constants and ramps") {
    Tensor flat({1, 3, 3}, 0.42);
    Tensor up = bicubic_upsample(flat, 4);
    REQUIRE(up.shape() == Shape{1, 12, 12});
    for (double v : up.vec()) CHECK(v == Catch::Approx(0.42).margin(1e-12));

    // a linear ramp stays linear away from clamped borders
    Tensor ramp({1, 1, 8});
    for (std::size_t x = 0; x < 8; ++x) ramp.at3(0, 0, x) = double(x);
    Tensor r2 = bicubic_upsample(ramp, 2);
    for (std::size_t x = 4; x < 12; ++x) {
        double src = (x + 0.5) / 2.0 - 0.5;
        CHECK(r2.at3(0, 0, x) == Catch::Approx(src).margin(1e-9));
    }
}
