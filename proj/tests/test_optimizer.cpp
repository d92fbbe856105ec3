#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "deepred/adam.hpp"

using namespace deepred;

TEST_CASE("zero gradient leaves parameters untouched") {
    std::vector<Tensor> params{Tensor({3}, {1.0, -2.0, 0.5})};
    std::vector<Tensor> grads{Tensor({3})};
    auto st = OptimizerState::init(params, 0.01);
    adam_step(params, grads, st);
    CHECK(params[0][0] == 1.0);
    CHECK(params[0][1] == -2.0);
    CHECK(params[0][2] == 0.5);
}

TEST_CASE("first step moves by roughly lr in the sign direction") {
    // with zeroed moments and bias correction, the first update is
    // lr * g / (|g| + eps') which is lr*sign(g) up to the epsilon.
    std::vector<Tensor> params{Tensor({4}, {0.0, 0.0, 0.0, 0.0})};
    std::vector<Tensor> grads{Tensor({4}, {3.0, -0.001, 1e6, -7.0})};
    auto st = OptimizerState::init(params, 0.01);
    adam_step(params, grads, st);
    for (std::size_t i = 0; i < 4; ++i) {
        double expected = -0.01 * (grads[0][i] > 0 ? 1.0 : -1.0);
        CHECK(params[0][i] == Catch::Approx(expected).margin(1e-6));
    }
}

TEST_CASE("three steps match the scalar recurrence") {
    // reference: hand-rolled scalar recurrence with the same constants
    const double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    double w = 2.0, m = 0.0, v = 0.0;
    std::vector<double> gs{1.5, -0.25, 0.75};
    std::vector<Tensor> params{Tensor({1}, {w})};
    auto st = OptimizerState::init(params, lr, b1, b2, eps);
    for (std::size_t t = 1; t <= gs.size(); ++t) {
        double g = gs[t - 1];
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        double mh = m / (1 - std::pow(b1, double(t)));
        double vh = v / (1 - std::pow(b2, double(t)));
        w -= lr * mh / (std::sqrt(vh) + eps);
        std::vector<Tensor> grads{Tensor({1}, {g})};
        adam_step(params, grads, st);
        CHECK(params[0][0] == Catch::Approx(w).epsilon(1e-14));
    }
    CHECK(st.step == 3);
}

TEST_CASE("mismatched gradient list is rejected") {
    std::vector<Tensor> params{Tensor({2})};
    std::vector<Tensor> grads;
    auto st = OptimizerState::init(params, 0.01);
    CHECK_THROWS_AS(adam_step(params, grads, st), std::invalid_argument);
}

TEST_CASE("descends a quadratic") {
    // minimize (w-3)^2; gradient 2(w-3)
    std::vector<Tensor> params{Tensor({1}, {0.0})};
    auto st = OptimizerState::init(params, 0.05);
    for (int i = 0; i < 2000; ++i) {
        std::vector<Tensor> grads{Tensor({1}, {2 * (params[0][0] - 3.0)})};
        adam_step(params, grads, st);
    }
    CHECK(params[0][0] == Catch::Approx(3.0).margin(1e-3));
}
