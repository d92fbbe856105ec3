#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <cstdio>
#include <fstream>

#include "deepred/admm.hpp"
#include "deepred/denoise.hpp"

using namespace deepred;

namespace {

Tensor random01(const Shape& s, std::uint64_t seed) {
    Tensor t(s);
    Rng rng(seed);
    rng.fill_uniform(t, 0.0, 1.0);
    return t;
}

GeneratorConfig tiny_generator(std::size_t h, std::size_t w, std::size_t out_ch = 1) {
    GeneratorConfig cfg;
    cfg.depth = 2;
    cfg.channels = {8, 8};
    cfg.skip_channels = {2, 2};
    cfg.in_channels = 8;
    cfg.out_channels = out_ch;
    cfg.height = h;
    cfg.width = w;
    return cfg;
}

SolveInput tiny_problem(std::uint64_t seed) {
    const Shape shape{1, 16, 16};
    SolveInput in;
    in.H = identity_op(shape);
    in.y = random01(shape, seed);
    in.generator = tiny_generator(16, 16);
    DenoiserSpec spec;
    spec.kind = DenoiserKind::gaussian;
    spec.gaussian_width = 0.8;
    in.denoiser = make_denoiser(spec);
    in.config.lambda = 0.5;
    in.config.mu = 0.5;
    in.config.total_iterations = 30;
    in.config.denoiser_period = 10;
    in.config.learning_rate = 0.01;
    in.config.sigma_noise = 0.01;
    in.config.smoothing_start = 0.5;
    in.seed = seed;
    return in;
}

}  // namespace

TEST_CASE("fixed-point x-update follows the closed-form contraction") {
    // with f = identity the iteration contracts toward T + u with rate
    // lambda/(lambda+mu): x_J = tu + r^J (x0 - tu)
    const double lambda = 0.3, mu = 0.7;
    Tensor x0 = random01({1, 4, 4}, 1);
    Tensor T = random01({1, 4, 4}, 2);
    Tensor u = random01({1, 4, 4}, 3);
    DenoiseFn ident = [](const Tensor& t) { return t; };
    for (std::size_t J : {std::size_t(1), std::size_t(3), std::size_t(8)}) {
        Tensor got = x_step_fixed_point(x0, T, u, ident, lambda, mu, J);
        const double r = std::pow(lambda / (lambda + mu), double(J));
        for (std::size_t i = 0; i < got.numel(); ++i) {
            double tu = T[i] + u[i];
            CHECK(got[i] == Catch::Approx(tu + r * (x0[i] - tu)).margin(1e-12));
        }
    }
}

TEST_CASE("fixed-point x-update with a scaling denoiser") {
    // f(x) = a x gives the affine recursion x <- (lambda a x + mu tu)/(lambda+mu)
    const double lambda = 0.4, mu = 0.2, a = 0.6;
    Tensor x = random01({2, 3}, 4);
    Tensor T = random01({2, 3}, 5);
    Tensor u = random01({2, 3}, 6);
    DenoiseFn scale = [a](const Tensor& t) {
        Tensor o = t;
        o *= a;
        return o;
    };
    Tensor got = x_step_fixed_point(x, T, u, scale, lambda, mu, 5);
    for (std::size_t i = 0; i < x.numel(); ++i) {
        double v = x[i], tu = T[i] + u[i];
        for (int j = 0; j < 5; ++j) v = (lambda * a * v + mu * tu) / (lambda + mu);
        CHECK(got[i] == Catch::Approx(v).margin(1e-12));
    }
    // a precomputed first f(x) is honored
    Tensor fx0 = scale(x);
    Tensor same = x_step_fixed_point(x, T, u, scale, lambda, mu, 5, &fx0);
    CHECK(same.vec() == got.vec());
}

TEST_CASE("steepest-descent default step solves the frozen quadratic exactly") {
    // with f = 0 the surrogate minimizer is mu/(lambda+mu) (T+u), and the
    // default step 1/(lambda+mu) reaches it in one move
    const double lambda = 0.5, mu = 0.5;
    Tensor x = random01({1, 3, 3}, 7);
    Tensor T = random01({1, 3, 3}, 8);
    Tensor u = random01({1, 3, 3}, 9);
    DenoiseFn zero = [](const Tensor& t) { return Tensor(t.shape()); };
    Tensor got = x_step_sd(x, T, u, zero, lambda, mu, 1.0 / (lambda + mu), 1);
    for (std::size_t i = 0; i < got.numel(); ++i)
        CHECK(got[i] == Catch::Approx(mu * (T[i] + u[i]) / (lambda + mu)).margin(1e-12));
    CHECK_THROWS_AS(x_step_sd(x, T, u, zero, lambda, mu, 0.0, 1), std::invalid_argument);
}

TEST_CASE("both x-update strategies agree at the fixed point") {
    const double lambda = 0.3, mu = 0.6;
    Tensor x = random01({1, 5, 5}, 10);
    Tensor T = random01({1, 5, 5}, 11);
    Tensor u = random01({1, 5, 5}, 12);
    DenoiseFn half = [](const Tensor& t) {
        Tensor o = t;
        o *= 0.5;
        return o;
    };
    Tensor fp = x_step_fixed_point(x, T, u, half, lambda, mu, 200);
    Tensor sd = x_step_sd(x, T, u, half, lambda, mu, 1.0 / (lambda + mu), 200);
    for (std::size_t i = 0; i < fp.numel(); ++i)
        CHECK(fp[i] == Catch::Approx(sd[i]).margin(1e-10));
}

TEST_CASE("dual update is u - x + T") {
    Tensor u = random01({4}, 1), x = random01({4}, 2), T = random01({4}, 3);
    Tensor got = u_step(u, x, T);
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(got[i] == Catch::Approx(u[i] - x[i] + T[i]).margin(1e-15));
    CHECK_THROWS_AS(u_step(Tensor({3}), x, T), std::invalid_argument);
}

TEST_CASE("objective decomposition matches a hand evaluation") {
    const Shape shape{1, 2, 2};
    Tensor x({1, 2, 2}, {0.2, 0.4, 0.6, 0.8});
    Tensor u({1, 2, 2}, {0.1, 0.0, -0.1, 0.0});
    Tensor T({1, 2, 2}, {0.3, 0.3, 0.3, 0.3});
    Tensor y({1, 2, 2}, {0.5, 0.5, 0.5, 0.5});
    Tensor fx({1, 2, 2}, {0.25, 0.35, 0.55, 0.75});
    auto H = identity_op(shape);
    ObjectiveParts o = objective_parts(x, u, T, y, H, fx, 0.5, 0.25);

    double data = 0.5 * 4 * 0.2 * 0.2;
    double red = 0.5 * 0.5 * (0.2 * -0.05 + 0.4 * 0.05 + 0.6 * 0.05 + 0.8 * 0.05);
    double gap = 0.5 * 0.25 * (0.2 * 0.2 + 0.1 * 0.1 + 0.4 * 0.4 + 0.5 * 0.5);
    CHECK(o.data_term == Catch::Approx(data).margin(1e-14));
    CHECK(o.red_term == Catch::Approx(red).margin(1e-14));
    CHECK(o.gap_term == Catch::Approx(gap).margin(1e-14));
    CHECK(o.total == Catch::Approx(data + red + gap).margin(1e-14));
}

TEST_CASE("output smoothing follows the exponential recurrence") {
    Tensor acc;
    Tensor a({2}, {1.0, 2.0}), b({2}, {3.0, 4.0});
    smooth_output(acc, a, 0.9);
    CHECK(acc.vec() == a.vec());  // first value seeds the accumulator
    smooth_output(acc, b, 0.9);
    CHECK(acc[0] == Catch::Approx(0.9 * 1.0 + 0.1 * 3.0));
    CHECK(acc[1] == Catch::Approx(0.9 * 2.0 + 0.1 * 4.0));
    CHECK_THROWS_AS(smooth_output(acc, b, 1.0), std::invalid_argument);
}

TEST_CASE("network update steps reduce their own loss") {
    GeneratorConfig gcfg = tiny_generator(16, 16);
    Rng rng(3);
    GeneratorNet net = GeneratorNet::init(gcfg, rng);
    auto H = identity_op({1, 16, 16});
    Tensor y = random01({1, 16, 16}, 4);
    SeedInput seed = init_seed(16, 16, 5, gcfg.in_channels);
    OptimizerState opt = OptimizerState::init(net.parameter_values(), 0.01);
    Tensor x = y, u({1, 16, 16});

    double first = theta_step(net, opt, y, H, seed.z, x, u, 0.5);
    double last = first;
    for (int i = 0; i < 60; ++i) last = theta_step(net, opt, y, H, seed.z, x, u, 0.5);
    CHECK(last < first);
    CHECK_THROWS_AS(theta_step(net, opt, y, H, seed.z, x, u, 0.5, 0), std::invalid_argument);
}

TEST_CASE("the denoiser is never called inside backprop") {
    SolveInput in = tiny_problem(21);
    std::atomic<std::size_t> calls{0};
    std::atomic<bool> saw_backward{false};
    DenoiseFn inner = in.denoiser;
    in.denoiser = [&](const Tensor& t) {
        ++calls;
        if (Tape::in_backward()) saw_backward = true;
        return inner(t);
    };
    RunResult res = run_single(in);
    CHECK_FALSE(saw_backward.load());
    // one evaluation feeding the x-update plus one for the logged objective,
    // per round
    const std::size_t rounds = in.config.total_iterations / in.config.denoiser_period;
    CHECK(calls.load() == 2 * rounds);
    CHECK(res.trace.size() == rounds);
}

TEST_CASE("parallel and sequential schedules are bit-identical") {
    SolveInput a = tiny_problem(33);
    SolveInput b = tiny_problem(33);
    a.config.parallel_schedule = false;
    b.config.parallel_schedule = true;
    RunResult ra = run_single(a);
    RunResult rb = run_single(b);
    CHECK(ra.output.vec() == rb.output.vec());
    REQUIRE(ra.trace.size() == rb.trace.size());
    for (std::size_t i = 0; i < ra.trace.size(); ++i) {
        CHECK(ra.trace[i].total == rb.trace[i].total);
        CHECK(ra.trace[i].constraint_gap == rb.trace[i].constraint_gap);
    }
}

TEST_CASE("with no denoiser the iterate shadows the network output") {
    SolveInput in = tiny_problem(44);
    in.denoiser = {};
    RunResult res = run_single(in);
    // rebuild the solver's code z: the rng first initializes the network,
    // then seeds the code
    Rng r(in.seed);
    GeneratorNet scratch = GeneratorNet::init(in.generator, r);
    SeedInput seed = init_seed(16, 16, r.next_u64(), in.generator.in_channels);
    Tensor T = res.state.net.forward(seed.z);
    // x == T_theta(z) exactly after every round
    CHECK(res.state.x.vec() == T.vec());
    // and the dual variable is never touched
    for (double v : res.state.u.vec()) CHECK(v == 0.0);
}

TEST_CASE("solver state survives a checkpoint round trip") {
    SolveInput in = tiny_problem(55);
    RunResult res = run_single(in);
    const char* path = "state.ckpt";
    save_state(res.state, path);
    AdmmState back;
    back.net.config = in.generator;
    restore_state(back, path);
    CHECK(back.round == res.state.round);
    CHECK(back.x.vec() == res.state.x.vec());
    CHECK(back.u.vec() == res.state.u.vec());
    CHECK(back.smoothed.vec() == res.state.smoothed.vec());
    REQUIRE(back.net.params.size() == res.state.net.params.size());
    for (std::size_t i = 0; i < back.net.params.size(); ++i) {
        CHECK(back.net.params[i].name == res.state.net.params[i].name);
        CHECK(back.net.params[i].value.vec() == res.state.net.params[i].value.vec());
    }
    std::remove(path);
}

TEST_CASE("periodic checkpoints are written during the run") {
    SolveInput in = tiny_problem(66);
    in.config.checkpoint_every = 2;
    in.config.checkpoint_path = "periodic.ckpt";
    run_single(in);
    AdmmState st;
    st.net.config = in.generator;
    restore_state(st, "periodic.ckpt");
    CHECK(st.round == 2);  // 3 rounds total; the last multiple of 2 is 2
    std::remove("periodic.ckpt");
}

TEST_CASE("divergence surfaces as a typed error carrying the trace so far") {
    SolveInput in = tiny_problem(77);
    std::size_t calls = 0;
    in.denoiser = [&](const Tensor& t) {
        Tensor o = t;
        if (++calls > 3) o[0] = std::nan("");
        return o;
    };
    try {
        run_single(in);
        FAIL("expected SolverDiverged");
    } catch (const SolverDiverged& e) {
        CHECK(e.partial_trace.size() >= 1);
        CHECK(std::string(e.what()).size() > 0);
    }
}

TEST_CASE("full solve averages runs and records traces") {
    SolveInput in = tiny_problem(88);
    in.config.averaged_runs = 2;
    Image gt(random01({1, 16, 16}, 88));
    in.ground_truth = gt;
    SolveResult res = run(in);
    CHECK(res.restored.channels() == 1);
    CHECK(res.restored.height() == 16);
    REQUIRE(res.run_traces.size() == 2);
    // distinct seeds: the two runs are genuinely different
    CHECK(res.run_traces[0].back().total != res.run_traces[1].back().total);
    for (const auto& tr : res.run_traces) {
        REQUIRE(tr.size() == 3);
        CHECK(tr.back().iteration == 30);
        CHECK(std::isfinite(tr.back().psnr));
        CHECK(tr.front().seconds <= tr.back().seconds);
    }
}

TEST_CASE("trace csv round trips through the documented header") {
    std::vector<TraceRecord> tr(2);
    tr[0].iteration = 10;
    tr[0].total = 1.5;
    tr[0].psnr = std::nan("");
    tr[1].iteration = 20;
    tr[1].total = 1.25;
    tr[1].psnr = 30.0;
    const char* path = "trace.csv";
    write_trace_csv(tr, path);
    std::ifstream in(path);
    std::string header, row1, row2;
    std::getline(in, header);
    std::getline(in, row1);
    std::getline(in, row2);
    CHECK(header == "iteration,data_term,red_term,gap_term,total,constraint_gap,psnr,seconds");
    CHECK(row1.substr(0, 3) == "10,");
    CHECK(row1.find("nan") != std::string::npos);
    CHECK(row2.find("30") != std::string::npos);
    std::remove(path);
}

TEST_CASE("conjugate gradient solves the regularized normal equations") {
    const Shape shape{1, 6, 6};
    auto H = blur_op(make_gaussian_kernel(3, 1.0), shape);
    Tensor truth = random01(shape, 5);
    const double mu = 0.4;
    // rhs = (HᵀH + μI) truth, then recover truth
    Tensor rhs = H.adjoint(H.forward(truth));
    for (std::size_t i = 0; i < rhs.numel(); ++i) rhs[i] += mu * truth[i];
    Tensor sol = solve_normal_cg(H, rhs, mu, Tensor(shape), 200, 1e-12);
    for (std::size_t i = 0; i < sol.numel(); ++i)
        CHECK(sol[i] == Catch::Approx(truth[i]).margin(1e-8));
}

TEST_CASE("generator-free baseline recovers the data under an identity prior") {
    // with f = identity the prior is inert, so ADMM must converge to the
    // least-squares solution; for H = I that is y itself
    const Shape shape{1, 8, 8};
    Tensor y = random01(shape, 13);
    auto H = identity_op(shape);
    DenoiseFn ident = [](const Tensor& t) { return t; };
    SolverConfig cfg;
    cfg.lambda = 0.2;
    cfg.mu = 0.5;
    cfg.total_iterations = 4000;
    cfg.denoiser_period = 10;
    RunResult res = run_red_baseline(y, H, ident, cfg);
    for (std::size_t i = 0; i < y.numel(); ++i)
        CHECK(res.output[i] == Catch::Approx(y[i]).margin(1e-6));
    CHECK(res.trace.size() == 400);
    CHECK(res.trace.back().total <= res.trace.front().total);
}

TEST_CASE("solver configuration is validated") {
    SolverConfig cfg;
    cfg.lambda = -1;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = SolverConfig{};
    cfg.lambda = cfg.mu = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = SolverConfig{};
    cfg.inner_iters = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = SolverConfig{};
    cfg.smoothing_gamma = 1.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = SolverConfig{};
    cfg.averaged_runs = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
