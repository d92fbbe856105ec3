#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "deepred/adam.hpp"
#include "deepred/denoise.hpp"
#include "deepred/generator.hpp"
#include "deepred/image.hpp"
#include "deepred/linear_operator.hpp"
#include "deepred/tape.hpp"
#include "deepred/tensor.hpp"

namespace deepred {

enum class XStrategy { fixed_point, steepest_descent };

struct SolverConfig {
    double lambda = 0.5;      // RED strength
    double mu = 0.5;          // ADMM penalty
    double c_step = 0.0;      // SD step for the x-update; 0 -> 1/(λ+μ)
    std::size_t inner_iters = 1;        // J
    std::size_t denoiser_period = 10;   // Θ-steps per ADMM round (D)
    std::size_t total_iterations = 6000;  // Θ-step budget
    double learning_rate = 0.008;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double sigma_noise = 0.0;  // per-iteration perturbation of z
    XStrategy strategy = XStrategy::fixed_point;
    double smoothing_gamma = 0.99;
    double smoothing_start = 0.8;  // fraction of the budget where the EMA begins
    std::size_t averaged_runs = 1;
    bool parallel_schedule = false;
    bool early_stop = false;
    std::size_t early_stop_patience = 50;  // rounds without objective improvement
    std::size_t checkpoint_every = 0;      // rounds; 0 disables
    std::string checkpoint_path;

    void validate() const {
        if (lambda < 0 || mu < 0 || lambda + mu <= 0)
            throw std::invalid_argument("solver: need lambda, mu >= 0 with lambda + mu > 0");
        if (inner_iters < 1) throw std::invalid_argument("solver: J must be >= 1");
        if (denoiser_period < 1) throw std::invalid_argument("solver: denoiser period must be >= 1");
        if (!(smoothing_gamma >= 0 && smoothing_gamma < 1))
            throw std::invalid_argument("solver: smoothing gamma must lie in [0,1)");
        if (averaged_runs < 1) throw std::invalid_argument("solver: averaged runs must be >= 1");
    }
};

struct TraceRecord {
    std::size_t iteration = 0;  // Θ-steps completed when the record was taken
    double total = 0;
    double data_term = 0;
    double red_term = 0;
    double gap_term = 0;
    double constraint_gap = 0;  // ‖x − T_Θ(z)‖₂
    double psnr = 0;            // vs ground truth; NaN when unavailable
    double seconds = 0;
};

inline void write_trace_csv(const std::vector<TraceRecord>& trace, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("trace: cannot write " + path);
    out << "iteration,data_term,red_term,gap_term,total,constraint_gap,psnr,seconds\n";
    char buf[256];
    for (const auto& r : trace) {
        std::snprintf(buf, sizeof(buf), "%zu,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.6g\n",
                      r.iteration, r.data_term, r.red_term, r.gap_term, r.total,
                      r.constraint_gap, r.psnr, r.seconds);
        out << buf;
    }
}

struct SolverDiverged : std::runtime_error {
    std::vector<TraceRecord> partial_trace;
    SolverDiverged(const std::string& msg, std::vector<TraceRecord> trace)
        : std::runtime_error(msg), partial_trace(std::move(trace)) {}
};

struct AdmmState {
    Tensor x;
    Tensor u;
    GeneratorNet net;
    std::size_t round = 0;
    Tensor smoothed;  // EMA accumulator; empty until smoothing starts
};

// ---- individual update steps (Algorithm 1 components) ----

struct ObjectiveParts {
    double total = 0, data_term = 0, red_term = 0, gap_term = 0;
};

/// data = ½‖H T − y‖²,  red = (λ/2)xᵀ(x − f(x)),  gap = (μ/2)‖x − T − u‖².
/// `fx` is the already-evaluated denoiser output at x.
inline ObjectiveParts objective_parts(const Tensor& x, const Tensor& u, const Tensor& T,
                                      const Tensor& y, const LinearOperator& H, const Tensor& fx,
                                      double lambda, double mu) {
    ObjectiveParts o;
    Tensor r = H.forward(T);
    r -= y;
    o.data_term = 0.5 * r.squared_norm();
    double red = 0;
    for (std::size_t i = 0; i < x.numel(); ++i) red += x[i] * (x[i] - fx[i]);
    o.red_term = 0.5 * lambda * red;
    Tensor g = x;
    g -= T;
    g -= u;
    o.gap_term = 0.5 * mu * g.squared_norm();
    o.total = o.data_term + o.red_term + o.gap_term;
    return o;
}

/// One optimizer step (repeated n_steps times) on the Θ-subproblem
/// ½‖H T_Θ(z) − y‖² + (μ/2)‖x − T_Θ(z) − u‖². Returns the last loss value.
inline double theta_step(GeneratorNet& net, OptimizerState& opt, const Tensor& y,
                         const LinearOperator& H, const Tensor& z_perturbed, const Tensor& x,
                         const Tensor& u, double mu, std::size_t n_steps = 1) {
    if (n_steps < 1) throw std::invalid_argument("theta_step: n_steps must be >= 1");
    double loss_val = 0;
    for (std::size_t s = 0; s < n_steps; ++s) {
        Tape tape;
        std::vector<Tape::Id> param_ids;
        Tape::Id T = net.build(tape, z_perturbed, param_ids);
        Tape::Id Hx = tape.apply_linear(T, H.forward, H.adjoint);
        Tape::Id loss = tape.half_sse(Hx, y);
        if (mu != 0) {
            Tensor target = x;
            target -= u;
            loss = tape.add(loss, tape.scale(tape.half_sse(T, target), mu));
        }
        loss_val = tape.value(loss)[0];
        if (!std::isfinite(loss_val))
            throw std::runtime_error("theta_step: non-finite loss " + std::to_string(loss_val) +
                                     " at optimizer step " + std::to_string(opt.step));
        tape.backward(loss);
        std::vector<Tensor> params = net.parameter_values();
        std::vector<Tensor> grads;
        grads.reserve(param_ids.size());
        for (auto id : param_ids) grads.push_back(tape.grad(id));
        adam_step(params, grads, opt);
        net.set_parameter_values(params);
    }
    return loss_val;
}

/// Fixed-point x-update: x ← (λ f(x) + μ(T + u))/(λ + μ), J times.
/// `fx0` optionally supplies the pre-computed f at the incoming x (the value
/// the parallel schedule produces while Θ is being updated).
inline Tensor x_step_fixed_point(Tensor x, const Tensor& T, const Tensor& u,
                                 const DenoiseFn& denoiser, double lambda, double mu,
                                 std::size_t J, const Tensor* fx0 = nullptr) {
    if (lambda + mu <= 0) throw std::invalid_argument("x_step: lambda + mu must be positive");
    Tensor tu = T;
    tu += u;
    for (std::size_t j = 0; j < J; ++j) {
        Tensor fx = (j == 0 && fx0) ? *fx0 : denoiser(x);
        for (std::size_t i = 0; i < x.numel(); ++i)
            x[i] = (lambda * fx[i] + mu * tu[i]) / (lambda + mu);
        if (!x.all_finite()) throw std::runtime_error("x_step: non-finite iterate");
    }
    return x;
}

/// Steepest-descent x-update with backtracking on the frozen-denoiser
/// quadratic  (λ/2)‖v − f(x_j)‖² + (μ/2)‖v − T − u‖², whose gradient at x_j
/// is the RED direction λ(x_j − f(x_j)) + μ(x_j − T − u).
inline Tensor x_step_sd(Tensor x, const Tensor& T, const Tensor& u, const DenoiseFn& denoiser,
                        double lambda, double mu, double c, std::size_t J,
                        const Tensor* fx0 = nullptr) {
    if (!(c > 0)) throw std::invalid_argument("x_step_sd: step size must be positive");
    Tensor tu = T;
    tu += u;
    auto surrogate = [&](const Tensor& v, const Tensor& fx) {
        double s = 0;
        for (std::size_t i = 0; i < v.numel(); ++i) {
            double a = v[i] - fx[i], b = v[i] - tu[i];
            s += 0.5 * lambda * a * a + 0.5 * mu * b * b;
        }
        return s;
    };
    for (std::size_t j = 0; j < J; ++j) {
        Tensor fx = (j == 0 && fx0) ? *fx0 : denoiser(x);
        Tensor grad(x.shape());
        for (std::size_t i = 0; i < x.numel(); ++i)
            grad[i] = lambda * (x[i] - fx[i]) + mu * (x[i] - tu[i]);
        const double f0 = surrogate(x, fx);
        double step = c;
        for (;;) {
            Tensor cand = x;
            for (std::size_t i = 0; i < cand.numel(); ++i) cand[i] -= step * grad[i];
            if (surrogate(cand, fx) <= f0) {
                x = std::move(cand);
                break;
            }
            step *= 0.5;
            if (step < 1e-30)
                throw std::runtime_error("x_step_sd: backtracking stalled (step underflow)");
        }
        if (!x.all_finite()) throw std::runtime_error("x_step_sd: non-finite iterate");
    }
    return x;
}

/// u ← u − x + T_Θ(z)
inline Tensor u_step(Tensor u, const Tensor& x, const Tensor& T) {
    u.check_congruent(x, "u_step");
    u -= x;
    u += T;
    return u;
}

/// a ← γ·a + (1−γ)·current (initialized to the first value)
inline void smooth_output(Tensor& accumulator, const Tensor& current, double gamma) {
    if (!(gamma >= 0 && gamma < 1)) throw std::invalid_argument("smooth_output: gamma in [0,1)");
    if (accumulator.numel() == 0) {
        accumulator = current;
        return;
    }
    for (std::size_t i = 0; i < accumulator.numel(); ++i)
        accumulator[i] = gamma * accumulator[i] + (1 - gamma) * current[i];
}

// ---- state checkpointing ----

inline void save_state(const AdmmState& s, const std::string& path) {
    NetworkParams all = s.net.params;
    all.push_back({"__state.x", s.x});
    all.push_back({"__state.u", s.u});
    all.push_back({"__state.round", Tensor({1}, double(s.round))});
    if (s.smoothed.numel() > 0) all.push_back({"__state.smoothed", s.smoothed});
    save_params(all, path);
}

inline void restore_state(AdmmState& s, const std::string& path) {
    NetworkParams all = load_params(path);
    NetworkParams net_params;
    for (auto& p : all) {
        if (p.name == "__state.x")
            s.x = std::move(p.value);
        else if (p.name == "__state.u")
            s.u = std::move(p.value);
        else if (p.name == "__state.round")
            s.round = std::size_t(p.value[0]);
        else if (p.name == "__state.smoothed")
            s.smoothed = std::move(p.value);
        else
            net_params.push_back(std::move(p));
    }
    s.net.params = std::move(net_params);
}

// ---- full solver ----

struct RunResult {
    Tensor output;                   // smoothed restored image planes
    std::vector<TraceRecord> trace;  // one record per ADMM round + a final one
    AdmmState state;
};

struct SolveInput {
    Tensor y;
    LinearOperator H;
    GeneratorConfig generator;
    DenoiseFn denoiser;              // empty -> DIP-alone reduction (λ = μ = 0)
    SolverConfig config;
    std::uint64_t seed = 0;
    std::optional<Tensor> x0;        // overrides the default initialization
    std::optional<Image> ground_truth;
    PsnrChannel psnr_mode = PsnrChannel::rgb;
};

namespace detail {

inline Tensor default_x0(const Tensor& y, const LinearOperator& H) {
    if (H.input_shape == H.output_shape) return y;
    // non-square H: back-project and rescale onto [0,1]
    Tensor x = H.adjoint(y);
    double mx = x.max();
    if (mx > 1.0) x *= 1.0 / mx;
    x.clamp(0.0, 1.0);
    return x;
}

}  // namespace detail

/// One DeepRED run (single z). Rounds follow Figure 1: the denoiser is
/// evaluated at the round-start x — concurrently with the D Θ-steps when
/// parallel_schedule is set — then x and u update once.
inline RunResult run_single(const SolveInput& in) {
    in.config.validate();
    const SolverConfig& cfg = in.config;
    const bool dip_only = !in.denoiser;  // no explicit prior: pure DIP descent

    Rng rng(in.seed);
    GeneratorConfig gcfg = in.generator;
    AdmmState st;
    st.net = GeneratorNet::init(gcfg, rng);
    SeedInput seed = init_seed(gcfg.width, gcfg.height, rng.next_u64(), gcfg.in_channels,
                               cfg.sigma_noise);
    OptimizerState opt = OptimizerState::init(st.net.parameter_values(), cfg.learning_rate,
                                              cfg.adam_beta1, cfg.adam_beta2);

    st.x = in.x0 ? *in.x0 : detail::default_x0(in.y, in.H);
    st.u = Tensor(st.x.shape());
    Tensor T = st.net.forward(seed.z);
    if (T.shape() != st.x.shape())
        throw std::invalid_argument("run: generator output " + shape_str(T.shape()) +
                                    " does not match x " + shape_str(st.x.shape()));

    std::vector<TraceRecord> trace;
    const auto t0 = std::chrono::steady_clock::now();
    auto elapsed = [&]() {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };
    auto record = [&](std::size_t iter, const Tensor& fx) {
        ObjectiveParts o = objective_parts(st.x, st.u, T, in.y, in.H, fx, cfg.lambda, cfg.mu);
        TraceRecord r;
        r.iteration = iter;
        r.total = o.total;
        r.data_term = o.data_term;
        r.red_term = o.red_term;
        r.gap_term = o.gap_term;
        Tensor g = st.x;
        g -= T;
        r.constraint_gap = g.norm();
        r.psnr = std::numeric_limits<double>::quiet_NaN();
        if (in.ground_truth) {
            Tensor out = T;
            r.psnr = psnr(Image(std::move(out)), *in.ground_truth, in.psnr_mode);
        }
        r.seconds = elapsed();
        if (!std::isfinite(r.total))
            throw SolverDiverged("run: non-finite objective at iteration " +
                                     std::to_string(iter), trace);
        trace.push_back(r);
    };

    const std::size_t smooth_from =
        std::size_t(cfg.smoothing_start * double(cfg.total_iterations));
    double best_objective = std::numeric_limits<double>::infinity();
    std::size_t stale_rounds = 0;

    std::size_t iter = 0;
    try {
        while (iter < cfg.total_iterations) {
            const std::size_t steps = std::min(cfg.denoiser_period, cfg.total_iterations - iter);

            // f at round-start x; may overlap with the Θ-steps (Figure 1).
            // Both paths read immutable snapshots, so parallel and sequential
            // schedules produce bit-identical results.
            Tensor fx;
            std::thread worker;
            const Tensor x_snapshot = st.x;
            if (!dip_only && cfg.parallel_schedule)
                worker = std::thread([&]() { fx = in.denoiser(x_snapshot); });

            for (std::size_t s = 0; s < steps; ++s) {
                Tensor zp = perturb_seed(seed, rng);
                theta_step(st.net, opt, in.y, in.H, zp, st.x, st.u, dip_only ? 0.0 : cfg.mu, 1);
                ++iter;
            }

            if (worker.joinable())
                worker.join();
            else if (!dip_only)
                fx = in.denoiser(x_snapshot);

            T = st.net.forward(seed.z);

            if (!dip_only) {
                if (cfg.strategy == XStrategy::fixed_point)
                    st.x = x_step_fixed_point(std::move(st.x), T, st.u, in.denoiser, cfg.lambda,
                                              cfg.mu, cfg.inner_iters, &fx);
                else
                    st.x = x_step_sd(std::move(st.x), T, st.u, in.denoiser, cfg.lambda, cfg.mu,
                                     cfg.c_step > 0 ? cfg.c_step : 1.0 / (cfg.lambda + cfg.mu),
                                     cfg.inner_iters, &fx);
                st.u = u_step(std::move(st.u), st.x, T);
            } else {
                st.x = T;  // x shadows the network output in the DIP reduction
                fx = st.x;
            }
            st.round += 1;

            if (iter >= smooth_from) smooth_output(st.smoothed, T, cfg.smoothing_gamma);
            record(iter, dip_only ? st.x : in.denoiser(st.x));

            if (cfg.checkpoint_every > 0 && st.round % cfg.checkpoint_every == 0 &&
                !cfg.checkpoint_path.empty())
                save_state(st, cfg.checkpoint_path);

            if (cfg.early_stop) {
                if (trace.back().total < best_objective - 1e-12) {
                    best_objective = trace.back().total;
                    stale_rounds = 0;
                } else if (++stale_rounds >= cfg.early_stop_patience) {
                    break;
                }
            }
        }
    } catch (const SolverDiverged&) {
        throw;
    } catch (const std::exception& e) {
        throw SolverDiverged(e.what(), trace);
    }

    RunResult res;
    res.output = st.smoothed.numel() > 0 ? st.smoothed : T;
    res.trace = std::move(trace);
    res.state = std::move(st);
    return res;
}

/// Full solve with optional averaging over independent runs (fresh z and Θ).
struct SolveResult {
    Image restored;
    std::vector<std::vector<TraceRecord>> run_traces;
};

inline SolveResult run(const SolveInput& in) {
    in.config.validate();
    SolveResult result;
    Tensor acc;
    for (std::size_t r = 0; r < in.config.averaged_runs; ++r) {
        SolveInput ri = in;
        ri.seed = in.seed + 0x51ed2700u * r;
        RunResult one = run_single(ri);
        if (acc.numel() == 0)
            acc = one.output;
        else
            acc += one.output;
        result.run_traces.push_back(std::move(one.trace));
    }
    acc *= 1.0 / double(in.config.averaged_runs);
    result.restored = Image(std::move(acc));
    return result;
}

// ---- RED-only baseline (generator removed) ----
// ADMM on ½‖Hv−y‖² + λρ(x) with the constraint x = v: the v-update is the
// data-term proximal (HᵀH + μI)v = Hᵀy + μ(x − u), solved by CG; the x- and
// u-updates are identical to DeepRED's with T replaced by v.

inline Tensor solve_normal_cg(const LinearOperator& H, const Tensor& rhs, double mu, Tensor v,
                              std::size_t max_iters = 50, double tol = 1e-10) {
    auto apply = [&](const Tensor& t) {
        Tensor out = H.adjoint(H.forward(t));
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] += mu * t[i];
        return out;
    };
    Tensor r = rhs;
    r -= apply(v);
    Tensor p = r;
    double rs = r.squared_norm();
    const double stop = tol * tol * rhs.squared_norm();
    for (std::size_t it = 0; it < max_iters && rs > stop; ++it) {
        Tensor ap = apply(p);
        double alpha = rs / p.dot(ap);
        for (std::size_t i = 0; i < v.numel(); ++i) {
            v[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        double rs_new = r.squared_norm();
        for (std::size_t i = 0; i < p.numel(); ++i) p[i] = r[i] + (rs_new / rs) * p[i];
        rs = rs_new;
    }
    return v;
}

inline RunResult run_red_baseline(const Tensor& y, const LinearOperator& H,
                                  const DenoiseFn& denoiser, const SolverConfig& cfg,
                                  const std::optional<Tensor>& x0 = {},
                                  const std::optional<Image>& ground_truth = {},
                                  PsnrChannel psnr_mode = PsnrChannel::rgb) {
    cfg.validate();
    Tensor x = x0 ? *x0 : detail::default_x0(y, H);
    Tensor u(x.shape());
    Tensor v = x;
    const Tensor hty = H.adjoint(y);
    const std::size_t rounds =
        (cfg.total_iterations + cfg.denoiser_period - 1) / cfg.denoiser_period;
    std::vector<TraceRecord> trace;
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t k = 0; k < rounds; ++k) {
        Tensor rhs = hty;
        for (std::size_t i = 0; i < rhs.numel(); ++i) rhs[i] += cfg.mu * (x[i] - u[i]);
        v = solve_normal_cg(H, rhs, cfg.mu, std::move(v));
        x = x_step_fixed_point(std::move(x), v, u, denoiser, cfg.lambda, cfg.mu, cfg.inner_iters);
        u = u_step(std::move(u), x, v);

        ObjectiveParts o = objective_parts(x, u, v, y, H, denoiser(x), cfg.lambda, cfg.mu);
        TraceRecord r;
        r.iteration = std::min((k + 1) * cfg.denoiser_period, cfg.total_iterations);
        r.total = o.total;
        r.data_term = o.data_term;
        r.red_term = o.red_term;
        r.gap_term = o.gap_term;
        Tensor g = x;
        g -= v;
        r.constraint_gap = g.norm();
        r.psnr = std::numeric_limits<double>::quiet_NaN();
        if (ground_truth) {
            Tensor out = x;
            r.psnr = psnr(Image(std::move(out)), *ground_truth, psnr_mode);
        }
        r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        trace.push_back(r);
    }
    RunResult res;
    res.output = x;
    res.trace = std::move(trace);
    res.state.x = std::move(x);
    res.state.u = std::move(u);
    res.state.round = rounds;
    return res;
}

}  // namespace deepred
