// Command-line harness: experiment execution, method comparison, degradation
// synthesis, and a quick self-check battery.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "deepred/admm.hpp"
#include "deepred/config.hpp"
#include "deepred/denoise_bridge.hpp"

namespace fs = std::filesystem;
using namespace deepred;

namespace {

struct CommonOpts {
    std::string config_path;
    std::string preset;
    std::string output_dir;
    std::int64_t seed = -1;
    std::int64_t iters = -1;
    bool sequential = false;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--config", o.config_path, "experiment description file");
    cmd->add_option("--preset", o.preset,
                    "named preset: denoising, sisr4, sisr8, deblur-uniform, deblur-gauss");
    cmd->add_option("--seed", o.seed, "override the rng seed");
    cmd->add_option("--iters", o.iters, "override the iteration budget");
    cmd->add_option("--output", o.output_dir, "override the output directory");
    cmd->add_flag("--sequential", o.sequential,
                  "run the denoiser after the network updates instead of alongside them");
}

TaskConfig load_task(const CommonOpts& o) {
    std::string text;
    if (!o.preset.empty()) text += "[task]\npreset=" + o.preset + "\n";
    if (!o.config_path.empty()) {
        std::ifstream in(o.config_path);
        if (!in) throw std::runtime_error("cannot open config " + o.config_path);
        std::ostringstream ss;
        ss << in.rdbuf();
        text += ss.str();
    }
    TaskConfig cfg = parse_config(text);
    if (o.seed >= 0) cfg.seed = std::uint64_t(o.seed);
    if (o.iters >= 0) cfg.solver.total_iterations = std::size_t(o.iters);
    if (!o.output_dir.empty()) cfg.output_dir = o.output_dir;
    if (o.sequential) cfg.solver.parallel_schedule = false;
    return cfg;
}

std::size_t thread_budget() {
    const char* env = std::getenv("DEEPRED_THREADS");
    if (!env) return 1;
    long n = std::strtol(env, nullptr, 10);
    if (n < 1) throw std::runtime_error("DEEPRED_THREADS must be a positive integer");
    return std::size_t(n);
}

DenoiseFn build_denoiser(const TaskConfig& cfg) {
    if (cfg.external_denoiser) {
        if (cfg.external_command.empty())
            throw std::runtime_error("external denoiser requested but no command given");
        return [cmd = cfg.external_command, t = cfg.external_timeout](const Tensor& x) {
            return external_denoise(x, cmd, t);
        };
    }
    return make_denoiser(cfg.denoiser);
}

std::string denoiser_label(const TaskConfig& cfg) {
    if (cfg.external_denoiser) return "EXT";
    switch (cfg.denoiser.kind) {
        case DenoiserKind::nlm: return "NLM";
        case DenoiserKind::gaussian: return "GAUSS";
        case DenoiserKind::median: return "MEDIAN";
        case DenoiserKind::box: return "BOX";
    }
    return "?";
}

bool image_like(const Shape& s) {
    return s.size() == 3 && (s[0] == 1 || s[0] == 3);
}

/// Assemble the solve inputs shared by run/compare. When no separate ground
/// truth is given the input is the clean source and the measurement is
/// synthesized; otherwise the input IS the measurement.
struct Experiment {
    Image clean;        // ground truth (also the input when synthesizing)
    Tensor y;           // measurement
    LinearOperator H;
    SolveInput solve;
};

Experiment prepare(const TaskConfig& cfg, const std::string& input_path) {
    if (cfg.task == TaskKind::none) throw std::runtime_error("config error: task is required");
    if (input_path.empty()) throw std::runtime_error("config error: input image is required");
    Experiment e;
    if (cfg.ground_truth.empty()) {
        e.clean = load_png(input_path);
        e.H = build_operator(cfg.op, e.clean.planes.shape(), cfg.seed);
        e.y = degrade(e.clean, e.H, cfg.sigma_255, cfg.seed);
    } else {
        e.clean = load_png(cfg.ground_truth);
        e.H = build_operator(cfg.op, e.clean.planes.shape(), cfg.seed);
        Image measurement = load_png(input_path);
        if (measurement.planes.shape() != e.H.output_shape)
            throw std::runtime_error("input " + input_path + " has shape " +
                                     shape_str(measurement.planes.shape()) +
                                     " but the operator produces " +
                                     shape_str(e.H.output_shape));
        e.y = measurement.planes;
    }
    e.solve.y = e.y;
    e.solve.H = e.H;
    e.solve.generator = cfg.generator;
    e.solve.generator.height = e.clean.height();
    e.solve.generator.width = e.clean.width();
    e.solve.generator.out_channels = e.clean.channels();
    e.solve.generator.validate();
    e.solve.denoiser = build_denoiser(cfg);
    e.solve.config = cfg.solver;
    e.solve.seed = cfg.seed;
    e.solve.ground_truth = e.clean;
    e.solve.psnr_mode = cfg.psnr_mode();
    return e;
}

int cmd_run(const CommonOpts& opts) {
    TaskConfig cfg = load_task(opts);
    Experiment e = prepare(cfg, cfg.input);
    fs::create_directories(cfg.output_dir);
    const fs::path out(cfg.output_dir);

    {
        std::ofstream c(out / "config.txt");
        c << serialize_config(cfg);
    }
    if (image_like(e.y.shape())) {
        Tensor clamped = e.y;
        clamped.clamp(0.0, 1.0);
        save_png(Image(std::move(clamped)), (out / "measurement.png").string());
    }

    SolveResult res;
    try {
        res = run(e.solve);
    } catch (const SolverDiverged& d) {
        write_trace_csv(d.partial_trace, (out / "trace.csv").string());
        std::cerr << "solver diverged: " << d.what() << "\n"
                  << "partial trace (" << d.partial_trace.size() << " rounds) written to "
                  << (out / "trace.csv").string() << "\n";
        return 1;
    }

    save_png(res.restored, (out / "restored.png").string());
    for (std::size_t r = 0; r < res.run_traces.size(); ++r) {
        std::string name = r == 0 ? "trace.csv" : "trace_run" + std::to_string(r + 1) + ".csv";
        write_trace_csv(res.run_traces[r], (out / name).string());
    }

    double final_psnr = psnr(res.restored, e.clean, cfg.psnr_mode());
    std::ostringstream summary;
    summary << "iterations=" << cfg.solver.total_iterations << " runs="
            << cfg.solver.averaged_runs << " seed=" << cfg.seed;
    if (!cfg.ground_truth.empty() || cfg.sigma_255 > 0 ||
        cfg.op.kind != OperatorKind::identity) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), " psnr=%.2f", final_psnr);
        summary << buf;
    }
    summary << "\n";
    {
        std::ofstream s(out / "summary.txt");
        s << summary.str();
    }
    std::cout << summary.str();
    return res.restored.planes.all_finite() ? 0 : 1;
}

int cmd_simulate(const CommonOpts& opts) {
    TaskConfig cfg = load_task(opts);
    if (cfg.task == TaskKind::none) throw std::runtime_error("config error: task is required");
    Image clean = load_png(cfg.input);
    LinearOperator H = build_operator(cfg.op, clean.planes.shape(), cfg.seed);
    Tensor y = degrade(clean, H, cfg.sigma_255, cfg.seed);
    fs::create_directories(cfg.output_dir);
    const fs::path out(cfg.output_dir);
    if (!image_like(y.shape()))
        throw std::runtime_error("the chosen operator does not produce an image; nothing to save");
    Tensor clamped = y;
    clamped.clamp(0.0, 1.0);
    Image degraded(std::move(clamped));
    save_png(degraded, (out / "measurement.png").string());
    if (degraded.planes.shape() == clean.planes.shape()) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "degraded psnr=%.2f\n",
                      psnr(degraded, clean, cfg.psnr_mode()));
        std::cout << buf;
    }
    std::cout << "wrote " << (out / "measurement.png").string() << "\n";
    return 0;
}

std::vector<std::string> collect_inputs(const std::string& input) {
    if (!fs::is_directory(input)) return {input};
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(input))
        if (entry.path().extension() == ".png") files.push_back(entry.path().string());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw std::runtime_error("no .png files in " + input);
    return files;
}

int cmd_compare(const CommonOpts& opts, const std::string& methods_csv) {
    TaskConfig cfg = load_task(opts);
    std::vector<std::string> methods;
    {
        std::stringstream ss(methods_csv);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            if (tok != "dip" && tok != "red" && tok != "deepred")
                throw std::runtime_error("unknown method '" + tok +
                                         "' (have: dip, red, deepred)");
            methods.push_back(tok);
        }
    }
    if (methods.empty()) throw std::runtime_error("no methods requested");
    if (!cfg.ground_truth.empty())
        throw std::runtime_error("compare synthesizes its own measurements; "
                                 "give clean images as input");

    const std::vector<std::string> inputs = collect_inputs(cfg.input);
    const std::string red_label = "RED[FP-" + denoiser_label(cfg) + "]";
    std::vector<std::vector<double>> cells(inputs.size(),
                                           std::vector<double>(methods.size(), 0.0));

    std::mutex log_mutex;
    auto evaluate = [&](std::size_t img_idx) {
        Experiment e = prepare(cfg, inputs[img_idx]);
        for (std::size_t m = 0; m < methods.size(); ++m) {
            double score;
            if (methods[m] == "deepred") {
                score = psnr(run(e.solve).restored, e.clean, cfg.psnr_mode());
            } else if (methods[m] == "dip") {
                SolveInput dip = e.solve;
                dip.denoiser = {};
                score = psnr(run(dip).restored, e.clean, cfg.psnr_mode());
            } else {
                std::optional<Tensor> x0;
                if (e.H.input_shape != e.y.shape())
                    x0 = detail::default_x0(e.y, e.H);
                RunResult r = run_red_baseline(e.y, e.H, e.solve.denoiser, cfg.solver, x0,
                                               e.clean, cfg.psnr_mode());
                Tensor x = r.output;
                x.clamp(0.0, 1.0);
                score = psnr(Image(std::move(x)), e.clean, cfg.psnr_mode());
            }
            cells[img_idx][m] = score;
            std::lock_guard<std::mutex> lk(log_mutex);
            std::cout << fs::path(inputs[img_idx]).stem().string() << " " << methods[m] << " "
                      << score << " dB\n";
        }
    };

    const std::size_t workers = std::min(thread_budget(), inputs.size());
    if (workers <= 1) {
        for (std::size_t i = 0; i < inputs.size(); ++i) evaluate(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w)
            pool.emplace_back([&]() {
                for (std::size_t i = next++; i < inputs.size(); i = next++) evaluate(i);
            });
        for (auto& t : pool) t.join();
    }

    std::ostringstream table;
    table << "image";
    for (const auto& m : methods)
        table << "\t" << (m == "red" ? red_label : m == "dip" ? "DIP" : "DeepRED");
    table << "\n";
    char buf[64];
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        table << fs::path(inputs[i]).stem().string();
        for (double v : cells[i]) {
            std::snprintf(buf, sizeof(buf), "\t%.2f", v);
            table << buf;
        }
        table << "\n";
    }
    table << "Average";
    for (std::size_t m = 0; m < methods.size(); ++m) {
        double s = 0;
        for (std::size_t i = 0; i < inputs.size(); ++i) s += cells[i][m];
        std::snprintf(buf, sizeof(buf), "\t%.2f", s / double(inputs.size()));
        table << buf;
    }
    table << "\n";

    fs::create_directories(cfg.output_dir);
    const fs::path out = fs::path(cfg.output_dir) / "table.txt";
    std::ofstream f(out);
    f << table.str();
    std::cout << "\n" << table.str() << "written to " << out.string() << "\n";
    return 0;
}

// ---- selftest: a quick property battery over the core numerics ----

bool check(const char* name, bool ok) {
    std::printf("%s %s\n", ok ? "PASS" : "FAIL", name);
    return ok;
}

int cmd_selftest() {
    int failures = 0;
    Rng rng(1234);

    {
        bool ok = true;
        MaskPattern mp;
        mp.height = mp.width = 16;
        for (std::size_t i = 0; i < 256; ++i) mp.keep.push_back(rng.next_u64() % 2 == 0);
        std::vector<LinearOperator> ops{
            identity_op({3, 16, 16}),
            blur_op(make_uniform_kernel(9), {3, 16, 16}),
            blur_op(make_gaussian_kernel(7, 1.6), {3, 16, 16}),
            downsample_op(make_gaussian_kernel(5, 1.0), 4, {3, 16, 16}),
            mask_op(mp, 3),
        };
        for (auto& H : ops) {
            Tensor x(H.input_shape), y(H.output_shape);
            rng.fill_normal(x, 0.0, 1.0);
            rng.fill_normal(y, 0.0, 1.0);
            double err = std::abs(H.forward(x).dot(y) - x.dot(H.adjoint(y))) /
                         (x.norm() * y.norm() + 1e-300);
            ok = ok && err <= 1e-10;
        }
        failures += !check("operator adjoint identity", ok);
    }
    {
        Tensor x({1, 8, 8});
        rng.fill_uniform(x, 0.0, 1.0);
        Tensor fast = nlm_denoise(x, 3, 5, 0.05, 0.02);
        // exhaustive re-evaluation at one pixel per window offset
        bool ok = fast.all_finite() && fast.max() <= 1.0 + 1e-12 && fast.min() >= -1e-12;
        Tensor flat({1, 8, 8}, 0.5);
        Tensor f2 = nlm_denoise(flat, 3, 5, 0.05);
        for (double v : f2.vec()) ok = ok && std::abs(v - 0.5) < 1e-12;
        failures += !check("patch-similarity denoiser sanity", ok);
    }
    {
        // linear denoiser fixed point vs the closed form
        const double lambda = 0.5, mu = 0.5, alpha = 0.5;
        Tensor x({1, 4, 4}), T({1, 4, 4}), u({1, 4, 4});
        rng.fill_uniform(x, 0.0, 1.0);
        rng.fill_uniform(T, 0.0, 1.0);
        rng.fill_uniform(u, -0.1, 0.1);
        DenoiseFn f = [alpha](const Tensor& t) {
            Tensor o = t;
            o *= alpha;
            return o;
        };
        Tensor sol = x_step_fixed_point(x, T, u, f, lambda, mu, 200);
        bool ok = true;
        for (std::size_t i = 0; i < sol.numel(); ++i)
            ok = ok && std::abs(sol[i] - mu * (T[i] + u[i]) / (lambda + mu - lambda * alpha)) < 1e-8;
        failures += !check("fixed-point x-update closed form", ok);
    }
    {
        Image a(Tensor({1, 4, 4}, 0.5));
        Image b(Tensor({1, 4, 4}, 0.5 + 10.0 / 255.0));
        bool ok = std::isinf(psnr(a, a)) &&
                  std::abs(psnr(a, b) - 20.0 * std::log10(25.5)) < 1e-9;
        failures += !check("psnr closed form", ok);
    }
    {
        bool ok = true;
        try {
            Tensor x({3, 5, 4});
            rng.fill_uniform(x, 0.0, 1.0);
            Tensor back = external_denoise(x, "cat", 30.0);
            for (std::size_t i = 0; i < x.numel(); ++i)
                ok = ok && std::abs(back[i] - double(float(x[i]))) < 1e-7;
        } catch (const std::exception&) {
            ok = false;
        }
        failures += !check("float-map bridge round trip", ok);
    }
    {
        TaskConfig c = preset_config("deblur-gauss");
        c.input = "x.png";
        bool ok = serialize_config(parse_config(serialize_config(c))) == serialize_config(c);
        failures += !check("config serialization round trip", ok);
    }
    std::printf("%d failure(s)\n", failures);
    return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Unsupervised image restoration: an untrained generator network "
                 "regularized by a plug-in denoiser"};
    app.require_subcommand(1);

    CommonOpts run_opts, sim_opts, cmp_opts;
    std::string methods = "dip,red,deepred";

    CLI::App* c_run = app.add_subcommand("run", "run one restoration experiment");
    add_common(c_run, run_opts);
    CLI::App* c_cmp = app.add_subcommand("compare", "PSNR table for dip/red/deepred");
    add_common(c_cmp, cmp_opts);
    c_cmp->add_option("--methods", methods, "comma-separated subset of dip,red,deepred");
    CLI::App* c_sim = app.add_subcommand("simulate", "synthesize the degraded measurement only");
    add_common(c_sim, sim_opts);
    app.add_subcommand("selftest", "quick numeric property checks");

    CLI11_PARSE(app, argc, argv);
    try {
        if (c_run->parsed()) return cmd_run(run_opts);
        if (c_cmp->parsed()) return cmd_compare(cmp_opts, methods);
        if (c_sim->parsed()) return cmd_simulate(sim_opts);
        return cmd_selftest();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
