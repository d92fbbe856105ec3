#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "deepred/admm.hpp"
#include "deepred/denoise.hpp"
#include "deepred/generator.hpp"

namespace deepred {

enum class TaskKind { none, denoise, sisr, deblur, custom };

enum class OperatorKind { identity, uniform_blur, gaussian_blur, downsample, mask, file };

struct OperatorConfig {
    OperatorKind kind = OperatorKind::identity;
    std::size_t size = 9;      // blur kernel extent
    double sigma = 1.6;        // gaussian blur width
    std::size_t factor = 4;    // downsampling factor
    double keep_fraction = 0.5;  // mask density
    std::string kernel_file;
};

/// Full experiment description parsed from line-oriented key=value text
/// with [section] headers. Unknown keys and out-of-range values are errors.
struct TaskConfig {
    TaskKind task = TaskKind::none;
    std::string input;
    std::string ground_truth;
    std::string output_dir = ".";
    std::uint64_t seed = 0;
    double sigma_255 = 0.0;  // measurement noise used when synthesizing y
    OperatorConfig op;
    SolverConfig solver;
    DenoiserSpec denoiser;
    GeneratorConfig generator;
    bool external_denoiser = false;
    std::string external_command;
    double external_timeout = 60.0;

    PsnrChannel psnr_mode() const {
        return task == TaskKind::denoise ? PsnrChannel::rgb : PsnrChannel::luminance;
    }
};

namespace detail {

struct KeyValue {
    std::string section, key, value;
    std::size_t line;
};

[[noreturn]] inline void cfg_error(const KeyValue& kv, const std::string& msg) {
    throw std::invalid_argument("config line " + std::to_string(kv.line) + ", key '" + kv.key +
                                "': " + msg);
}

inline double parse_double(const KeyValue& kv) {
    try {
        std::size_t pos;
        double v = std::stod(kv.value, &pos);
        if (pos != kv.value.size()) throw std::invalid_argument("trailing junk");
        return v;
    } catch (...) {
        cfg_error(kv, "expected a number, got '" + kv.value + "'");
    }
}

inline std::size_t parse_size(const KeyValue& kv) {
    double v = parse_double(kv);
    if (v < 0 || v != std::floor(v)) cfg_error(kv, "expected a nonnegative integer");
    return std::size_t(v);
}

inline bool parse_bool(const KeyValue& kv) {
    if (kv.value == "true" || kv.value == "1") return true;
    if (kv.value == "false" || kv.value == "0") return false;
    cfg_error(kv, "expected true/false");
}

inline std::vector<std::size_t> parse_size_list(const KeyValue& kv) {
    std::vector<std::size_t> out;
    std::stringstream ss(kv.value);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            out.push_back(std::stoul(tok));
        } catch (...) {
            cfg_error(kv, "expected a comma-separated integer list");
        }
    }
    if (out.empty()) cfg_error(kv, "empty list");
    return out;
}

}  // namespace detail

inline TaskConfig preset_config(const std::string& name);

inline TaskConfig parse_config(const std::string& text) {
    TaskConfig cfg;
    std::istringstream in(text);
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::size_t h = line.find('#');
        if (h != std::string::npos) line = line.substr(0, h);
        auto b = line.find_first_not_of(" \t\r");
        if (b == std::string::npos) continue;
        auto e = line.find_last_not_of(" \t\r");
        line = line.substr(b, e - b + 1);
        if (line.front() == '[') {
            if (line.back() != ']')
                throw std::invalid_argument("config line " + std::to_string(lineno) +
                                            ": unterminated section header");
            section = line.substr(1, line.size() - 2);
            if (section != "task" && section != "operator" && section != "solver" &&
                section != "denoiser" && section != "generator")
                throw std::invalid_argument("config line " + std::to_string(lineno) +
                                            ": unknown section '" + section + "'");
            continue;
        }
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(lineno) +
                                        ": expected key=value");
        auto strip = [](std::string s) {
            auto b2 = s.find_first_not_of(" \t");
            auto e2 = s.find_last_not_of(" \t");
            return b2 == std::string::npos ? std::string() : s.substr(b2, e2 - b2 + 1);
        };
        detail::KeyValue kv{section, strip(line.substr(0, eq)), strip(line.substr(eq + 1)), lineno};
        if (kv.key.empty()) detail::cfg_error(kv, "empty key");

        using detail::cfg_error;
        if (kv.section == "task" || kv.section.empty()) {
            if (kv.key == "preset") {
                TaskConfig p = preset_config(kv.value);
                p.input = cfg.input;  // keep anything already set outside the preset row
                cfg = p;
            } else if (kv.key == "task") {
                if (kv.value == "denoise")
                    cfg.task = TaskKind::denoise;
                else if (kv.value == "sisr")
                    cfg.task = TaskKind::sisr;
                else if (kv.value == "deblur")
                    cfg.task = TaskKind::deblur;
                else if (kv.value == "custom")
                    cfg.task = TaskKind::custom;
                else
                    cfg_error(kv, "unknown task '" + kv.value + "'");
            } else if (kv.key == "input")
                cfg.input = kv.value;
            else if (kv.key == "ground_truth")
                cfg.ground_truth = kv.value;
            else if (kv.key == "output_dir")
                cfg.output_dir = kv.value;
            else if (kv.key == "seed")
                cfg.seed = detail::parse_size(kv);
            else if (kv.key == "sigma")
                cfg.sigma_255 = detail::parse_double(kv);
            else if (kv.key == "parallel")
                cfg.solver.parallel_schedule = detail::parse_bool(kv);
            else
                cfg_error(kv, "unknown key in [task]");
        } else if (kv.section == "operator") {
            if (kv.key == "kind") {
                if (kv.value == "identity")
                    cfg.op.kind = OperatorKind::identity;
                else if (kv.value == "uniform_blur")
                    cfg.op.kind = OperatorKind::uniform_blur;
                else if (kv.value == "gaussian_blur")
                    cfg.op.kind = OperatorKind::gaussian_blur;
                else if (kv.value == "downsample")
                    cfg.op.kind = OperatorKind::downsample;
                else if (kv.value == "mask")
                    cfg.op.kind = OperatorKind::mask;
                else if (kv.value == "file")
                    cfg.op.kind = OperatorKind::file;
                else
                    cfg_error(kv, "unknown operator kind '" + kv.value + "'");
            } else if (kv.key == "size") {
                cfg.op.size = detail::parse_size(kv);
                if (cfg.op.size % 2 == 0) cfg_error(kv, "kernel size must be odd");
            } else if (kv.key == "sigma") {
                cfg.op.sigma = detail::parse_double(kv);
                if (cfg.op.sigma <= 0) cfg_error(kv, "operator sigma must be positive");
            } else if (kv.key == "factor") {
                cfg.op.factor = detail::parse_size(kv);
                if (cfg.op.factor == 0) cfg_error(kv, "factor must be positive");
            } else if (kv.key == "keep_fraction") {
                cfg.op.keep_fraction = detail::parse_double(kv);
                if (cfg.op.keep_fraction < 0 || cfg.op.keep_fraction > 1)
                    cfg_error(kv, "keep_fraction must lie in [0,1]");
            } else if (kv.key == "kernel_file")
                cfg.op.kernel_file = kv.value;
            else
                cfg_error(kv, "unknown key in [operator]");
        } else if (kv.section == "solver") {
            auto& s = cfg.solver;
            if (kv.key == "lambda")
                s.lambda = detail::parse_double(kv);
            else if (kv.key == "mu")
                s.mu = detail::parse_double(kv);
            else if (kv.key == "c")
                s.c_step = detail::parse_double(kv);
            else if (kv.key == "inner_iters")
                s.inner_iters = detail::parse_size(kv);
            else if (kv.key == "denoiser_period")
                s.denoiser_period = detail::parse_size(kv);
            else if (kv.key == "iterations")
                s.total_iterations = detail::parse_size(kv);
            else if (kv.key == "lr")
                s.learning_rate = detail::parse_double(kv);
            else if (kv.key == "beta1")
                s.adam_beta1 = detail::parse_double(kv);
            else if (kv.key == "beta2")
                s.adam_beta2 = detail::parse_double(kv);
            else if (kv.key == "sigma_noise")
                s.sigma_noise = detail::parse_double(kv);
            else if (kv.key == "strategy") {
                if (kv.value == "fixed_point")
                    s.strategy = XStrategy::fixed_point;
                else if (kv.value == "steepest_descent")
                    s.strategy = XStrategy::steepest_descent;
                else
                    cfg_error(kv, "unknown strategy '" + kv.value + "'");
            } else if (kv.key == "smoothing_gamma")
                s.smoothing_gamma = detail::parse_double(kv);
            else if (kv.key == "smoothing_start")
                s.smoothing_start = detail::parse_double(kv);
            else if (kv.key == "averaged_runs")
                s.averaged_runs = detail::parse_size(kv);
            else if (kv.key == "early_stop")
                s.early_stop = detail::parse_bool(kv);
            else if (kv.key == "patience")
                s.early_stop_patience = detail::parse_size(kv);
            else if (kv.key == "checkpoint_every")
                s.checkpoint_every = detail::parse_size(kv);
            else if (kv.key == "checkpoint_path")
                s.checkpoint_path = kv.value;
            else
                cfg_error(kv, "unknown key in [solver]");
        } else if (kv.section == "denoiser") {
            auto& d = cfg.denoiser;
            if (kv.key == "kind") {
                if (kv.value == "nlm")
                    d.kind = DenoiserKind::nlm;
                else if (kv.value == "gaussian")
                    d.kind = DenoiserKind::gaussian;
                else if (kv.value == "median")
                    d.kind = DenoiserKind::median;
                else if (kv.value == "box")
                    d.kind = DenoiserKind::box;
                else if (kv.value == "external")
                    cfg.external_denoiser = true;
                else
                    cfg_error(kv, "unknown denoiser kind '" + kv.value + "'");
            } else if (kv.key == "sigma_f")
                d.sigma_f = detail::parse_double(kv);
            else if (kv.key == "patch")
                d.patch = detail::parse_size(kv);
            else if (kv.key == "window")
                d.window = detail::parse_size(kv);
            else if (kv.key == "h")
                d.h = detail::parse_double(kv);
            else if (kv.key == "gaussian_width")
                d.gaussian_width = detail::parse_double(kv);
            else if (kv.key == "box_width")
                d.box_width = detail::parse_size(kv);
            else if (kv.key == "median_window")
                d.median_window = detail::parse_size(kv);
            else if (kv.key == "command")
                cfg.external_command = kv.value;
            else if (kv.key == "timeout")
                cfg.external_timeout = detail::parse_double(kv);
            else
                cfg_error(kv, "unknown key in [denoiser]");
        } else {  // generator
            auto& g = cfg.generator;
            if (kv.key == "depth")
                g.depth = detail::parse_size(kv);
            else if (kv.key == "channels")
                g.channels = detail::parse_size_list(kv);
            else if (kv.key == "skip_channels")
                g.skip_channels = detail::parse_size_list(kv);
            else if (kv.key == "kernel")
                g.kernel = detail::parse_size(kv);
            else if (kv.key == "upsample") {
                if (kv.value == "bilinear")
                    g.upsample_mode = Upsample::bilinear;
                else if (kv.value == "nearest")
                    g.upsample_mode = Upsample::nearest;
                else
                    cfg_error(kv, "unknown upsample mode");
            } else if (kv.key == "in_channels")
                g.in_channels = detail::parse_size(kv);
            else if (kv.key == "out_channels")
                g.out_channels = detail::parse_size(kv);
            else if (kv.key == "padding") {
                if (kv.value == "reflect")
                    g.padding = Padding::reflect;
                else if (kv.value == "zero")
                    g.padding = Padding::zero;
                else
                    cfg_error(kv, "unknown padding mode");
            } else if (kv.key == "lrelu_slope")
                g.lrelu_slope = detail::parse_double(kv);
            else
                cfg_error(kv, "unknown key in [generator]");
        }
    }
    // generator lists sized to depth when only depth was overridden
    if (cfg.generator.channels.size() != cfg.generator.depth &&
        cfg.generator.channels.size() == 1)
        cfg.generator.channels.assign(cfg.generator.depth, cfg.generator.channels[0]);
    if (cfg.generator.skip_channels.size() != cfg.generator.depth &&
        cfg.generator.skip_channels.size() == 1)
        cfg.generator.skip_channels.assign(cfg.generator.depth, cfg.generator.skip_channels[0]);
    return cfg;
}

/// Named presets carrying the published per-task parameter rows.
inline TaskConfig preset_config(const std::string& name) {
    TaskConfig c;
    c.denoiser.kind = DenoiserKind::nlm;
    if (name == "denoising") {
        c.task = TaskKind::denoise;
        c.sigma_255 = 25.0;
        c.op.kind = OperatorKind::identity;
        c.solver.lambda = 0.5;
        c.solver.mu = 0.5;
        c.solver.learning_rate = 0.008;
        c.solver.sigma_noise = 0.033;
        c.solver.total_iterations = 6000;
        c.solver.averaged_runs = 2;
        c.denoiser.sigma_f = 3.0;
    } else if (name == "sisr4" || name == "sisr8") {
        c.task = TaskKind::sisr;
        c.sigma_255 = 0.0;
        c.op.kind = OperatorKind::downsample;
        c.op.factor = name == "sisr4" ? 4 : 8;
        c.op.size = 9;
        c.op.sigma = name == "sisr4" ? 1.0 : 2.0;  // anti-aliasing width scales with the factor
        c.solver.lambda = 0.05;
        c.solver.mu = 0.06;
        c.solver.learning_rate = 0.001;
        c.solver.sigma_noise = 0.02;
        c.solver.total_iterations = name == "sisr4" ? 2000 : 4000;
        // published rows use BM3D at σ_f = 5; NLM substitutes by default with
        // the same strength (use [denoiser] kind=external for a real BM3D)
        c.denoiser.sigma_f = 5.0;
    } else if (name == "deblur-uniform" || name == "deblur-gauss") {
        c.task = TaskKind::deblur;
        c.sigma_255 = std::sqrt(2.0);
        if (name == "deblur-uniform") {
            c.op.kind = OperatorKind::uniform_blur;
            c.op.size = 9;
        } else {
            c.op.kind = OperatorKind::gaussian_blur;
            c.op.size = 25;
            c.op.sigma = 1.6;
        }
        c.solver.lambda = 0.02;
        c.solver.mu = 0.04;
        c.solver.learning_rate = 0.004;
        c.solver.sigma_noise = 0.01;
        c.solver.total_iterations = 30000;
        c.denoiser.sigma_f = 3.0;
    } else {
        throw std::invalid_argument("unknown preset '" + name +
                                    "' (have: denoising, sisr4, sisr8, deblur-uniform, deblur-gauss)");
    }
    return c;
}

inline std::string serialize_config(const TaskConfig& c) {
    std::ostringstream out;
    out.precision(17);
    auto task_name = [&]() {
        switch (c.task) {
            case TaskKind::denoise: return "denoise";
            case TaskKind::sisr: return "sisr";
            case TaskKind::deblur: return "deblur";
            case TaskKind::custom: return "custom";
            default: return "";
        }
    };
    out << "[task]\n";
    if (c.task != TaskKind::none) out << "task=" << task_name() << "\n";
    if (!c.input.empty()) out << "input=" << c.input << "\n";
    if (!c.ground_truth.empty()) out << "ground_truth=" << c.ground_truth << "\n";
    out << "output_dir=" << c.output_dir << "\nseed=" << c.seed << "\nsigma=" << c.sigma_255
        << "\nparallel=" << (c.solver.parallel_schedule ? "true" : "false") << "\n";
    out << "[operator]\nkind=";
    switch (c.op.kind) {
        case OperatorKind::identity: out << "identity"; break;
        case OperatorKind::uniform_blur: out << "uniform_blur"; break;
        case OperatorKind::gaussian_blur: out << "gaussian_blur"; break;
        case OperatorKind::downsample: out << "downsample"; break;
        case OperatorKind::mask: out << "mask"; break;
        case OperatorKind::file: out << "file"; break;
    }
    out << "\nsize=" << c.op.size << "\nsigma=" << c.op.sigma << "\nfactor=" << c.op.factor
        << "\nkeep_fraction=" << c.op.keep_fraction << "\n";
    if (!c.op.kernel_file.empty()) out << "kernel_file=" << c.op.kernel_file << "\n";
    const auto& s = c.solver;
    out << "[solver]\nlambda=" << s.lambda << "\nmu=" << s.mu << "\nc=" << s.c_step
        << "\ninner_iters=" << s.inner_iters << "\ndenoiser_period=" << s.denoiser_period
        << "\niterations=" << s.total_iterations << "\nlr=" << s.learning_rate
        << "\nbeta1=" << s.adam_beta1 << "\nbeta2=" << s.adam_beta2
        << "\nsigma_noise=" << s.sigma_noise << "\nstrategy="
        << (s.strategy == XStrategy::fixed_point ? "fixed_point" : "steepest_descent")
        << "\nsmoothing_gamma=" << s.smoothing_gamma << "\nsmoothing_start=" << s.smoothing_start
        << "\naveraged_runs=" << s.averaged_runs
        << "\nearly_stop=" << (s.early_stop ? "true" : "false")
        << "\npatience=" << s.early_stop_patience << "\ncheckpoint_every=" << s.checkpoint_every
        << "\n";
    if (!s.checkpoint_path.empty()) out << "checkpoint_path=" << s.checkpoint_path << "\n";
    const auto& d = c.denoiser;
    out << "[denoiser]\nkind=";
    if (c.external_denoiser)
        out << "external";
    else
        switch (d.kind) {
            case DenoiserKind::nlm: out << "nlm"; break;
            case DenoiserKind::gaussian: out << "gaussian"; break;
            case DenoiserKind::median: out << "median"; break;
            case DenoiserKind::box: out << "box"; break;
        }
    out << "\nsigma_f=" << d.sigma_f << "\npatch=" << d.patch << "\nwindow=" << d.window
        << "\nh=" << d.h << "\ngaussian_width=" << d.gaussian_width
        << "\nbox_width=" << d.box_width << "\nmedian_window=" << d.median_window << "\n";
    if (!c.external_command.empty())
        out << "command=" << c.external_command << "\ntimeout=" << c.external_timeout << "\n";
    const auto& g = c.generator;
    out << "[generator]\ndepth=" << g.depth << "\nchannels=";
    for (std::size_t i = 0; i < g.channels.size(); ++i) out << (i ? "," : "") << g.channels[i];
    out << "\nskip_channels=";
    for (std::size_t i = 0; i < g.skip_channels.size(); ++i)
        out << (i ? "," : "") << g.skip_channels[i];
    out << "\nkernel=" << g.kernel << "\nupsample="
        << (g.upsample_mode == Upsample::bilinear ? "bilinear" : "nearest")
        << "\nin_channels=" << g.in_channels << "\nout_channels=" << g.out_channels
        << "\npadding=" << (g.padding == Padding::reflect ? "reflect" : "zero")
        << "\nlrelu_slope=" << g.lrelu_slope << "\n";
    return out.str();
}

/// Build the degradation operator for an image of the given shape.
inline LinearOperator build_operator(const OperatorConfig& oc, const Shape& image_shape,
                                     std::uint64_t seed = 0) {
    switch (oc.kind) {
        case OperatorKind::identity:
            return identity_op(image_shape);
        case OperatorKind::uniform_blur:
            return blur_op(make_uniform_kernel(oc.size), image_shape);
        case OperatorKind::gaussian_blur:
            return blur_op(make_gaussian_kernel(oc.size, oc.sigma), image_shape);
        case OperatorKind::downsample:
            return downsample_op(make_gaussian_kernel(oc.size, oc.sigma), oc.factor, image_shape);
        case OperatorKind::mask: {
            MaskPattern m;
            m.height = image_shape[1];
            m.width = image_shape[2];
            m.keep.resize(m.height * m.width);
            Rng rng(seed ^ 0xdeadbeef);
            for (std::size_t i = 0; i < m.keep.size(); ++i)
                m.keep[i] = rng.uniform(0, 1) < oc.keep_fraction;
            return mask_op(m, image_shape[0]);
        }
        case OperatorKind::file:
            return blur_op(load_kernel(oc.kernel_file), image_shape);
    }
    throw std::invalid_argument("build_operator: unknown kind");
}

}  // namespace deepred
