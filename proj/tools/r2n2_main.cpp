// Batch operator surface: synth / train / register / eval.
// Config precedence: CLI flag > config file > built-in default; every run
// writes the resolved configuration next to its outputs.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include <CLI11.hpp>
#include <json.hpp>

#include "r2n2/baseline.hpp"
#include "r2n2/errors.hpp"
#include "r2n2/evalkit.hpp"
#include "r2n2/field_io.hpp"
#include "r2n2/plots.hpp"
#include "r2n2/series.hpp"
#include "r2n2/synth.hpp"
#include "r2n2/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw r2n2::io_error("cannot open for writing: " + path.string());
    out << text;
}

void write_resolved(const fs::path& out_dir, const json& resolved) {
    fs::create_directories(out_dir);
    write_text(out_dir / "resolved_config.json", resolved.dump(2) + "\n");
}

json load_config_file(const std::string& path, const std::set<std::string>& known) {
    std::ifstream in(path);
    if (!in) throw r2n2::io_error("cannot open config: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw r2n2::validation_error("config parse error in " + path + ": " + e.what());
    }
    for (const auto& [key, value] : j.items())
        if (!known.count(key))
            throw std::invalid_argument("unknown config key '" + key + "' in " + path);
    return j;
}

// flag > config file > default
template <typename T>
T resolve(const CLI::Option* flag, const T& flag_value, const json& cfg, const char* key,
          const T& fallback) {
    if (flag && flag->count() > 0) return flag_value;
    if (cfg.contains(key)) return cfg.at(key).get<T>();
    return fallback;
}

// ---- synth ------------------------------------------------------------------

int run_synth(int resolution, int count, double deform_scale, int blobs, int landmarks,
              std::uint64_t seed, const std::string& out_dir) {
    const fs::path root(out_dir);
    fs::create_directories(root);
    json manifest;
    manifest["resolution"] = resolution;
    manifest["count"] = count;
    manifest["deform_scale"] = deform_scale;
    manifest["blobs"] = blobs;
    manifest["landmarks"] = landmarks;
    manifest["seed"] = seed;
    manifest["cases"] = json::array();
    for (int i = 0; i < count; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "case_%03d", i);
        const auto c = r2n2::data::generate_case(resolution, deform_scale, blobs,
                                                 seed + (std::uint64_t)i, landmarks);
        r2n2::data::save_case(c, root / name);
        manifest["cases"].push_back(name);
    }
    write_text(root / "cases.json", manifest.dump(2) + "\n");
    json resolved = manifest;
    resolved.erase("cases");
    write_resolved(root, resolved);
    return kExitOk;
}

std::vector<r2n2::data::SyntheticCase> load_case_set(const fs::path& cases_path) {
    fs::path file = cases_path;
    if (fs::is_directory(file)) file /= "cases.json";
    std::ifstream in(file);
    if (!in) throw r2n2::io_error("cannot open case manifest: " + file.string());
    json j;
    in >> j;
    std::vector<r2n2::data::SyntheticCase> cases;
    for (const auto& name : j.at("cases"))
        cases.push_back(r2n2::data::load_case(file.parent_path() / name.get<std::string>()));
    if (cases.empty()) throw r2n2::validation_error("case set is empty: " + file.string());
    return cases;
}

// ---- train ------------------------------------------------------------------

int run_train(const json& cfg, const fs::path& out_dir) {
    r2n2::train::TrainConfig tc;
    tc.learning_rate = cfg.value("learning_rate", tc.learning_rate);
    tc.amsgrad = cfg.value("amsgrad", tc.amsgrad);
    tc.steps = cfg.value("steps", tc.steps);
    tc.lambda = cfg.value("lambda", tc.lambda);
    tc.noise_enabled = cfg.value("noise_enabled", tc.noise_enabled);
    tc.noise_std = cfg.value("noise_std", tc.noise_std);
    tc.dropconnect_rate = cfg.value("dropconnect_rate", tc.dropconnect_rate);
    tc.iterations = cfg.value("iterations", tc.iterations);
    tc.seed = cfg.value("seed", (std::uint64_t)0);
    tc.checkpoint_every = cfg.value("checkpoint_every", tc.checkpoint_every);
    tc.grad_clip_norm = cfg.value("grad_clip_norm", tc.grad_clip_norm);
    tc.validate();

    const int resolution = cfg.value("resolution", 256);
    const int divisor = cfg.value("channels_divisor", 1);
    r2n2::net::NetConfig nc = r2n2::net::NetConfig::toy(resolution, divisor);
    nc.sigma_max = cfg.value("sigma_max", nc.sigma_max);

    const auto cases = load_case_set(cfg.at("data").get<std::string>());
    std::vector<r2n2::train::RegistrationPair> pairs;
    for (const auto& c : cases) pairs.push_back({c.fixed, c.moving});

    fs::create_directories(out_dir);
    const fs::path ckpt_path = out_dir / "checkpoint.r2nc";
    const fs::path metrics_path = out_dir / "metrics.csv";

    std::unique_ptr<r2n2::net::R2N2Net> net;
    r2n2::train::AdamOptimizer opt(tc.learning_rate, tc.amsgrad);
    long start_iteration = 0;
    if (fs::exists(ckpt_path)) {
        auto loaded = r2n2::train::load_checkpoint(ckpt_path);
        if (!(loaded.net->config() == nc))
            throw r2n2::validation_error("checkpoint config does not match train config");
        net = std::move(loaded.net);
        start_iteration = loaded.iteration;
        opt.set_t(loaded.adam_t);
        std::cout << "resuming from iteration " << start_iteration << "\n";
    } else {
        net = std::make_unique<r2n2::net::R2N2Net>(nc, tc.seed);
    }

    const bool fresh_metrics = !fs::exists(metrics_path) || start_iteration == 0;
    std::ofstream metrics(metrics_path, fresh_metrics ? std::ios::trunc : std::ios::app);
    if (!metrics) throw r2n2::io_error("cannot open metrics file: " + metrics_path.string());
    if (fresh_metrics) metrics << "iteration,loss,image_loss,tv_loss,grad_norm,seconds\n";
    metrics.precision(12);

    auto sink = [&](const r2n2::train::IterationRecord& r) {
        metrics << r.iteration << "," << r.loss << "," << r.image_loss << "," << r.tv_loss << ","
                << r.grad_norm << "," << r.seconds << "\n";
        metrics.flush();
        if ((r.iteration + 1) % 100 == 0)
            std::cout << "iter " << r.iteration + 1 << " loss " << r.loss << "\n";
    };
    auto save_ckpt = [&](long iteration) {
        r2n2::train::save_checkpoint(ckpt_path, *net, iteration, opt.t());
    };

    const auto metrics_record = r2n2::train::train_epoch(*net, pairs, tc, opt, start_iteration,
                                                          sink, save_ckpt);
    save_ckpt(start_iteration + tc.iterations);
    std::cout << "trained " << metrics_record.records.size() << " iterations in "
              << metrics_record.total_seconds << " s\n";
    return kExitOk;
}

// ---- register ---------------------------------------------------------------

r2n2::baseline::BaselineConfig baseline_config_for(int resolution, const json& cfg) {
    r2n2::baseline::BaselineConfig bc;
    if (resolution % 4 == 0 && resolution >= 16)
        bc.resolutions = {resolution / 4, resolution / 2, resolution};
    else
        bc.resolutions = {resolution};
    if (cfg.contains("baseline_kernels"))
        bc.kernel_sizes = cfg.at("baseline_kernels").get<std::vector<int>>();
    while (bc.kernel_sizes.size() > bc.resolutions.size()) bc.kernel_sizes.pop_back();
    bc.iterations_per_level = cfg.value("baseline_iterations", bc.iterations_per_level);
    bc.learning_rate = cfg.value("baseline_learning_rate", bc.learning_rate);
    bc.lambda = cfg.value("baseline_lambda", bc.lambda);
    return bc;
}

int run_register(const std::string& fixed_path, const std::string& moving_path,
                 const std::string& method, const std::string& checkpoint, int steps,
                 const json& cfg, const fs::path& out_dir) {
    const r2n2::Image2D fixed = r2n2::load_pgm(fixed_path);
    const r2n2::Image2D moving = r2n2::load_pgm(moving_path);
    fs::create_directories(out_dir);
    json diag;
    diag["method"] = method;
    diag["fixed"] = fixed_path;
    diag["moving"] = moving_path;

    r2n2::DisplacementField field;
    if (method == "r2n2") {
        auto loaded = r2n2::train::load_checkpoint(checkpoint);
        auto [fields, params] = r2n2::train::unroll(*loaded.net, fixed, moving, steps);
        field = fields.back();
        r2n2::save_params_table(params, out_dir / "params.txt");
        diag["steps"] = steps;
        diag["transform_parameters"] = r2n2::count_transform_params(params);
        diag["checkpoint_iteration"] = loaded.iteration;
    } else {
        const auto bc = baseline_config_for(fixed.grid.height, cfg);
        auto [bs_field, bs_diag] = r2n2::baseline::register_bspline(fixed, moving, bc);
        field = std::move(bs_field);
        diag["transform_parameters"] = bs_diag.parameter_count;
        diag["final_objective"] = bs_diag.final_objective;
        diag["seconds"] = bs_diag.seconds;
        json losses = json::array();
        for (const auto& level : bs_diag.level_losses)
            losses.push_back({{"first", level.front()}, {"last", level.back()}});
        diag["level_losses"] = losses;
    }
    r2n2::save_field(field, out_dir / "field.r2nf");
    r2n2::save_pgm(r2n2::warp(moving, field), out_dir / "warped.pgm");
    write_text(out_dir / "diagnostics.json", diag.dump(2) + "\n");
    return kExitOk;
}

// ---- eval -------------------------------------------------------------------

int run_eval(const std::string& cases_path, const std::string& checkpoint, int steps,
             const json& cfg, const fs::path& out_dir) {
    const auto cases = load_case_set(cases_path);
    auto loaded = r2n2::train::load_checkpoint(checkpoint);

    r2n2::baseline::BaselineConfig bc =
        baseline_config_for(cases.front().fixed.grid.height, cfg);
    r2n2::evalkit::CompareOptions options;
    options.steps = steps;
    options.rms = cfg.value("rms", false);
    options.plot_dir = out_dir / "plots";

    fs::create_directories(out_dir);
    const auto report = r2n2::evalkit::compare_methods(cases, *loaded.net, bc, options);
    r2n2::evalkit::save_report(report, out_dir / "report.json");
    std::cout << "cases " << report.cases.size() << ": pre " << report.pre_mean_px
              << " px, r2n2 " << report.r2n2_mean_px << " px, bspline "
              << report.bspline_mean_px << " px\n"
              << "params " << report.sequence_param_count << " / "
              << report.bspline_param_count << " (ratio " << report.param_ratio << ")\n"
              << "median seconds r2n2 " << report.r2n2_median_seconds << ", bspline "
              << report.bspline_median_seconds << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sequence-based deformable 2D image registration toolkit"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate synthetic ground-truth cases");
    int s_resolution = 64, s_count = 20, s_blobs = 3, s_landmarks = 20;
    double s_scale = 0.08;
    std::uint64_t s_seed = 1;
    std::string s_out = "synth_out";
    synth->add_option("--resolution", s_resolution, "square image size");
    synth->add_option("--count", s_count, "number of cases");
    synth->add_option("--deform-scale", s_scale, "peak displacement, normalized units");
    synth->add_option("--blobs", s_blobs, "gaussian deformations per case");
    synth->add_option("--landmarks", s_landmarks, "landmarks per case");
    synth->add_option("--seed", s_seed, "base seed");
    synth->add_option("--out", s_out, "output directory")->required();

    // train
    auto* train_cmd = app.add_subcommand("train", "train the recurrent registration network");
    std::string t_config, t_out = "train_out", t_data;
    long t_iterations = -1;
    std::uint64_t t_seed = 0;
    int t_steps = -1;
    double t_lr = -1.0, t_lambda = -1.0;
    bool t_no_noise = false;
    auto* t_config_opt = train_cmd->add_option("--config", t_config, "JSON config file");
    auto* t_out_opt = train_cmd->add_option("--out", t_out, "output directory");
    auto* t_data_opt = train_cmd->add_option("--data", t_data, "synthetic case directory");
    auto* t_iter_opt = train_cmd->add_option("--iterations", t_iterations, "iterations");
    auto* t_seed_opt = train_cmd->add_option("--seed", t_seed, "seed");
    auto* t_steps_opt = train_cmd->add_option("--steps", t_steps, "unroll length T");
    auto* t_lr_opt = train_cmd->add_option("--learning-rate", t_lr, "Adam learning rate");
    auto* t_lambda_opt = train_cmd->add_option("--lambda", t_lambda, "regularization weight");
    auto* t_no_noise_flag =
        train_cmd->add_flag("--no-noise", t_no_noise, "disable noise and dropconnect");

    // register
    auto* reg = app.add_subcommand("register", "register one image pair");
    std::string r_fixed, r_moving, r_method = "r2n2", r_checkpoint, r_out = "register_out";
    int r_steps = 25, r_bs_iterations = 250;
    reg->add_option("--fixed", r_fixed, "fixed image (PGM)")->required();
    reg->add_option("--moving", r_moving, "moving image (PGM)")->required();
    reg->add_option("--method", r_method, "r2n2 | bspline")
        ->check(CLI::IsMember({"r2n2", "bspline"}));
    reg->add_option("--checkpoint", r_checkpoint, "trained checkpoint (r2n2 method)");
    reg->add_option("--steps", r_steps, "sequence length T");
    reg->add_option("--baseline-iterations", r_bs_iterations, "B-spline iterations per level");
    reg->add_option("--out", r_out, "output directory");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "compare R2N2 inference and B-spline baseline");
    std::string e_cases, e_checkpoint, e_out = "eval_out";
    int e_steps = 25, e_bs_iterations = 100;
    bool e_rms = false;
    eval_cmd->add_option("--cases", e_cases, "case directory or cases.json")->required();
    eval_cmd->add_option("--checkpoint", e_checkpoint, "trained checkpoint")->required();
    eval_cmd->add_option("--steps", e_steps, "sequence length T");
    eval_cmd->add_option("--baseline-iterations", e_bs_iterations,
                         "B-spline iterations per level");
    eval_cmd->add_flag("--rms", e_rms, "report RMS landmark error instead of mean");
    eval_cmd->add_option("--out", e_out, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return e.get_exit_code() == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (synth->parsed()) {
            json resolved{{"resolution", s_resolution},  {"count", s_count},
                          {"deform_scale", s_scale},     {"blobs", s_blobs},
                          {"landmarks", s_landmarks},    {"seed", s_seed},
                          {"out", s_out}};
            write_resolved(s_out, resolved);
            return run_synth(s_resolution, s_count, s_scale, s_blobs, s_landmarks, s_seed, s_out);
        }
        if (train_cmd->parsed()) {
            static const std::set<std::string> known{
                "learning_rate", "amsgrad",     "steps",      "lambda",
                "noise_enabled", "noise_std",   "dropconnect_rate",
                "iterations",    "seed",        "checkpoint_every",
                "grad_clip_norm", "resolution", "channels_divisor",
                "sigma_max",     "data",        "out"};
            json cfg = t_config_opt->count() ? load_config_file(t_config, known) : json::object();
            // CLI overrides
            if (t_data_opt->count()) cfg["data"] = t_data;
            if (t_iter_opt->count()) cfg["iterations"] = t_iterations;
            if (t_seed_opt->count()) cfg["seed"] = t_seed;
            if (t_steps_opt->count()) cfg["steps"] = t_steps;
            if (t_lr_opt->count()) cfg["learning_rate"] = t_lr;
            if (t_lambda_opt->count()) cfg["lambda"] = t_lambda;
            if (t_no_noise_flag->count()) {
                cfg["noise_enabled"] = false;
                cfg["dropconnect_rate"] = 0.0;
            }
            if (!cfg.contains("data"))
                throw std::invalid_argument("train: missing 'data' (config key or --data)");
            const fs::path out = t_out_opt->count() ? fs::path(t_out)
                                                    : fs::path(cfg.value("out", t_out));
            json resolved = cfg;
            resolved["out"] = out.string();
            write_resolved(out, resolved);
            return run_train(cfg, out);
        }
        if (reg->parsed()) {
            if (r_method == "r2n2" && r_checkpoint.empty())
                throw std::invalid_argument("register: --checkpoint is required with r2n2");
            json cfg{{"baseline_iterations", r_bs_iterations}};
            json resolved{{"fixed", r_fixed},   {"moving", r_moving},
                          {"method", r_method}, {"checkpoint", r_checkpoint},
                          {"steps", r_steps},   {"baseline_iterations", r_bs_iterations},
                          {"out", r_out}};
            write_resolved(r_out, resolved);
            return run_register(r_fixed, r_moving, r_method, r_checkpoint, r_steps, cfg, r_out);
        }
        if (eval_cmd->parsed()) {
            json cfg{{"baseline_iterations", e_bs_iterations}, {"rms", e_rms}};
            json resolved{{"cases", e_cases}, {"checkpoint", e_checkpoint},
                          {"steps", e_steps}, {"baseline_iterations", e_bs_iterations},
                          {"rms", e_rms},     {"out", e_out}};
            write_resolved(e_out, resolved);
            return run_eval(e_cases, e_checkpoint, e_steps, cfg, e_out);
        }
    } catch (const std::invalid_argument& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}
