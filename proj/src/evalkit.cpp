#include "r2n2/evalkit.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "r2n2/errors.hpp"
#include "r2n2/plots.hpp"
#include "r2n2/train.hpp"

namespace r2n2::evalkit {
namespace {

double now_seconds() {
    using namespace std::chrono;
    return duration<double>(steady_clock::now().time_since_epoch()).count();
}

double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

nlohmann::json tre_to_json(const TreResult& t) {
    return {{"mean_norm", t.mean_norm},
            {"max_norm", t.max_norm},
            {"mean_px", t.mean_px},
            {"max_px", t.max_px}};
}

TreResult tre_from_json(const nlohmann::json& j) {
    TreResult t;
    t.mean_norm = j.at("mean_norm").get<double>();
    t.max_norm = j.at("max_norm").get<double>();
    t.mean_px = j.at("mean_px").get<double>();
    t.max_px = j.at("max_px").get<double>();
    return t;
}

}  // namespace

TreResult tre(const std::vector<std::array<double, 2>>& lm_fixed,
              const std::vector<std::array<double, 2>>& lm_moving,
              const DisplacementField& field, bool rms) {
    if (lm_fixed.empty()) throw std::invalid_argument("tre: empty landmark list");
    if (lm_fixed.size() != lm_moving.size())
        throw std::invalid_argument("tre: landmark list sizes differ");
    const double sx = 0.5 * (field.grid.width - 1);
    const double sy = 0.5 * (field.grid.height - 1);
    TreResult out;
    double acc_norm = 0.0, acc_px = 0.0;
    for (std::size_t i = 0; i < lm_fixed.size(); ++i) {
        double du, dv;
        sample_field(field, lm_fixed[i][0], lm_fixed[i][1], du, dv);
        const double ex = lm_fixed[i][0] + du - lm_moving[i][0];
        const double ey = lm_fixed[i][1] + dv - lm_moving[i][1];
        const double err_norm = std::hypot(ex, ey);
        const double err_px = std::hypot(ex * sx, ey * sy);
        acc_norm += rms ? err_norm * err_norm : err_norm;
        acc_px += rms ? err_px * err_px : err_px;
        out.max_norm = std::max(out.max_norm, err_norm);
        out.max_px = std::max(out.max_px, err_px);
    }
    const double n = (double)lm_fixed.size();
    out.mean_norm = rms ? std::sqrt(acc_norm / n) : acc_norm / n;
    out.mean_px = rms ? std::sqrt(acc_px / n) : acc_px / n;
    return out;
}

std::string config_digest(const std::string& serialized) {
    std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
    for (unsigned char c : serialized) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    std::ostringstream out;
    out << std::hex << h;
    return out.str();
}

EvalReport compare_methods(const std::vector<data::SyntheticCase>& cases,
                           const net::R2N2Net& net, const baseline::BaselineConfig& bs_cfg,
                           const CompareOptions& options) {
    if (cases.empty()) throw std::invalid_argument("compare_methods: no cases");
    const int res = net.config().input_resolution;
    for (const auto& c : cases)
        if (c.fixed.grid.height != res || c.fixed.grid.width != res)
            throw validation_error("compare_methods: case resolution does not match checkpoint");
    if (bs_cfg.resolutions.back() != res)
        throw validation_error("compare_methods: baseline finest level does not match cases");

    EvalReport report;
    report.steps = options.steps;
    report.rms = options.rms;
    {
        std::ostringstream cfg;
        const auto& nc = net.config();
        cfg << "res=" << nc.input_resolution << " ch=" << nc.level_channels[0] << ","
            << nc.level_channels[1] << "," << nc.level_channels[2]
            << " head=" << nc.head_channels << " sigma_max=" << nc.sigma_max;
        report.net_config_digest = config_digest(cfg.str());
    }
    {
        std::ostringstream cfg;
        cfg << "res=";
        for (int r : bs_cfg.resolutions) cfg << r << ",";
        cfg << " k=";
        for (int k : bs_cfg.kernel_sizes) cfg << k << ",";
        cfg << " iters=" << bs_cfg.iterations_per_level << " lr=" << bs_cfg.learning_rate
            << " lambda=" << bs_cfg.lambda << " amsgrad=" << bs_cfg.amsgrad;
        report.baseline_config_digest = config_digest(cfg.str());
    }

    // warm-up pass, excluded from timing
    (void)train::unroll(net, cases[0].fixed, cases[0].moving, 1);
    {
        baseline::BaselineConfig warm = bs_cfg;
        warm.iterations_per_level = 1;
        (void)baseline::register_bspline(cases[0].fixed, cases[0].moving, warm);
    }

    const DisplacementField zero = make_field(cases[0].fixed.grid);
    std::vector<double> r2n2_times, bs_times;
    std::vector<DisplacementField> first_case_fields;
    for (std::size_t ci = 0; ci < cases.size(); ++ci) {
        const data::SyntheticCase& c = cases[ci];
        CaseResult result;
        result.name = "case_" + std::to_string(ci);
        result.pre = tre(c.lm_fixed, c.lm_moving, zero, options.rms);

        const double t0 = now_seconds();
        auto [fields, params] = train::unroll(net, c.fixed, c.moving, options.steps);
        result.r2n2_seconds = now_seconds() - t0;
        result.r2n2 = tre(c.lm_fixed, c.lm_moving, fields.back(), options.rms);
        report.sequence_param_count = count_transform_params(params);
        if (ci == 0) first_case_fields = fields;

        const double t1 = now_seconds();
        auto [bs_field, diag] = baseline::register_bspline(c.fixed, c.moving, bs_cfg);
        result.bspline_seconds = now_seconds() - t1;
        result.bspline = tre(c.lm_fixed, c.lm_moving, bs_field, options.rms);
        report.bspline_param_count = diag.parameter_count;

        r2n2_times.push_back(result.r2n2_seconds);
        bs_times.push_back(result.bspline_seconds);
        report.pre_mean_px += result.pre.mean_px;
        report.r2n2_mean_px += result.r2n2.mean_px;
        report.bspline_mean_px += result.bspline.mean_px;
        report.cases.push_back(std::move(result));
    }
    const double n = (double)cases.size();
    report.pre_mean_px /= n;
    report.r2n2_mean_px /= n;
    report.bspline_mean_px /= n;
    report.r2n2_median_seconds = median(r2n2_times);
    report.bspline_median_seconds = median(bs_times);
    report.param_ratio =
        (double)report.sequence_param_count / (double)report.bspline_param_count;

    if (options.plot_dir) {
        std::filesystem::create_directories(*options.plot_dir);
        save_tre_bars_svg(report, *options.plot_dir / "tre_bars.svg");
        for (int t : options.snapshot_steps) {
            if (t < 1 || t > (int)first_case_fields.size()) continue;
            const DisplacementField& f = first_case_fields[(std::size_t)t - 1];
            save_magnitude_heatmap(f, *options.plot_dir /
                                          ("field_t" + std::to_string(t) + ".pgm"));
            save_quiver_svg(f, *options.plot_dir / ("quiver_t" + std::to_string(t) + ".svg"));
        }
    }
    return report;
}

std::string EvalReport::to_json() const {
    nlohmann::json j;
    j["steps"] = steps;
    j["rms"] = rms;
    j["sequence_param_count"] = sequence_param_count;
    j["bspline_param_count"] = bspline_param_count;
    j["param_ratio"] = param_ratio;
    j["r2n2_median_seconds"] = r2n2_median_seconds;
    j["bspline_median_seconds"] = bspline_median_seconds;
    j["pre_mean_px"] = pre_mean_px;
    j["r2n2_mean_px"] = r2n2_mean_px;
    j["bspline_mean_px"] = bspline_mean_px;
    j["net_config_digest"] = net_config_digest;
    j["baseline_config_digest"] = baseline_config_digest;
    j["cases"] = nlohmann::json::array();
    for (const CaseResult& c : cases) {
        j["cases"].push_back({{"name", c.name},
                              {"pre", tre_to_json(c.pre)},
                              {"r2n2", tre_to_json(c.r2n2)},
                              {"bspline", tre_to_json(c.bspline)},
                              {"r2n2_seconds", c.r2n2_seconds},
                              {"bspline_seconds", c.bspline_seconds}});
    }
    return j.dump(2);
}

EvalReport EvalReport::from_json(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    EvalReport r;
    r.steps = j.at("steps").get<int>();
    r.rms = j.at("rms").get<bool>();
    r.sequence_param_count = j.at("sequence_param_count").get<long>();
    r.bspline_param_count = j.at("bspline_param_count").get<long>();
    r.param_ratio = j.at("param_ratio").get<double>();
    r.r2n2_median_seconds = j.at("r2n2_median_seconds").get<double>();
    r.bspline_median_seconds = j.at("bspline_median_seconds").get<double>();
    r.pre_mean_px = j.at("pre_mean_px").get<double>();
    r.r2n2_mean_px = j.at("r2n2_mean_px").get<double>();
    r.bspline_mean_px = j.at("bspline_mean_px").get<double>();
    r.net_config_digest = j.at("net_config_digest").get<std::string>();
    r.baseline_config_digest = j.at("baseline_config_digest").get<std::string>();
    for (const auto& jc : j.at("cases")) {
        CaseResult c;
        c.name = jc.at("name").get<std::string>();
        c.pre = tre_from_json(jc.at("pre"));
        c.r2n2 = tre_from_json(jc.at("r2n2"));
        c.bspline = tre_from_json(jc.at("bspline"));
        c.r2n2_seconds = jc.at("r2n2_seconds").get<double>();
        c.bspline_seconds = jc.at("bspline_seconds").get<double>();
        r.cases.push_back(std::move(c));
    }
    return r;
}

void save_report(const EvalReport& report, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw io_error("cannot open for writing: " + path.string());
    out << report.to_json() << "\n";
    if (!out) throw io_error("write failed: " + path.string());
}

EvalReport load_report(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open: " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return EvalReport::from_json(buf.str());
}

}  // namespace r2n2::evalkit
