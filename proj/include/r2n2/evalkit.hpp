#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "r2n2/baseline.hpp"
#include "r2n2/net.hpp"
#include "r2n2/synth.hpp"

namespace r2n2::evalkit {

struct TreResult {
    double mean_norm = 0.0, max_norm = 0.0;
    double mean_px = 0.0, max_px = 0.0;
};

// Landmark error after applying `field` to the fixed-image landmarks:
// error_i = | lm_fixed[i] + field(lm_fixed[i]) - lm_moving[i] |.
// `rms` switches the mean from mean Euclidean distance to root-mean-square.
TreResult tre(const std::vector<std::array<double, 2>>& lm_fixed,
              const std::vector<std::array<double, 2>>& lm_moving,
              const DisplacementField& field, bool rms = false);

struct CaseResult {
    std::string name;
    TreResult pre;
    TreResult r2n2;
    TreResult bspline;
    double r2n2_seconds = 0.0;
    double bspline_seconds = 0.0;
};

struct EvalReport {
    std::vector<CaseResult> cases;
    int steps = 0;
    long sequence_param_count = 0;
    long bspline_param_count = 0;
    double param_ratio = 0.0;  // sequence / bspline
    double r2n2_median_seconds = 0.0;
    double bspline_median_seconds = 0.0;
    double pre_mean_px = 0.0, r2n2_mean_px = 0.0, bspline_mean_px = 0.0;
    std::string net_config_digest;
    std::string baseline_config_digest;
    bool rms = false;

    std::string to_json() const;
    static EvalReport from_json(const std::string& text);
};

void save_report(const EvalReport& report, const std::filesystem::path& path);
EvalReport load_report(const std::filesystem::path& path);

struct CompareOptions {
    int steps = 25;
    bool rms = false;
    std::vector<int> snapshot_steps{2, 4, 8, 25};
    std::optional<std::filesystem::path> plot_dir;  // no plots when unset
};

// Runs both methods on every case, collects TRE/time/parameter counts and,
// when plot_dir is set, emits TRE bars plus displacement snapshots for the
// first case.
EvalReport compare_methods(const std::vector<data::SyntheticCase>& cases,
                           const net::R2N2Net& net, const baseline::BaselineConfig& bs_cfg,
                           const CompareOptions& options);

std::string config_digest(const std::string& serialized);

}  // namespace r2n2::evalkit
