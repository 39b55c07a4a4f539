#pragma once

#include <filesystem>

#include "r2n2/field.hpp"

namespace r2n2::evalkit {

struct EvalReport;

// |f| as an 8-bit PGM heatmap, normalized by the field's peak magnitude.
void save_magnitude_heatmap(const DisplacementField& f, const std::filesystem::path& path);

// Arrow plot of the field, subsampled every `stride` pixels.
void save_quiver_svg(const DisplacementField& f, const std::filesystem::path& path,
                     int stride = 4);

// Per-case pre / R2N2 / B-spline TRE bars (pixels).
void save_tre_bars_svg(const EvalReport& report, const std::filesystem::path& path);

}  // namespace r2n2::evalkit
