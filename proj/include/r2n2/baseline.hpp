#pragma once

#include <vector>

#include "r2n2/bspline.hpp"
#include "r2n2/field.hpp"

namespace r2n2::baseline {

struct BaselineConfig {
    std::vector<int> resolutions{64, 128, 256};
    std::vector<int> kernel_sizes{7, 21, 57};  // pixels, per level
    int iterations_per_level = 250;
    double learning_rate = 0.001;
    double lambda = 0.01;
    bool amsgrad = true;

    void validate() const;
    // Desk-scale variant used against 64^2 inputs.
    static BaselineConfig scaled();
};

struct BaselineDiagnostics {
    std::vector<std::vector<double>> level_losses;  // objective before each update
    long parameter_count = 0;                       // finest-level lattice, 2 per point
    double final_objective = 0.0;
    double seconds = 0.0;
};

// Coarse-to-fine B-spline registration: per level, downsample both images,
// optimize the control coefficients with Adam/AMSGrad on the single-pair
// objective, then resample the coefficients as the next level's start.
// Returns the finest-level dense field.
std::pair<DisplacementField, BaselineDiagnostics> register_bspline(const Image2D& fixed,
                                                                   const Image2D& moving,
                                                                   const BaselineConfig& cfg);

// Area-average downsampling by an integer factor.
Image2D downsample(const Image2D& img, int factor);

}  // namespace r2n2::baseline
