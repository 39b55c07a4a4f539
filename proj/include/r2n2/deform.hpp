#pragma once

#include <array>
#include <filesystem>
#include <vector>

#include "r2n2/field.hpp"
#include "r2n2/tape.hpp"

namespace r2n2 {

// One time step of the sequence model: an anisotropic rotated Gaussian bump
// of displacement. sigma_x/sigma_y act as the variances of the rotated
// quadratic form; alpha is the rotation; weight (v_x, v_y) scales the shared
// envelope per displacement component.
struct LocalDeformParams {
    double x = 0.0, y = 0.0;           // center, normalized coords
    double sigma_x = 0.1, sigma_y = 0.1;
    double alpha = 0.0;                // [0, pi]
    double v_x = 0.0, v_y = 0.0;       // [-1, 1]

    void validate() const;             // throws std::invalid_argument
};

struct Mat2 {
    double m00, m01, m10, m11;
};

// Sigma(Gamma) = R(alpha) diag(sigma_x, sigma_y) R(alpha)^T
Mat2 covariance(double sigma_x, double sigma_y, double alpha);

// l(x) = v * exp(-1/2 (x - center)^T Sigma^{-1} (x - center)), both
// components sharing the scalar envelope.
DisplacementField gaussian_local_field(const LocalDeformParams& p, const Grid2D& grid);

// Running sum of gaussian_local_field over the list; empty list -> zero field.
DisplacementField render_sequence(const std::vector<LocalDeformParams>& params,
                                  const Grid2D& grid);

// Scalars needed to describe a transformation: 7 per sequence step.
long count_transform_params(const std::vector<LocalDeformParams>& params);

// Tape op. `params7` is a [7] node ordered (x, y, sigma_x, sigma_y, alpha,
// v_x, v_y); the result is a [2,H,W] field node differentiable in all seven.
ad::NodeId gaussian_field_op(ad::Tape& tape, ad::NodeId params7, const Grid2D& grid);

// Plain-text table, one row per step: x y sigma_x sigma_y alpha v_x v_y.
// This file is the compact representation of a sequence transformation.
void save_params_table(const std::vector<LocalDeformParams>& params,
                       const std::filesystem::path& path);
std::vector<LocalDeformParams> load_params_table(const std::filesystem::path& path);

// --- non-parametric (dense) model -------------------------------------------
struct DenseModel {
    DisplacementField theta;  // per-pixel parameters, identical layout to the field
};

DisplacementField dense_field(const DenseModel& m);
DenseModel dense_model_from_field(const DisplacementField& f);

}  // namespace r2n2
