#pragma once

#include <vector>

#include "r2n2/field.hpp"
#include "r2n2/tape.hpp"

namespace r2n2 {

inline constexpr double kTvEps = 1e-8;

struct ObjectiveConfig {
    double lambda = 0.1;
    int sequence_length = 25;
};

// Mean over pixels of (a - b)^2.
double mse_loss(const Image2D& a, const Image2D& b);

// Isotropic total variation: mean over interior pixels of
// sqrt(|dx u|^2 + |dx v|^2 + |dy u|^2 + |dy v|^2 + eps), forward differences
// per pixel step. eps keeps the objective differentiable at flat regions.
double tv_loss(const DisplacementField& f, double eps = kTvEps);

// Eq-style single-pair objective: mse(F, M o f) + lambda * tv(f).
double classic_objective(const Image2D& F, const Image2D& M, const DisplacementField& field,
                         double lambda);

// Sequence objective: (1/T) sum_t mse(F, M o f_t) + lambda * tv(f_T).
double sequence_objective(const Image2D& F, const Image2D& M,
                          const std::vector<DisplacementField>& fields, double lambda);

// Tape versions (same arithmetic, differentiable).
ad::NodeId mse_op(ad::Tape& tape, ad::NodeId a, ad::NodeId b);
ad::NodeId tv_op(ad::Tape& tape, ad::NodeId field, double eps = kTvEps);

}  // namespace r2n2
