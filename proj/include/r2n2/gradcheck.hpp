#pragma once

#include <functional>

#include "r2n2/tape.hpp"
#include "r2n2/tensor.hpp"

namespace r2n2::ad {

// Builds a scalar node from a single grad-requiring input leaf.
using OpBuilder = std::function<NodeId(Tape&, NodeId input)>;

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    double analytic_at_worst = 0.0;
    double numeric_at_worst = 0.0;
};

// Compares the tape gradient of `op` against central finite differences and
// returns the worst-case relative error over all input elements. Isolated
// non-differentiable points show up as large entries in the report; they are
// reported, not thrown.
GradCheckReport finite_diff_gradient_check(const OpBuilder& op, const Tensor& input, double eps);

}  // namespace r2n2::ad
