#pragma once

#include "r2n2/field.hpp"
#include "r2n2/tape.hpp"
#include "r2n2/tensor.hpp"

namespace r2n2 {

// Free-form deformation on a regular control lattice with a tensor-product
// cubic B-spline kernel. The configured kernel size k (in pixels) fixes the
// control spacing to (k+1)/4 pixels. The stored lattice covers the image
// domain; evaluation taps outside it are clamped to the border coefficient
// (one virtual phantom ring tied to the edge).
struct BSplineModel {
    int rows = 0, cols = 0;   // control lattice
    double spacing = 0.0;     // pixels between control points
    int kernel_size = 0;      // pixels
    Tensor coeffs;            // [2, rows, cols], displacements in normalized units

    std::size_t lattice_points() const { return (std::size_t)rows * cols; }
};

BSplineModel make_bspline_model(int height, int width, int kernel_size_px);

// Dense field from control coefficients; linear in the coefficients.
DisplacementField bspline_field(const BSplineModel& m, const Grid2D& grid);

// Tape op over a [2, rows, cols] coefficient node.
ad::NodeId bspline_field_op(ad::Tape& tape, ad::NodeId coeffs, const BSplineModel& meta,
                            const Grid2D& grid);

// 2 scalars per lattice point.
long count_transform_params(const BSplineModel& m);

// Uniform cubic B-spline kernel, |t| in spacing units; support |t| < 2.
double cubic_bspline_kernel(double t);

}  // namespace r2n2
