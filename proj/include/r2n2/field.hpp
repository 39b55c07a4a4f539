#pragma once

#include <vector>

#include "r2n2/tape.hpp"
#include "r2n2/tensor.hpp"

namespace r2n2 {

// Pixel grid over the normalized domain [-1,1]^2. coords_x/coords_y hold the
// per-pixel coordinates row-major; spacing is uniform with the endpoints
// exactly on -1 and +1.
struct Grid2D {
    int height = 0;
    int width = 0;
    std::vector<double> coords_x;  // H*W
    std::vector<double> coords_y;  // H*W

    std::size_t pixels() const { return (std::size_t)height * width; }
    bool same_extent(const Grid2D& o) const { return height == o.height && width == o.width; }
};

Grid2D make_grid(int height, int width);

// Single-channel raster; intensities are dimensionless, nominally in [0,1].
struct Image2D {
    Grid2D grid;
    std::vector<double> values;  // H*W
};

Image2D make_image(const Grid2D& grid, double fill = 0.0);

// Dense displacement field in normalized-coordinate units.
struct DisplacementField {
    Grid2D grid;
    std::vector<double> u;  // x displacement, H*W
    std::vector<double> v;  // y displacement, H*W
};

DisplacementField make_field(const Grid2D& grid);

// Bilinear resample of `image` at x + f(x); sample positions are clamped to
// the domain border. Differentiable in both image values and field values.
Image2D warp(const Image2D& image, const DisplacementField& field);

// Pointwise sum of two fields on the same grid.
DisplacementField accumulate(const DisplacementField& prev, const DisplacementField& local);

// Bilinear sample of the field at a normalized position (clamped).
void sample_field(const DisplacementField& f, double x, double y, double& du, double& dv);

// --- tape integration -------------------------------------------------------
// Images travel the tape as [1,H,W] nodes, fields as [2,H,W] (u plane, v plane).

Tensor image_to_tensor(const Image2D& img);
Tensor field_to_tensor(const DisplacementField& f);
Image2D tensor_to_image(const Grid2D& grid, const Tensor& t);
DisplacementField tensor_to_field(const Grid2D& grid, const Tensor& t);

ad::NodeId warp_op(ad::Tape& tape, ad::NodeId image, ad::NodeId field, const Grid2D& grid);

}  // namespace r2n2
