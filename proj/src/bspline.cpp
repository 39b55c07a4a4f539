#include "r2n2/bspline.hpp"

#include <algorithm>
#include <cmath>

#include "r2n2/errors.hpp"

namespace r2n2 {
namespace {

// Interpolation weights over control indices i-1..i+2 at fractional offset u.
inline void basis(double u, double w[4]) {
    const double u2 = u * u, u3 = u2 * u;
    w[0] = (1.0 - 3.0 * u + 3.0 * u2 - u3) / 6.0;  // (1-u)^3 / 6
    w[1] = (3.0 * u3 - 6.0 * u2 + 4.0) / 6.0;
    w[2] = (-3.0 * u3 + 3.0 * u2 + 3.0 * u + 1.0) / 6.0;
    w[3] = u3 / 6.0;
}

struct Taps {
    int idx[4];
    double w[4];
};

inline Taps taps_for(double pixel, double spacing, int lattice) {
    const double t = pixel / spacing;
    int i = (int)std::floor(t);
    Taps taps;
    basis(t - i, taps.w);
    for (int k = 0; k < 4; ++k) taps.idx[k] = std::clamp(i - 1 + k, 0, lattice - 1);
    return taps;
}

}  // namespace

double cubic_bspline_kernel(double t) {
    const double a = std::abs(t);
    if (a < 1.0) return 2.0 / 3.0 - a * a + 0.5 * a * a * a;
    if (a < 2.0) {
        const double b = 2.0 - a;
        return b * b * b / 6.0;
    }
    return 0.0;
}

BSplineModel make_bspline_model(int height, int width, int kernel_size_px) {
    if (height < 2 || width < 2)
        throw std::invalid_argument("make_bspline_model: image extent must be >= 2");
    if (kernel_size_px < 3)
        throw std::invalid_argument("make_bspline_model: kernel size must be >= 3 px");
    BSplineModel m;
    m.kernel_size = kernel_size_px;
    m.spacing = (kernel_size_px + 1) / 4.0;
    m.rows = (int)std::ceil((height - 1) / m.spacing) + 1;
    m.cols = (int)std::ceil((width - 1) / m.spacing) + 1;
    if (m.rows < 4 || m.cols < 4)
        throw std::invalid_argument("make_bspline_model: control grid smaller than 4x4");
    m.coeffs = Tensor({2, m.rows, m.cols});
    return m;
}

DisplacementField bspline_field(const BSplineModel& m, const Grid2D& grid) {
    if (m.rows < 4 || m.cols < 4)
        throw std::invalid_argument("bspline_field: control grid smaller than 4x4");
    DisplacementField f = make_field(grid);
    const std::size_t n = grid.pixels();
    const double* cu = m.coeffs.data();
    const double* cv = m.coeffs.data() + m.lattice_points();
    for (int y = 0; y < grid.height; ++y) {
        const Taps ty = taps_for((double)y, m.spacing, m.rows);
        for (int x = 0; x < grid.width; ++x) {
            const Taps tx = taps_for((double)x, m.spacing, m.cols);
            double au = 0.0, av = 0.0;
            for (int ky = 0; ky < 4; ++ky) {
                const std::size_t row = (std::size_t)ty.idx[ky] * m.cols;
                double ru = 0.0, rv = 0.0;
                for (int kx = 0; kx < 4; ++kx) {
                    ru += tx.w[kx] * cu[row + tx.idx[kx]];
                    rv += tx.w[kx] * cv[row + tx.idx[kx]];
                }
                au += ty.w[ky] * ru;
                av += ty.w[ky] * rv;
            }
            const std::size_t i = (std::size_t)y * grid.width + x;
            f.u[i] = au;
            f.v[i] = av;
        }
    }
    (void)n;
    return f;
}

ad::NodeId bspline_field_op(ad::Tape& tape, ad::NodeId coeffs, const BSplineModel& meta,
                            const Grid2D& grid) {
    const Tensor& vc = tape.val(coeffs);
    if (vc.ndim() != 3 || vc.dim(0) != 2 || vc.dim(1) != meta.rows || vc.dim(2) != meta.cols)
        throw shape_error("bspline_field_op: coefficient node shape mismatch");
    BSplineModel m = meta;
    m.coeffs = vc;
    Tensor out({2, grid.height, grid.width});
    {
        DisplacementField f = bspline_field(m, grid);
        std::copy(f.u.begin(), f.u.end(), out.data());
        std::copy(f.v.begin(), f.v.end(), out.data() + grid.pixels());
    }
    const int rows = meta.rows, cols = meta.cols;
    const double spacing = meta.spacing;
    const int h = grid.height, w = grid.width;
    return tape.custom(std::move(out), {coeffs},
                       [coeffs, rows, cols, spacing, h, w](ad::Tape& t, ad::NodeId self) {
        if (!t.needs_grad(coeffs)) return;
        const Tensor& g = t.grad(self);
        Tensor& gc = t.grad_buf(coeffs);
        const std::size_t n = (std::size_t)h * w;
        const std::size_t lattice = (std::size_t)rows * cols;
        const double* gu = g.data();
        const double* gv = g.data() + n;
        double* gcu = gc.data();
        double* gcv = gc.data() + lattice;
        for (int y = 0; y < h; ++y) {
            const Taps ty = taps_for((double)y, spacing, rows);
            for (int x = 0; x < w; ++x) {
                const Taps tx = taps_for((double)x, spacing, cols);
                const std::size_t i = (std::size_t)y * w + x;
                for (int ky = 0; ky < 4; ++ky) {
                    const std::size_t row = (std::size_t)ty.idx[ky] * cols;
                    for (int kx = 0; kx < 4; ++kx) {
                        const double wgt = ty.w[ky] * tx.w[kx];
                        gcu[row + tx.idx[kx]] += wgt * gu[i];
                        gcv[row + tx.idx[kx]] += wgt * gv[i];
                    }
                }
            }
        }
    });
}

long count_transform_params(const BSplineModel& m) { return 2L * m.rows * m.cols; }

}  // namespace r2n2
