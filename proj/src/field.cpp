#include "r2n2/field.hpp"

#include <algorithm>
#include <cmath>

#include "r2n2/errors.hpp"
#include "r2n2/kernels.hpp"

namespace r2n2 {

Grid2D make_grid(int height, int width) {
    if (height < 2 || width < 2)
        throw std::invalid_argument("make_grid: dimensions must be >= 2");
    Grid2D g;
    g.height = height;
    g.width = width;
    g.coords_x.resize(g.pixels());
    g.coords_y.resize(g.pixels());
    const double sx = 2.0 / (width - 1);
    const double sy = 2.0 / (height - 1);
    for (int y = 0; y < height; ++y) {
        const double cy = (y == height - 1) ? 1.0 : -1.0 + sy * y;
        for (int x = 0; x < width; ++x) {
            const double cx = (x == width - 1) ? 1.0 : -1.0 + sx * x;
            g.coords_x[(std::size_t)y * width + x] = cx;
            g.coords_y[(std::size_t)y * width + x] = cy;
        }
    }
    return g;
}

Image2D make_image(const Grid2D& grid, double fill) {
    Image2D img;
    img.grid = grid;
    img.values.assign(grid.pixels(), fill);
    return img;
}

DisplacementField make_field(const Grid2D& grid) {
    DisplacementField f;
    f.grid = grid;
    f.u.assign(grid.pixels(), 0.0);
    f.v.assign(grid.pixels(), 0.0);
    return f;
}

namespace {

struct Sample {
    int x0, y0;
    double fx, fy;
    bool clamped_x, clamped_y;
};

inline Sample locate(double px_norm, double py_norm, int h, int w) {
    Sample s;
    s.clamped_x = px_norm < -1.0 || px_norm > 1.0;
    s.clamped_y = py_norm < -1.0 || py_norm > 1.0;
    const double px = (std::clamp(px_norm, -1.0, 1.0) + 1.0) * 0.5 * (w - 1);
    const double py = (std::clamp(py_norm, -1.0, 1.0) + 1.0) * 0.5 * (h - 1);
    s.x0 = std::clamp((int)std::floor(px), 0, w - 2);
    s.y0 = std::clamp((int)std::floor(py), 0, h - 2);
    s.fx = px - s.x0;
    s.fy = py - s.y0;
    return s;
}

void warp_forward(const double* img, int h, int w, const double* cx, const double* cy,
                  const double* u, const double* v, double* out) {
    const std::size_t n = (std::size_t)h * w;
    for (std::size_t i = 0; i < n; ++i) {
        const Sample s = locate(cx[i] + u[i], cy[i] + v[i], h, w);
        const double* row0 = img + (std::size_t)s.y0 * w + s.x0;
        const double* row1 = row0 + w;
        out[i] = (1.0 - s.fy) * ((1.0 - s.fx) * row0[0] + s.fx * row0[1]) +
                 s.fy * ((1.0 - s.fx) * row1[0] + s.fx * row1[1]);
    }
}

// gimg/gu/gv may be null when that gradient is not needed.
void warp_backward(const double* img, int h, int w, const double* cx, const double* cy,
                   const double* u, const double* v, const double* gout,
                   double* gimg, double* gu, double* gv) {
    const std::size_t n = (std::size_t)h * w;
    const double dpx = 0.5 * (w - 1);
    const double dpy = 0.5 * (h - 1);
    for (std::size_t i = 0; i < n; ++i) {
        const double g = gout[i];
        if (g == 0.0) continue;
        const Sample s = locate(cx[i] + u[i], cy[i] + v[i], h, w);
        const std::size_t i00 = (std::size_t)s.y0 * w + s.x0;
        if (gimg) {
            gimg[i00] += g * (1.0 - s.fy) * (1.0 - s.fx);
            gimg[i00 + 1] += g * (1.0 - s.fy) * s.fx;
            gimg[i00 + w] += g * s.fy * (1.0 - s.fx);
            gimg[i00 + w + 1] += g * s.fy * s.fx;
        }
        if (gu && !s.clamped_x) {
            const double dx = (1.0 - s.fy) * (img[i00 + 1] - img[i00]) +
                              s.fy * (img[i00 + w + 1] - img[i00 + w]);
            gu[i] += g * dx * dpx;
        }
        if (gv && !s.clamped_y) {
            const double dy = (1.0 - s.fx) * (img[i00 + w] - img[i00]) +
                              s.fx * (img[i00 + w + 1] - img[i00 + 1]);
            gv[i] += g * dy * dpy;
        }
    }
}

}  // namespace

Image2D warp(const Image2D& image, const DisplacementField& field) {
    if (!image.grid.same_extent(field.grid))
        throw shape_error("warp: image and field grids differ");
    Image2D out = make_image(image.grid);
    warp_forward(image.values.data(), image.grid.height, image.grid.width,
                 image.grid.coords_x.data(), image.grid.coords_y.data(), field.u.data(),
                 field.v.data(), out.values.data());
    return out;
}

DisplacementField accumulate(const DisplacementField& prev, const DisplacementField& local) {
    if (!prev.grid.same_extent(local.grid))
        throw shape_error("accumulate: field grids differ");
    DisplacementField out = prev;
    kern::ops().add(prev.u.data(), local.u.data(), out.u.data(), out.u.size());
    kern::ops().add(prev.v.data(), local.v.data(), out.v.data(), out.v.size());
    return out;
}

void sample_field(const DisplacementField& f, double x, double y, double& du, double& dv) {
    const int h = f.grid.height, w = f.grid.width;
    const Sample s = locate(x, y, h, w);
    const std::size_t i00 = (std::size_t)s.y0 * w + s.x0;
    auto lerp = [&](const std::vector<double>& p) {
        return (1.0 - s.fy) * ((1.0 - s.fx) * p[i00] + s.fx * p[i00 + 1]) +
               s.fy * ((1.0 - s.fx) * p[i00 + w] + s.fx * p[i00 + w + 1]);
    };
    du = lerp(f.u);
    dv = lerp(f.v);
}

Tensor image_to_tensor(const Image2D& img) {
    return Tensor({1, img.grid.height, img.grid.width},
                  std::vector<double>(img.values.begin(), img.values.end()));
}

Tensor field_to_tensor(const DisplacementField& f) {
    std::vector<double> data;
    data.reserve(2 * f.u.size());
    data.insert(data.end(), f.u.begin(), f.u.end());
    data.insert(data.end(), f.v.begin(), f.v.end());
    return Tensor({2, f.grid.height, f.grid.width}, std::move(data));
}

Image2D tensor_to_image(const Grid2D& grid, const Tensor& t) {
    if (t.size() != grid.pixels()) throw shape_error("tensor_to_image: size mismatch");
    Image2D img;
    img.grid = grid;
    img.values.assign(t.data(), t.data() + t.size());
    return img;
}

DisplacementField tensor_to_field(const Grid2D& grid, const Tensor& t) {
    if (t.ndim() != 3 || t.dim(0) != 2 || t.size() != 2 * grid.pixels())
        throw shape_error("tensor_to_field: expected [2,H,W] tensor matching grid");
    DisplacementField f;
    f.grid = grid;
    f.u.assign(t.data(), t.data() + grid.pixels());
    f.v.assign(t.data() + grid.pixels(), t.data() + 2 * grid.pixels());
    return f;
}

ad::NodeId warp_op(ad::Tape& tape, ad::NodeId image, ad::NodeId field, const Grid2D& grid) {
    const Tensor& vi = tape.val(image);
    const Tensor& vf = tape.val(field);
    const int h = grid.height, w = grid.width;
    if (vi.ndim() != 3 || vi.dim(0) != 1 || vi.dim(1) != h || vi.dim(2) != w)
        throw shape_error("warp_op: image node must be [1,H,W] on the grid");
    if (vf.ndim() != 3 || vf.dim(0) != 2 || vf.dim(1) != h || vf.dim(2) != w)
        throw shape_error("warp_op: field node must be [2,H,W] on the grid");
    const std::size_t n = grid.pixels();
    Tensor out({1, h, w});
    // The grid outlives every tape that references it (nets and objectives own
    // their grids); capture by pointer to its coordinate arrays.
    const double* cx = grid.coords_x.data();
    const double* cy = grid.coords_y.data();
    warp_forward(vi.data(), h, w, cx, cy, vf.data(), vf.data() + n, out.data());
    return tape.custom(std::move(out), {image, field},
                       [image, field, cx, cy, h, w, n](ad::Tape& t, ad::NodeId self) {
        const Tensor& g = t.grad(self);
        const Tensor& vi = t.val(image);
        const Tensor& vf = t.val(field);
        double* gimg = t.needs_grad(image) ? t.grad_buf(image).data() : nullptr;
        double* gf = t.needs_grad(field) ? t.grad_buf(field).data() : nullptr;
        if (!gimg && !gf) return;
        warp_backward(vi.data(), h, w, cx, cy, vf.data(), vf.data() + n, g.data(), gimg,
                      gf ? gf : nullptr, gf ? gf + n : nullptr);
    });
}

}  // namespace r2n2
