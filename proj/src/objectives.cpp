#include "r2n2/objectives.hpp"

#include <cmath>

#include "r2n2/errors.hpp"

namespace r2n2 {
namespace {

double mse_core(const double* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return acc / (double)n;
}

double tv_core(const double* u, const double* v, int h, int w, double eps) {
    double acc = 0.0;
    for (int y = 0; y + 1 < h; ++y) {
        for (int x = 0; x + 1 < w; ++x) {
            const std::size_t i = (std::size_t)y * w + x;
            const double dux = u[i + 1] - u[i];
            const double duy = u[i + w] - u[i];
            const double dvx = v[i + 1] - v[i];
            const double dvy = v[i + w] - v[i];
            acc += std::sqrt(dux * dux + duy * duy + dvx * dvx + dvy * dvy + eps);
        }
    }
    return acc / ((double)(h - 1) * (double)(w - 1));
}

void tv_backward(const double* u, const double* v, int h, int w, double eps, double g,
                 double* gu, double* gv) {
    const double scale = g / ((double)(h - 1) * (double)(w - 1));
    for (int y = 0; y + 1 < h; ++y) {
        for (int x = 0; x + 1 < w; ++x) {
            const std::size_t i = (std::size_t)y * w + x;
            const double dux = u[i + 1] - u[i];
            const double duy = u[i + w] - u[i];
            const double dvx = v[i + 1] - v[i];
            const double dvy = v[i + w] - v[i];
            const double r = std::sqrt(dux * dux + duy * duy + dvx * dvx + dvy * dvy + eps);
            const double coef = scale / r;
            gu[i + 1] += coef * dux;
            gu[i + w] += coef * duy;
            gu[i] -= coef * (dux + duy);
            gv[i + 1] += coef * dvx;
            gv[i + w] += coef * dvy;
            gv[i] -= coef * (dvx + dvy);
        }
    }
}

}  // namespace

double mse_loss(const Image2D& a, const Image2D& b) {
    if (!a.grid.same_extent(b.grid)) throw shape_error("mse_loss: grid mismatch");
    return mse_core(a.values.data(), b.values.data(), a.grid.pixels());
}

double tv_loss(const DisplacementField& f, double eps) {
    return tv_core(f.u.data(), f.v.data(), f.grid.height, f.grid.width, eps);
}

double classic_objective(const Image2D& F, const Image2D& M, const DisplacementField& field,
                         double lambda) {
    if (!F.grid.same_extent(M.grid) || !F.grid.same_extent(field.grid))
        throw shape_error("classic_objective: grid mismatch");
    return mse_loss(F, warp(M, field)) + lambda * tv_loss(field);
}

double sequence_objective(const Image2D& F, const Image2D& M,
                          const std::vector<DisplacementField>& fields, double lambda) {
    if (fields.empty()) throw std::invalid_argument("sequence_objective: empty field list");
    if (!F.grid.same_extent(M.grid)) throw shape_error("sequence_objective: grid mismatch");
    double acc = 0.0;
    for (const DisplacementField& f : fields) {
        if (!f.grid.same_extent(F.grid)) throw shape_error("sequence_objective: grid mismatch");
        acc += mse_loss(F, warp(M, f));
    }
    return acc / (double)fields.size() + lambda * tv_loss(fields.back());
}

ad::NodeId mse_op(ad::Tape& tape, ad::NodeId a, ad::NodeId b) {
    const Tensor& va = tape.val(a);
    const Tensor& vb = tape.val(b);
    if (!va.same_shape(vb)) throw shape_error("mse_op: shape mismatch");
    const std::size_t n = va.size();
    Tensor out = Tensor::scalar(mse_core(va.data(), vb.data(), n));
    return tape.custom(std::move(out), {a, b}, [a, b, n](ad::Tape& t, ad::NodeId self) {
        const double g = t.grad(self)[0];
        const Tensor& va = t.val(a);
        const Tensor& vb = t.val(b);
        const double coef = 2.0 * g / (double)n;
        const bool na = t.needs_grad(a), nb = t.needs_grad(b);
        double* ga = na ? t.grad_buf(a).data() : nullptr;
        double* gb = nb ? t.grad_buf(b).data() : nullptr;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = coef * (va[i] - vb[i]);
            if (ga) ga[i] += d;
            if (gb) gb[i] -= d;
        }
    });
}

ad::NodeId tv_op(ad::Tape& tape, ad::NodeId field, double eps) {
    const Tensor& vf = tape.val(field);
    if (vf.ndim() != 3 || vf.dim(0) != 2) throw shape_error("tv_op: expects a [2,H,W] node");
    const int h = vf.dim(1), w = vf.dim(2);
    const std::size_t n = (std::size_t)h * w;
    Tensor out = Tensor::scalar(tv_core(vf.data(), vf.data() + n, h, w, eps));
    return tape.custom(std::move(out), {field}, [field, h, w, n, eps](ad::Tape& t, ad::NodeId self) {
        if (!t.needs_grad(field)) return;
        const double g = t.grad(self)[0];
        const Tensor& vf = t.val(field);
        Tensor& gf = t.grad_buf(field);
        tv_backward(vf.data(), vf.data() + n, h, w, eps, g, gf.data(), gf.data() + n);
    });
}

}  // namespace r2n2
