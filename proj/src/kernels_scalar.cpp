#include "r2n2/kernels.hpp"

#include <algorithm>
#include <cmath>

// Reference implementations. Kept deliberately plain: these define the
// semantics the vectorized variants are tested against.

namespace r2n2::kern {
namespace {

void s_add(const double* x, const double* y, double* z, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) z[i] = x[i] + y[i];
}

void s_sub(const double* x, const double* y, double* z, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) z[i] = x[i] - y[i];
}

void s_mul(const double* x, const double* y, double* z, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) z[i] = x[i] * y[i];
}

void s_mul_acc(const double* x, const double* y, double* z, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) z[i] += x[i] * y[i];
}

void s_axpy(double a, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void s_affine(const double* x, double a, double b, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = a * x[i] + b;
}

double s_dot(const double* x, const double* y, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

double s_sum(const double* x, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i];
    return acc;
}

double s_sumsq(const double* x, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i] * x[i];
    return acc;
}

void s_conv2d_fwd(const double* x, int ic, int ih, int iw,
                  const double* w, int oc, int kh, int kw,
                  const double* bias, int stride, int pad,
                  double* y, int oh, int ow) {
    for (int o = 0; o < oc; ++o) {
        const double b = bias ? bias[o] : 0.0;
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                double acc = b;
                for (int c = 0; c < ic; ++c) {
                    const double* xp = x + (std::size_t)c * ih * iw;
                    const double* wp = w + (((std::size_t)o * ic + c) * kh) * kw;
                    for (int ky = 0; ky < kh; ++ky) {
                        const int iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= ih) continue;
                        for (int kx = 0; kx < kw; ++kx) {
                            const int ix = ox * stride - pad + kx;
                            if (ix < 0 || ix >= iw) continue;
                            acc += xp[(std::size_t)iy * iw + ix] * wp[(std::size_t)ky * kw + kx];
                        }
                    }
                }
                y[((std::size_t)o * oh + oy) * ow + ox] = acc;
            }
        }
    }
}

void s_conv2d_bwd_input(const double* gy, int oc, int oh, int ow,
                        const double* w, int ic, int kh, int kw,
                        int stride, int pad,
                        double* gx, int ih, int iw) {
    for (int o = 0; o < oc; ++o) {
        const double* gyp = gy + (std::size_t)o * oh * ow;
        for (int c = 0; c < ic; ++c) {
            double* gxp = gx + (std::size_t)c * ih * iw;
            const double* wp = w + (((std::size_t)o * ic + c) * kh) * kw;
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    const double g = gyp[(std::size_t)oy * ow + ox];
                    for (int ky = 0; ky < kh; ++ky) {
                        const int iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= ih) continue;
                        for (int kx = 0; kx < kw; ++kx) {
                            const int ix = ox * stride - pad + kx;
                            if (ix < 0 || ix >= iw) continue;
                            gxp[(std::size_t)iy * iw + ix] += g * wp[(std::size_t)ky * kw + kx];
                        }
                    }
                }
            }
        }
    }
}

void s_conv2d_bwd_weight(const double* x, int ic, int ih, int iw,
                         const double* gy, int oc, int oh, int ow,
                         int kh, int kw, int stride, int pad,
                         double* gw, double* gb) {
    for (int o = 0; o < oc; ++o) {
        const double* gyp = gy + (std::size_t)o * oh * ow;
        if (gb) {
            double acc = 0.0;
            for (std::size_t i = 0; i < (std::size_t)oh * ow; ++i) acc += gyp[i];
            gb[o] += acc;
        }
        for (int c = 0; c < ic; ++c) {
            const double* xp = x + (std::size_t)c * ih * iw;
            double* gwp = gw + (((std::size_t)o * ic + c) * kh) * kw;
            for (int ky = 0; ky < kh; ++ky) {
                for (int kx = 0; kx < kw; ++kx) {
                    double acc = 0.0;
                    for (int oy = 0; oy < oh; ++oy) {
                        const int iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= ih) continue;
                        for (int ox = 0; ox < ow; ++ox) {
                            const int ix = ox * stride - pad + kx;
                            if (ix < 0 || ix >= iw) continue;
                            acc += xp[(std::size_t)iy * iw + ix] * gyp[(std::size_t)oy * ow + ox];
                        }
                    }
                    gwp[(std::size_t)ky * kw + kx] += acc;
                }
            }
        }
    }
}

void s_adam_step(double* p, const double* g, double* m, double* v,
                 double* vmax, std::size_t n, double lr, double beta1,
                 double beta2, double eps, double bc1, double bc2,
                 bool amsgrad) {
    const double step = lr / bc1;
    const double inv_sqrt_bc2 = 1.0 / std::sqrt(bc2);
    for (std::size_t i = 0; i < n; ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
        double vi = v[i];
        if (amsgrad) {
            vmax[i] = std::max(vmax[i], v[i]);
            vi = vmax[i];
        }
        p[i] -= step * m[i] / (std::sqrt(vi) * inv_sqrt_bc2 + eps);
    }
}

}  // namespace

const Ops& scalar_ops() {
    static const Ops table{
        s_add,    s_sub,   s_mul,   s_mul_acc,      s_axpy,
        s_affine, s_dot,   s_sum,   s_sumsq,        s_conv2d_fwd,
        s_conv2d_bwd_input, s_conv2d_bwd_weight, s_adam_step,
    };
    return table;
}

}  // namespace r2n2::kern
