// AVX2+FMA variants. This translation unit is compiled with -mavx2 -mfma;
// nothing here runs unless the dispatcher verified CPU support first.
// Stride-1 convolutions are expressed as contiguous row axpy/dot spans so
// the same vector primitives carry all three conv kernels. Strided
// convolutions fall back to the scalar reference.

#include "r2n2/kernels.hpp"

#if defined(__x86_64__) && defined(__AVX2__) && defined(__FMA__)

#include <immintrin.h>

#include <algorithm>
#include <cmath>

namespace r2n2::kern {
namespace {

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    return _mm_cvtsd_f64(_mm_add_sd(lo, _mm_unpackhi_pd(lo, lo)));
}

void a_add(const double* x, const double* y, double* z, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(z + i, _mm256_add_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) z[i] = x[i] + y[i];
}

void a_sub(const double* x, const double* y, double* z, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(z + i, _mm256_sub_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) z[i] = x[i] - y[i];
}

void a_mul(const double* x, const double* y, double* z, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(z + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) z[i] = x[i] * y[i];
}

void a_mul_acc(const double* x, const double* y, double* z, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d vz = _mm256_loadu_pd(z + i);
        vz = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), vz);
        _mm256_storeu_pd(z + i, vz);
    }
    for (; i < n; ++i) z[i] += x[i] * y[i];
}

void a_axpy(double a, const double* x, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d vy = _mm256_loadu_pd(y + i);
        vy = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), vy);
        _mm256_storeu_pd(y + i, vy);
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

void a_affine(const double* x, double a, double b, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(a);
    const __m256d vb = _mm256_set1_pd(b);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), vb));
    for (; i < n; ++i) y[i] = a * x[i] + b;
}

double a_dot(const double* x, const double* y, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
    }
    for (; i + 4 <= n; i += 4)
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    double acc = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

double a_sum(const double* x, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(x + i));
        acc1 = _mm256_add_pd(acc1, _mm256_loadu_pd(x + i + 4));
    }
    for (; i + 4 <= n; i += 4) acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(x + i));
    double acc = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) acc += x[i];
    return acc;
}

double a_sumsq(const double* x, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256d v0 = _mm256_loadu_pd(x + i);
        const __m256d v1 = _mm256_loadu_pd(x + i + 4);
        acc0 = _mm256_fmadd_pd(v0, v0, acc0);
        acc1 = _mm256_fmadd_pd(v1, v1, acc1);
    }
    for (; i + 4 <= n; i += 4) {
        const __m256d v = _mm256_loadu_pd(x + i);
        acc0 = _mm256_fmadd_pd(v, v, acc0);
    }
    double acc = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) acc += x[i] * x[i];
    return acc;
}

// Valid ox span for a stride-1 tap: ix = ox - pad + kx must lie in [0, iw).
inline void tap_span(int kx, int pad, int iw, int ow, int& lo, int& len) {
    lo = std::max(0, pad - kx);
    const int hi = std::min(ow - 1, iw - 1 + pad - kx);
    len = hi - lo + 1;
}

void a_conv2d_fwd(const double* x, int ic, int ih, int iw,
                  const double* w, int oc, int kh, int kw,
                  const double* bias, int stride, int pad,
                  double* y, int oh, int ow) {
    if (stride != 1) {
        scalar_ops().conv2d_fwd(x, ic, ih, iw, w, oc, kh, kw, bias, stride, pad, y, oh, ow);
        return;
    }
    for (int o = 0; o < oc; ++o) {
        for (int oy = 0; oy < oh; ++oy) {
            double* yrow = y + ((std::size_t)o * oh + oy) * ow;
            const double b = bias ? bias[o] : 0.0;
            for (int i = 0; i < ow; ++i) yrow[i] = b;
            for (int c = 0; c < ic; ++c) {
                const double* xp = x + (std::size_t)c * ih * iw;
                const double* wp = w + (((std::size_t)o * ic + c) * kh) * kw;
                for (int ky = 0; ky < kh; ++ky) {
                    const int iy = oy - pad + ky;
                    if (iy < 0 || iy >= ih) continue;
                    const double* xrow = xp + (std::size_t)iy * iw;
                    for (int kx = 0; kx < kw; ++kx) {
                        int lo, len;
                        tap_span(kx, pad, iw, ow, lo, len);
                        if (len <= 0) continue;
                        a_axpy(wp[(std::size_t)ky * kw + kx], xrow + lo - pad + kx, yrow + lo,
                               (std::size_t)len);
                    }
                }
            }
        }
    }
}

void a_conv2d_bwd_input(const double* gy, int oc, int oh, int ow,
                        const double* w, int ic, int kh, int kw,
                        int stride, int pad,
                        double* gx, int ih, int iw) {
    if (stride != 1) {
        scalar_ops().conv2d_bwd_input(gy, oc, oh, ow, w, ic, kh, kw, stride, pad, gx, ih, iw);
        return;
    }
    for (int o = 0; o < oc; ++o) {
        for (int oy = 0; oy < oh; ++oy) {
            const double* gyrow = gy + ((std::size_t)o * oh + oy) * ow;
            for (int c = 0; c < ic; ++c) {
                double* gxp = gx + (std::size_t)c * ih * iw;
                const double* wp = w + (((std::size_t)o * ic + c) * kh) * kw;
                for (int ky = 0; ky < kh; ++ky) {
                    const int iy = oy - pad + ky;
                    if (iy < 0 || iy >= ih) continue;
                    double* gxrow = gxp + (std::size_t)iy * iw;
                    for (int kx = 0; kx < kw; ++kx) {
                        int lo, len;
                        tap_span(kx, pad, iw, ow, lo, len);
                        if (len <= 0) continue;
                        a_axpy(wp[(std::size_t)ky * kw + kx], gyrow + lo, gxrow + lo - pad + kx,
                               (std::size_t)len);
                    }
                }
            }
        }
    }
}

void a_conv2d_bwd_weight(const double* x, int ic, int ih, int iw,
                         const double* gy, int oc, int oh, int ow,
                         int kh, int kw, int stride, int pad,
                         double* gw, double* gb) {
    if (stride != 1) {
        scalar_ops().conv2d_bwd_weight(x, ic, ih, iw, gy, oc, oh, ow, kh, kw, stride, pad, gw, gb);
        return;
    }
    for (int o = 0; o < oc; ++o) {
        const double* gyp = gy + (std::size_t)o * oh * ow;
        if (gb) gb[o] += a_sum(gyp, (std::size_t)oh * ow);
        for (int c = 0; c < ic; ++c) {
            const double* xp = x + (std::size_t)c * ih * iw;
            double* gwp = gw + (((std::size_t)o * ic + c) * kh) * kw;
            for (int ky = 0; ky < kh; ++ky) {
                for (int kx = 0; kx < kw; ++kx) {
                    double acc = 0.0;
                    for (int oy = 0; oy < oh; ++oy) {
                        const int iy = oy - pad + ky;
                        if (iy < 0 || iy >= ih) continue;
                        int lo, len;
                        tap_span(kx, pad, iw, ow, lo, len);
                        if (len <= 0) continue;
                        acc += a_dot(xp + (std::size_t)iy * iw + lo - pad + kx,
                                     gyp + (std::size_t)oy * ow + lo, (std::size_t)len);
                    }
                    gwp[(std::size_t)ky * kw + kx] += acc;
                }
            }
        }
    }
}

void a_adam_step(double* p, const double* g, double* m, double* v,
                 double* vmax, std::size_t n, double lr, double beta1,
                 double beta2, double eps, double bc1, double bc2,
                 bool amsgrad) {
    const double step = lr / bc1;
    const double inv_sqrt_bc2 = 1.0 / std::sqrt(bc2);
    const __m256d vb1 = _mm256_set1_pd(beta1);
    const __m256d vb1c = _mm256_set1_pd(1.0 - beta1);
    const __m256d vb2 = _mm256_set1_pd(beta2);
    const __m256d vb2c = _mm256_set1_pd(1.0 - beta2);
    const __m256d vstep = _mm256_set1_pd(step);
    const __m256d veps = _mm256_set1_pd(eps);
    const __m256d vinv = _mm256_set1_pd(inv_sqrt_bc2);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d vg = _mm256_loadu_pd(g + i);
        __m256d vm = _mm256_add_pd(_mm256_mul_pd(vb1, _mm256_loadu_pd(m + i)),
                                   _mm256_mul_pd(vb1c, vg));
        __m256d vv = _mm256_add_pd(_mm256_mul_pd(vb2, _mm256_loadu_pd(v + i)),
                                   _mm256_mul_pd(vb2c, _mm256_mul_pd(vg, vg)));
        _mm256_storeu_pd(m + i, vm);
        _mm256_storeu_pd(v + i, vv);
        __m256d vi = vv;
        if (amsgrad) {
            vi = _mm256_max_pd(_mm256_loadu_pd(vmax + i), vv);
            _mm256_storeu_pd(vmax + i, vi);
        }
        const __m256d denom = _mm256_add_pd(_mm256_mul_pd(_mm256_sqrt_pd(vi), vinv), veps);
        const __m256d upd = _mm256_div_pd(_mm256_mul_pd(vstep, vm), denom);
        _mm256_storeu_pd(p + i, _mm256_sub_pd(_mm256_loadu_pd(p + i), upd));
    }
    for (; i < n; ++i) {
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

const Ops* avx2_ops() {
    static const Ops table{
        a_add,    a_sub,   a_mul,   a_mul_acc,      a_axpy,
        a_affine, a_dot,   a_sum,   a_sumsq,        a_conv2d_fwd,
        a_conv2d_bwd_input, a_conv2d_bwd_weight, a_adam_step,
    };
    return &table;
}

}  // namespace r2n2::kern

#else

namespace r2n2::kern {
const Ops* avx2_ops() { return nullptr; }
}  // namespace r2n2::kern

#endif
