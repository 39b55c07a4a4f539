#pragma once

#include <cstddef>
#include <string_view>

// Numeric kernels behind the hot loops (convolutions, elementwise maps,
// reductions, optimizer updates). Every kernel has a scalar reference
// implementation and, on x86-64 with AVX2+FMA, a vectorized variant.
// The active backend is picked once at startup and can be overridden
// with R2N2_KERNEL_BACKEND=scalar|avx2 or kern::set_backend().

namespace r2n2::kern {

enum class Backend { scalar, avx2 };

struct Ops {
    // z = x + y, z = x - y, z = x * y  (same length n)
    void (*add)(const double* x, const double* y, double* z, std::size_t n);
    void (*sub)(const double* x, const double* y, double* z, std::size_t n);
    void (*mul)(const double* x, const double* y, double* z, std::size_t n);
    // z += x * y
    void (*mul_acc)(const double* x, const double* y, double* z, std::size_t n);
    // y += a * x
    void (*axpy)(double a, const double* x, double* y, std::size_t n);
    // y = a * x + b
    void (*affine)(const double* x, double a, double b, double* y, std::size_t n);
    double (*dot)(const double* x, const double* y, std::size_t n);
    double (*sum)(const double* x, std::size_t n);
    double (*sumsq)(const double* x, std::size_t n);

    // Direct 2D convolution over [C,H,W] planes, weights [OC,IC,KH,KW],
    // zero padding `pad`, square stride. bias may be null.
    void (*conv2d_fwd)(const double* x, int ic, int ih, int iw,
                       const double* w, int oc, int kh, int kw,
                       const double* bias, int stride, int pad,
                       double* y, int oh, int ow);
    // gx += dConv/dx^T gy   (gx must be zero-initialized by the caller)
    void (*conv2d_bwd_input)(const double* gy, int oc, int oh, int ow,
                             const double* w, int ic, int kh, int kw,
                             int stride, int pad,
                             double* gx, int ih, int iw);
    // gw += dConv/dw^T gy, gb += dConv/db^T gy (gb may be null)
    void (*conv2d_bwd_weight)(const double* x, int ic, int ih, int iw,
                              const double* gy, int oc, int oh, int ow,
                              int kh, int kw, int stride, int pad,
                              double* gw, double* gb);

    // One Adam/AMSGrad update. bc1/bc2 are the bias corrections 1-beta^t.
    void (*adam_step)(double* p, const double* g, double* m, double* v,
                      double* vmax, std::size_t n, double lr, double beta1,
                      double beta2, double eps, double bc1, double bc2,
                      bool amsgrad);
};

const Ops& ops();
Backend active_backend();
std::string_view backend_name(Backend b);
void set_backend(Backend b);
bool cpu_has_avx2();

// Backend tables, exposed for equivalence tests.
const Ops& scalar_ops();
const Ops* avx2_ops();  // null when unsupported by CPU or build

}  // namespace r2n2::kern
