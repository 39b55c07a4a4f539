#include "r2n2/tape.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

#include "r2n2/kernels.hpp"

namespace r2n2::ad {

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

int conv_out_dim(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

}  // namespace

NodeId Tape::leaf(Tensor value, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return (NodeId)nodes_.size() - 1;
}

Tensor& Tape::grad_buf(NodeId id) {
    Node& n = nodes_[(std::size_t)id];
    if (n.grad.empty()) n.grad = Tensor(n.value.shape());
    return n.grad;
}

NodeId Tape::custom(Tensor value, std::vector<NodeId> parents,
                    std::function<void(Tape&, NodeId)> back) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = any_needs_grad(parents);
    n.parents = std::move(parents);
    if (n.needs_grad) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return (NodeId)nodes_.size() - 1;
}

bool Tape::any_needs_grad(const std::vector<NodeId>& ids) const {
    for (NodeId id : ids)
        if (id >= 0 && nodes_[(std::size_t)id].needs_grad) return true;
    return false;
}

void Tape::backward(NodeId root) {
    if (val(root).size() != 1)
        throw std::invalid_argument("backward: root must be a scalar node");
    grad_buf(root)[0] += 1.0;
    for (NodeId id = root; id >= 0; --id) {
        Node& n = nodes_[(std::size_t)id];
        if (!n.back || n.grad.empty()) continue;
        n.back(*this, id);
    }
}

// --- generic ops -----------------------------------------------------------

NodeId Tape::add(NodeId a, NodeId b) {
    const Tensor& va = val(a);
    const Tensor& vb = val(b);
    check_same_shape(va, vb, "add");
    Tensor out(va.shape());
    kern::ops().add(va.data(), vb.data(), out.data(), out.size());
    return custom(std::move(out), {a, b}, [a, b](Tape& t, NodeId self) {
        const Tensor& g = t.grad(self);
        if (t.needs_grad(a)) kern::ops().axpy(1.0, g.data(), t.grad_buf(a).data(), g.size());
        if (t.needs_grad(b)) kern::ops().axpy(1.0, g.data(), t.grad_buf(b).data(), g.size());
    });
}

NodeId Tape::sub(NodeId a, NodeId b) {
    const Tensor& va = val(a);
    const Tensor& vb = val(b);
    check_same_shape(va, vb, "sub");
    Tensor out(va.shape());
    kern::ops().sub(va.data(), vb.data(), out.data(), out.size());
    return custom(std::move(out), {a, b}, [a, b](Tape& t, NodeId self) {
        const Tensor& g = t.grad(self);
        if (t.needs_grad(a)) kern::ops().axpy(1.0, g.data(), t.grad_buf(a).data(), g.size());
        if (t.needs_grad(b)) kern::ops().axpy(-1.0, g.data(), t.grad_buf(b).data(), g.size());
    });
}

NodeId Tape::mul(NodeId a, NodeId b) {
    const Tensor& va = val(a);
    const Tensor& vb = val(b);
    check_same_shape(va, vb, "mul");
    Tensor out(va.shape());
    kern::ops().mul(va.data(), vb.data(), out.data(), out.size());
    return custom(std::move(out), {a, b}, [a, b](Tape& t, NodeId self) {
        const Tensor& g = t.grad(self);
        if (t.needs_grad(a))
            kern::ops().mul_acc(g.data(), t.val(b).data(), t.grad_buf(a).data(), g.size());
        if (t.needs_grad(b))
            kern::ops().mul_acc(g.data(), t.val(a).data(), t.grad_buf(b).data(), g.size());
    });
}

NodeId Tape::affine(NodeId a, double k, double c) {
    const Tensor& va = val(a);
    Tensor out(va.shape());
    kern::ops().affine(va.data(), k, c, out.data(), out.size());
    return custom(std::move(out), {a}, [a, k](Tape& t, NodeId self) {
        const Tensor& g = t.grad(self);
        if (t.needs_grad(a)) kern::ops().axpy(k, g.data(), t.grad_buf(a).data(), g.size());
    });
}

NodeId Tape::mul_mask(NodeId a, Tensor mask) {
    const Tensor& va = val(a);
    check_same_shape(va, mask, "mul_mask");
    Tensor out(va.shape());
    kern::ops().mul(va.data(), mask.data(), out.data(), out.size());
    auto m = std::make_shared<Tensor>(std::move(mask));
    return custom(std::move(out), {a}, [a, m](Tape& t, NodeId self) {
        const Tensor& g = t.grad(self);
        if (t.needs_grad(a))
            kern::ops().mul_acc(g.data(), m->data(), t.grad_buf(a).data(), g.size());
    });
}

NodeId Tape::tanh(NodeId a) {
    const Tensor& va = val(a);
    Tensor out(va.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(va[i]);
    return custom(std::move(out), {a}, [a](Tape& t, NodeId self) {
        if (!t.needs_grad(a)) return;
        const Tensor& g = t.grad(self);
        const Tensor& y = t.val(self);
        Tensor& ga = t.grad_buf(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
    });
}

NodeId Tape::logistic(NodeId a) {
    const Tensor& va = val(a);
    Tensor out(va.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-va[i]));
    return custom(std::move(out), {a}, [a](Tape& t, NodeId self) {
        if (!t.needs_grad(a)) return;
        const Tensor& g = t.grad(self);
        const Tensor& y = t.val(self);
        Tensor& ga = t.grad_buf(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
    });
}

NodeId Tape::conv2d(NodeId x, NodeId w, NodeId bias, int stride, int pad) {
    const Tensor& vx = val(x);
    const Tensor& vw = val(w);
    if (vx.ndim() != 3 || vw.ndim() != 4)
        throw std::invalid_argument("conv2d: expects x[C,H,W], w[OC,IC,KH,KW]");
    if (vx.dim(0) != vw.dim(1))
        throw std::invalid_argument("conv2d: input channel mismatch");
    const int ic = vx.dim(0), ih = vx.dim(1), iw = vx.dim(2);
    const int oc = vw.dim(0), kh = vw.dim(2), kw = vw.dim(3);
    const int oh = conv_out_dim(ih, kh, stride, pad);
    const int ow = conv_out_dim(iw, kw, stride, pad);
    if (oh <= 0 || ow <= 0) throw std::invalid_argument("conv2d: empty output");
    const double* bptr = bias >= 0 ? val(bias).data() : nullptr;
    if (bias >= 0 && (int)val(bias).size() != oc)
        throw std::invalid_argument("conv2d: bias size mismatch");
    Tensor out({oc, oh, ow});
    kern::ops().conv2d_fwd(vx.data(), ic, ih, iw, vw.data(), oc, kh, kw, bptr, stride, pad,
                           out.data(), oh, ow);
    std::vector<NodeId> parents{x, w};
    if (bias >= 0) parents.push_back(bias);
    return custom(std::move(out), std::move(parents),
                  [x, w, bias, stride, pad](Tape& t, NodeId self) {
        const Tensor& g = t.grad(self);
        const Tensor& vx = t.val(x);
        const Tensor& vw = t.val(w);
        const int ic = vx.dim(0), ih = vx.dim(1), iw = vx.dim(2);
        const int oc = vw.dim(0), kh = vw.dim(2), kw = vw.dim(3);
        const int oh = g.dim(1), ow = g.dim(2);
        if (t.needs_grad(x))
            kern::ops().conv2d_bwd_input(g.data(), oc, oh, ow, vw.data(), ic, kh, kw, stride,
                                         pad, t.grad_buf(x).data(), ih, iw);
        if (t.needs_grad(w) || (bias >= 0 && t.needs_grad(bias))) {
            double* gw = t.needs_grad(w) ? t.grad_buf(w).data() : nullptr;
            double* gb = (bias >= 0 && t.needs_grad(bias)) ? t.grad_buf(bias).data() : nullptr;
            if (gw)
                kern::ops().conv2d_bwd_weight(vx.data(), ic, ih, iw, g.data(), oc, oh, ow, kh,
                                              kw, stride, pad, gw, gb);
            else if (gb)
                for (int o = 0; o < oc; ++o)
                    gb[o] += kern::ops().sum(g.data() + (std::size_t)o * oh * ow,
                                             (std::size_t)oh * ow);
        }
    });
}

NodeId Tape::fc(NodeId x, NodeId w, NodeId bias) {
    const Tensor& vx = val(x);
    const Tensor& vw = val(w);
    if (vw.ndim() != 2 || (int)vx.size() != vw.dim(1))
        throw std::invalid_argument("fc: shape mismatch");
    const int m = vw.dim(0), n = vw.dim(1);
    Tensor out({m});
    for (int i = 0; i < m; ++i)
        out[(std::size_t)i] = kern::ops().dot(vw.data() + (std::size_t)i * n, vx.data(), (std::size_t)n);
    if (bias >= 0) {
        if ((int)val(bias).size() != m) throw std::invalid_argument("fc: bias size mismatch");
        kern::ops().add(out.data(), val(bias).data(), out.data(), (std::size_t)m);
    }
    std::vector<NodeId> parents{x, w};
    if (bias >= 0) parents.push_back(bias);
    return custom(std::move(out), std::move(parents), [x, w, bias](Tape& t, NodeId self) {
        const Tensor& g = t.grad(self);
        const Tensor& vw = t.val(w);
        const Tensor& vx = t.val(x);
        const int m = vw.dim(0), n = vw.dim(1);
        if (t.needs_grad(x)) {
            Tensor& gx = t.grad_buf(x);
            for (int i = 0; i < m; ++i)
                kern::ops().axpy(g[(std::size_t)i], vw.data() + (std::size_t)i * n, gx.data(),
                                 (std::size_t)n);
        }
        if (t.needs_grad(w)) {
            Tensor& gw = t.grad_buf(w);
            for (int i = 0; i < m; ++i)
                kern::ops().axpy(g[(std::size_t)i], vx.data(), gw.data() + (std::size_t)i * n,
                                 (std::size_t)n);
        }
        if (bias >= 0 && t.needs_grad(bias))
            kern::ops().axpy(1.0, g.data(), t.grad_buf(bias).data(), (std::size_t)m);
    });
}

NodeId Tape::spatial_softmax(NodeId x) {
    const Tensor& vx = val(x);
    if (vx.ndim() != 3) throw std::invalid_argument("spatial_softmax: expects [C,H,W]");
    const int c = vx.dim(0);
    const std::size_t hw = (std::size_t)vx.dim(1) * vx.dim(2);
    Tensor out(vx.shape());
    for (int ch = 0; ch < c; ++ch) {
        const double* src = vx.data() + (std::size_t)ch * hw;
        double* dst = out.data() + (std::size_t)ch * hw;
        double mx = src[0];
        for (std::size_t i = 1; i < hw; ++i) mx = std::max(mx, src[i]);
        double total = 0.0;
        for (std::size_t i = 0; i < hw; ++i) {
            dst[i] = std::exp(src[i] - mx);
            total += dst[i];
        }
        const double inv = 1.0 / total;
        for (std::size_t i = 0; i < hw; ++i) dst[i] *= inv;
    }
    return custom(std::move(out), {x}, [x](Tape& t, NodeId self) {
        if (!t.needs_grad(x)) return;
        const Tensor& g = t.grad(self);
        const Tensor& p = t.val(self);
        Tensor& gx = t.grad_buf(x);
        const int c = p.dim(0);
        const std::size_t hw = (std::size_t)p.dim(1) * p.dim(2);
        for (int ch = 0; ch < c; ++ch) {
            const double* pp = p.data() + (std::size_t)ch * hw;
            const double* gp = g.data() + (std::size_t)ch * hw;
            double* out = gx.data() + (std::size_t)ch * hw;
            const double inner = kern::ops().dot(gp, pp, hw);
            for (std::size_t i = 0; i < hw; ++i) out[i] += pp[i] * (gp[i] - inner);
        }
    });
}

NodeId Tape::spatial_sum(NodeId x) {
    const Tensor& vx = val(x);
    if (vx.ndim() != 3) throw std::invalid_argument("spatial_sum: expects [C,H,W]");
    const int c = vx.dim(0);
    const std::size_t hw = (std::size_t)vx.dim(1) * vx.dim(2);
    Tensor out({c});
    for (int ch = 0; ch < c; ++ch)
        out[(std::size_t)ch] = kern::ops().sum(vx.data() + (std::size_t)ch * hw, hw);
    return custom(std::move(out), {x}, [x, hw](Tape& t, NodeId self) {
        if (!t.needs_grad(x)) return;
        const Tensor& g = t.grad(self);
        Tensor& gx = t.grad_buf(x);
        const int c = (int)g.size();
        for (int ch = 0; ch < c; ++ch) {
            double* dst = gx.data() + (std::size_t)ch * hw;
            const double gv = g[(std::size_t)ch];
            for (std::size_t i = 0; i < hw; ++i) dst[i] += gv;
        }
    });
}

NodeId Tape::sum(NodeId x) {
    const Tensor& vx = val(x);
    Tensor out = Tensor::scalar(kern::ops().sum(vx.data(), vx.size()));
    return custom(std::move(out), {x}, [x](Tape& t, NodeId self) {
        if (!t.needs_grad(x)) return;
        const double g = t.grad(self)[0];
        Tensor& gx = t.grad_buf(x);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
    });
}

NodeId Tape::mean(NodeId x) {
    const std::size_t n = val(x).size();
    return affine(sum(x), 1.0 / (double)n, 0.0);
}

NodeId Tape::channel_slice(NodeId x, int c0, int c1) {
    const Tensor& vx = val(x);
    if (vx.ndim() != 3 || c0 < 0 || c1 > vx.dim(0) || c0 >= c1)
        throw std::invalid_argument("channel_slice: bad range");
    const std::size_t hw = (std::size_t)vx.dim(1) * vx.dim(2);
    Tensor out({c1 - c0, vx.dim(1), vx.dim(2)});
    std::copy(vx.data() + (std::size_t)c0 * hw, vx.data() + (std::size_t)c1 * hw, out.data());
    return custom(std::move(out), {x}, [x, c0, hw](Tape& t, NodeId self) {
        if (!t.needs_grad(x)) return;
        const Tensor& g = t.grad(self);
        kern::ops().axpy(1.0, g.data(), t.grad_buf(x).data() + (std::size_t)c0 * hw, g.size());
    });
}

NodeId Tape::channel_concat(const std::vector<NodeId>& xs) {
    if (xs.empty()) throw std::invalid_argument("channel_concat: empty");
    int c = 0;
    const int h = val(xs[0]).dim(1), w = val(xs[0]).dim(2);
    for (NodeId id : xs) {
        const Tensor& v = val(id);
        if (v.ndim() != 3 || v.dim(1) != h || v.dim(2) != w)
            throw std::invalid_argument("channel_concat: plane size mismatch");
        c += v.dim(0);
    }
    Tensor out({c, h, w});
    std::size_t off = 0;
    for (NodeId id : xs) {
        const Tensor& v = val(id);
        std::copy(v.data(), v.data() + v.size(), out.data() + off);
        off += v.size();
    }
    auto parents = xs;
    return custom(std::move(out), std::move(parents), [xs](Tape& t, NodeId self) {
        const Tensor& g = t.grad(self);
        std::size_t off = 0;
        for (NodeId id : xs) {
            const std::size_t n = t.val(id).size();
            if (t.needs_grad(id))
                kern::ops().axpy(1.0, g.data() + off, t.grad_buf(id).data(), n);
            off += n;
        }
    });
}

NodeId Tape::pick(NodeId x, int index) {
    const Tensor& vx = val(x);
    if (index < 0 || (std::size_t)index >= vx.size())
        throw std::invalid_argument("pick: index out of range");
    return custom(Tensor::scalar(vx[(std::size_t)index]), {x}, [x, index](Tape& t, NodeId self) {
        if (t.needs_grad(x)) t.grad_buf(x)[(std::size_t)index] += t.grad(self)[0];
    });
}

NodeId Tape::stack(const std::vector<NodeId>& scalars) {
    Tensor out({(int)scalars.size()});
    for (std::size_t i = 0; i < scalars.size(); ++i) {
        if (val(scalars[i]).size() != 1) throw std::invalid_argument("stack: non-scalar input");
        out[i] = val(scalars[i])[0];
    }
    auto parents = scalars;
    return custom(std::move(out), std::move(parents), [scalars](Tape& t, NodeId self) {
        const Tensor& g = t.grad(self);
        for (std::size_t i = 0; i < scalars.size(); ++i)
            if (t.needs_grad(scalars[i])) t.grad_buf(scalars[i])[0] += g[i];
    });
}

NodeId Tape::divide(NodeId a, NodeId b) {
    if (val(a).size() != 1 || val(b).size() != 1)
        throw std::invalid_argument("divide: scalar nodes only");
    const double va = scalar_val(a), vb = scalar_val(b);
    return custom(Tensor::scalar(va / vb), {a, b}, [a, b](Tape& t, NodeId self) {
        const double g = t.grad(self)[0];
        const double va = t.scalar_val(a), vb = t.scalar_val(b);
        if (t.needs_grad(a)) t.grad_buf(a)[0] += g / vb;
        if (t.needs_grad(b)) t.grad_buf(b)[0] -= g * va / (vb * vb);
    });
}

NodeId Tape::l1_distance(NodeId a, NodeId b) {
    const Tensor& va = val(a);
    const Tensor& vb = val(b);
    check_same_shape(va, vb, "l1_distance");
    double acc = 0.0;
    for (std::size_t i = 0; i < va.size(); ++i) acc += std::abs(va[i] - vb[i]);
    return custom(Tensor::scalar(acc), {a, b}, [a, b](Tape& t, NodeId self) {
        const double g = t.grad(self)[0];
        const Tensor& va = t.val(a);
        const Tensor& vb = t.val(b);
        const bool na = t.needs_grad(a), nb = t.needs_grad(b);
        if (!na && !nb) return;
        for (std::size_t i = 0; i < va.size(); ++i) {
            const double d = va[i] - vb[i];
            const double s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
            if (na) t.grad_buf(a)[i] += g * s;
            if (nb) t.grad_buf(b)[i] -= g * s;
        }
    });
}

}  // namespace r2n2::ad
