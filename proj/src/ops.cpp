#include "sail/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace sail {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

void require_4d(const Tensor& x, const char* op) {
    if (x.ndim() != 4)
        throw ShapeError(std::string(op) + ": expected 4-D tensor, got " + shape_str(x.shape()));
}

void mark(Tensor& out, bool needs_grad) {
    out.set_requires_grad(needs_grad);
    out.set_leaf(false);
}

bool tracked(bool needs_grad) { return needs_grad && recording(); }

// b > 0
inline int floor_div(int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }
inline int ceil_div(int a, int b) { return a >= 0 ? (a + b - 1) / b : -((-a) / b); }

// output coords o with 0 <= o*stride - pad + k < in, clipped to [0, out_n)
inline void axis_bounds(int k, int pad, int stride, int in, int out_n, int& lo, int& hi) {
    lo = std::max(0, ceil_div(pad - k, stride));
    hi = std::min(out_n - 1, floor_div(in - 1 + pad - k, stride));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out = Tensor::zeros(a.shape());
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
    bool needs = a.requires_grad() || b.requires_grad();
    mark(out, needs);
    if (tracked(needs)) {
        Tape::active()->record(out, [a, b, out]() mutable {
            if (!out.has_grad()) return;
            const double* go = out.grad_vec().data();
            int64_t n = out.numel();
            if (a.requires_grad()) {
                double* ga = a.grad();
                for (int64_t i = 0; i < n; ++i) ga[i] += go[i];
            }
            if (b.requires_grad()) {
                double* gb = b.grad();
                for (int64_t i = 0; i < n; ++i) gb[i] += go[i];
            }
        });
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor out = Tensor::zeros(a.shape());
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
    bool needs = a.requires_grad() || b.requires_grad();
    mark(out, needs);
    if (tracked(needs)) {
        Tape::active()->record(out, [a, b, out]() mutable {
            if (!out.has_grad()) return;
            const double* go = out.grad_vec().data();
            int64_t n = out.numel();
            if (a.requires_grad()) {
                double* ga = a.grad();
                for (int64_t i = 0; i < n; ++i) ga[i] += go[i];
            }
            if (b.requires_grad()) {
                double* gb = b.grad();
                for (int64_t i = 0; i < n; ++i) gb[i] -= go[i];
            }
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tensor out = Tensor::zeros(a.shape());
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
    bool needs = a.requires_grad() || b.requires_grad();
    mark(out, needs);
    if (tracked(needs)) {
        Tape::active()->record(out, [a, b, out]() mutable {
            if (!out.has_grad()) return;
            const double* go = out.grad_vec().data();
            const double* pa = a.data();
            const double* pb = b.data();
            int64_t n = out.numel();
            if (a.requires_grad()) {
                double* ga = a.grad();
                for (int64_t i = 0; i < n; ++i) ga[i] += pb[i] * go[i];
            }
            if (b.requires_grad()) {
                double* gb = b.grad();
                for (int64_t i = 0; i < n; ++i) gb[i] += pa[i] * go[i];
            }
        });
    }
    return out;
}

Tensor scale(const Tensor& x, double c) {
    Tensor out = Tensor::zeros(x.shape());
    const double* px = x.data();
    double* po = out.data();
    int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = c * px[i];
    bool needs = x.requires_grad();
    mark(out, needs);
    if (tracked(needs)) {
        Tape::active()->record(out, [x, out, c]() mutable {
            if (!out.has_grad()) return;
            const double* go = out.grad_vec().data();
            double* gx = x.grad();
            int64_t n = out.numel();
            for (int64_t i = 0; i < n; ++i) gx[i] += c * go[i];
        });
    }
    return out;
}

Tensor lerp(const Tensor& a, const Tensor& b, const Tensor& t) {
    require_same_shape(a, b, "lerp");
    if (t.numel() != 1) throw ShapeError("lerp: t must be scalar");
    double tv = t.data()[0];
    Tensor out = Tensor::zeros(a.shape());
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = tv * pa[i] + (1.0 - tv) * pb[i];
    bool needs = a.requires_grad() || b.requires_grad() || t.requires_grad();
    mark(out, needs);
    if (tracked(needs)) {
        Tape::active()->record(out, [a, b, t, out]() mutable {
            if (!out.has_grad()) return;
            const double* go = out.grad_vec().data();
            const double* pa = a.data();
            const double* pb = b.data();
            double tv = t.data()[0];
            int64_t n = out.numel();
            if (a.requires_grad()) {
                double* ga = a.grad();
                for (int64_t i = 0; i < n; ++i) ga[i] += tv * go[i];
            }
            if (b.requires_grad()) {
                double* gb = b.grad();
                for (int64_t i = 0; i < n; ++i) gb[i] += (1.0 - tv) * go[i];
            }
            if (t.requires_grad()) {
                double acc = 0.0;
                for (int64_t i = 0; i < n; ++i) acc += (pa[i] - pb[i]) * go[i];
                t.grad()[0] += acc;
            }
        });
    }
    return out;
}

Tensor channel_scale(const Tensor& x, const Tensor& s) {
    require_4d(x, "channel_scale");
    if (s.ndim() != 2 || s.dim(0) != x.dim(0) || s.dim(1) != x.dim(1))
        throw ShapeError("channel_scale: scale shape " + shape_str(s.shape()) +
                         " does not match " + shape_str(x.shape()));
    int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    int64_t hw = static_cast<int64_t>(H) * W;
    Tensor out = Tensor::zeros(x.shape());
    const double* px = x.data();
    const double* ps = s.data();
    double* po = out.data();
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            double sv = ps[b * C + c];
            const double* xi = px + (static_cast<int64_t>(b) * C + c) * hw;
            double* oi = po + (static_cast<int64_t>(b) * C + c) * hw;
            for (int64_t i = 0; i < hw; ++i) oi[i] = sv * xi[i];
        }
    bool needs = x.requires_grad() || s.requires_grad();
    mark(out, needs);
    if (tracked(needs)) {
        Tape::active()->record(out, [x, s, out, B, C, hw]() mutable {
            if (!out.has_grad()) return;
            const double* go = out.grad_vec().data();
            const double* px = x.data();
            const double* ps = s.data();
            double* gx = x.requires_grad() ? x.grad() : nullptr;
            double* gs = s.requires_grad() ? s.grad() : nullptr;
            for (int b = 0; b < B; ++b)
                for (int c = 0; c < C; ++c) {
                    int64_t off = (static_cast<int64_t>(b) * C + c) * hw;
                    double sv = ps[b * C + c];
                    if (gx)
                        for (int64_t i = 0; i < hw; ++i) gx[off + i] += sv * go[off + i];
                    if (gs) {
                        double acc = 0.0;
                        for (int64_t i = 0; i < hw; ++i) acc += px[off + i] * go[off + i];
                        gs[b * C + c] += acc;
                    }
                }
        });
    }
    return out;
}

Tensor relu(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    const double* px = x.data();
    double* po = out.data();
    int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = px[i] > 0.0 ? px[i] : 0.0;
    bool needs = x.requires_grad();
    mark(out, needs);
    if (tracked(needs)) {
        Tape::active()->record(out, [x, out]() mutable {
            if (!out.has_grad()) return;
            const double* go = out.grad_vec().data();
            const double* px = x.data();
            double* gx = x.grad();
            int64_t n = out.numel();
            for (int64_t i = 0; i < n; ++i)
                if (px[i] > 0.0) gx[i] += go[i];
        });
    }
    return out;
}

Tensor sigmoid(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    const double* px = x.data();
    double* po = out.data();
    int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) {
        double v = px[i];
        if (v >= 0.0) {
            po[i] = 1.0 / (1.0 + std::exp(-v));
        } else {
            double e = std::exp(v);
            po[i] = e / (1.0 + e);
        }
    }
    bool needs = x.requires_grad();
    mark(out, needs);
    if (tracked(needs)) {
        Tape::active()->record(out, [x, out]() mutable {
            if (!out.has_grad()) return;
            const double* go = out.grad_vec().data();
            const double* po = out.data();
            double* gx = x.grad();
            int64_t n = out.numel();
            for (int64_t i = 0; i < n; ++i) gx[i] += po[i] * (1.0 - po[i]) * go[i];
        });
    }
    return out;
}

Tensor softmax(const Tensor& x) {
    if (x.ndim() != 2) throw ShapeError("softmax: expected [B,K], got " + shape_str(x.shape()));
    int B = x.dim(0), K = x.dim(1);
    Tensor out = Tensor::zeros(x.shape());
    const double* px = x.data();
    double* po = out.data();
    for (int b = 0; b < B; ++b) {
        const double* row = px + static_cast<int64_t>(b) * K;
        double* orow = po + static_cast<int64_t>(b) * K;
        double m = row[0];
        for (int k = 1; k < K; ++k) m = std::max(m, row[k]);
        double z = 0.0;
        for (int k = 0; k < K; ++k) {
            orow[k] = std::exp(row[k] - m);
            z += orow[k];
        }
        double inv = 1.0 / z;
        for (int k = 0; k < K; ++k) orow[k] *= inv;
    }
    bool needs = x.requires_grad();
    mark(out, needs);
    if (tracked(needs)) {
        Tape::active()->record(out, [x, out, B, K]() mutable {
            if (!out.has_grad()) return;
            const double* go = out.grad_vec().data();
            const double* po = out.data();
            double* gx = x.grad();
            for (int b = 0; b < B; ++b) {
                int64_t off = static_cast<int64_t>(b) * K;
                double dot = 0.0;
                for (int k = 0; k < K; ++k) dot += go[off + k] * po[off + k];
                for (int k = 0; k < K; ++k) gx[off + k] += po[off + k] * (go[off + k] - dot);
            }
        });
    }
    return out;
}

Tensor softmax_channels(const Tensor& x) {
    require_4d(x, "softmax_channels");
    int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    int64_t hw = static_cast<int64_t>(H) * W;
    Tensor out = Tensor::zeros(x.shape());
    const double* px = x.data();
    double* po = out.data();
    for (int b = 0; b < B; ++b) {
        int64_t base = static_cast<int64_t>(b) * C * hw;
        for (int64_t p = 0; p < hw; ++p) {
            double m = px[base + p];
            for (int c = 1; c < C; ++c) m = std::max(m, px[base + c * hw + p]);
            double z = 0.0;
            for (int c = 0; c < C; ++c) {
                double e = std::exp(px[base + c * hw + p] - m);
                po[base + c * hw + p] = e;
                z += e;
            }
            double inv = 1.0 / z;
            for (int c = 0; c < C; ++c) po[base + c * hw + p] *= inv;
        }
    }
    bool needs = x.requires_grad();
    mark(out, needs);
    if (tracked(needs)) {
        Tape::active()->record(out, [x, out, B, C, hw]() mutable {
            if (!out.has_grad()) return;
            const double* go = out.grad_vec().data();
            const double* po = out.data();
            double* gx = x.grad();
            for (int b = 0; b < B; ++b) {
                int64_t base = static_cast<int64_t>(b) * C * hw;
                for (int64_t p = 0; p < hw; ++p) {
                    double dot = 0.0;
                    for (int c = 0; c < C; ++c) dot += go[base + c * hw + p] * po[base + c * hw + p];
                    for (int c = 0; c < C; ++c)
                        gx[base + c * hw + p] +=
                            po[base + c * hw + p] * (go[base + c * hw + p] - dot);
                }
            }
        });
    }
    return out;
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding) {
    require_4d(input, "conv2d");
    require_4d(weight, "conv2d weight");
    if (stride < 1 || padding < 0) throw ConfigError("conv2d: invalid stride/padding");
    int B = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
    int Co = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
    if (weight.dim(1) != Cin)
        throw ShapeError("conv2d: weight expects " + std::to_string(weight.dim(1)) +
                         " input channels, got " + std::to_string(Cin));
    if (bias.numel() != Co) throw ShapeError("conv2d: bias size mismatch");
    int numH = H + 2 * padding - kh;
    int numW = W + 2 * padding - kw;
    if (numH < 0 || numW < 0 || numH % stride != 0 || numW % stride != 0)
        throw ConfigError("conv2d: non-integer output size");
    int Ho = numH / stride + 1;
    int Wo = numW / stride + 1;

    Tensor out = Tensor::zeros({B, Co, Ho, Wo});
    const double* pin = input.data();
    const double* pw = weight.data();
    const double* pb = bias.data();
    double* po = out.data();
    int64_t in_chw = static_cast<int64_t>(Cin) * H * W;
    int64_t out_chw = static_cast<int64_t>(Co) * Ho * Wo;

    for (int b = 0; b < B; ++b) {
        const double* ib = pin + b * in_chw;
        double* ob = po + b * out_chw;
        for (int co = 0; co < Co; ++co) {
            double* oc = ob + static_cast<int64_t>(co) * Ho * Wo;
            double bv = pb[co];
            for (int64_t i = 0; i < static_cast<int64_t>(Ho) * Wo; ++i) oc[i] = bv;
            for (int ci = 0; ci < Cin; ++ci) {
                const double* ic = ib + static_cast<int64_t>(ci) * H * W;
                const double* wc = pw + (static_cast<int64_t>(co) * Cin + ci) * kh * kw;
                for (int ky = 0; ky < kh; ++ky) {
                    int oh_lo, oh_hi;
                    axis_bounds(ky, padding, stride, H, Ho, oh_lo, oh_hi);
                    for (int kx = 0; kx < kw; ++kx) {
                        double wv = wc[ky * kw + kx];
                        if (wv == 0.0) continue;
                        int ow_lo, ow_hi;
                        axis_bounds(kx, padding, stride, W, Wo, ow_lo, ow_hi);
                        for (int oh = oh_lo; oh <= oh_hi; ++oh) {
                            int ih = oh * stride - padding + ky;
                            const double* irow = ic + static_cast<int64_t>(ih) * W;
                            double* orow = oc + static_cast<int64_t>(oh) * Wo;
                            if (stride == 1) {
                                int off = kx - padding;
                                for (int ow = ow_lo; ow <= ow_hi; ++ow)
                                    orow[ow] += wv * irow[ow + off];
                            } else {
                                for (int ow = ow_lo; ow <= ow_hi; ++ow)
                                    orow[ow] += wv * irow[ow * stride - padding + kx];
                            }
                        }
                    }
                }
            }
        }
    }

    bool needs = input.requires_grad() || weight.requires_grad() || bias.requires_grad();
    mark(out, needs);
    if (tracked(needs)) {
        Tape::active()->record(out, [input, weight, bias, out, stride, padding]() mutable {
            if (!out.has_grad()) return;
            int B = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
            int Co = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
            int Ho = out.dim(2), Wo = out.dim(3);
            const double* go = out.grad_vec().data();
            const double* pin = input.data();
            const double* pw = weight.data();
            double* gi = input.requires_grad() ? input.grad() : nullptr;
            double* gw = weight.requires_grad() ? weight.grad() : nullptr;
            double* gb = bias.requires_grad() ? bias.grad() : nullptr;
            int64_t in_chw = static_cast<int64_t>(Cin) * H * W;
            int64_t out_chw = static_cast<int64_t>(Co) * Ho * Wo;

            if (gb) {
                for (int co = 0; co < Co; ++co) {
                    double acc = 0.0;
                    for (int b = 0; b < B; ++b) {
                        const double* oc = go + b * out_chw + static_cast<int64_t>(co) * Ho * Wo;
                        for (int64_t i = 0; i < static_cast<int64_t>(Ho) * Wo; ++i) acc += oc[i];
                    }
                    gb[co] += acc;
                }
            }
            if (!gi && !gw) return;

            for (int b = 0; b < B; ++b) {
                for (int co = 0; co < Co; ++co) {
                    const double* goc = go + b * out_chw + static_cast<int64_t>(co) * Ho * Wo;
                    for (int ci = 0; ci < Cin; ++ci) {
                        const double* ic = pin + b * in_chw + static_cast<int64_t>(ci) * H * W;
                        double* gic = gi ? gi + b * in_chw + static_cast<int64_t>(ci) * H * W
                                         : nullptr;
                        int64_t woff = (static_cast<int64_t>(co) * Cin + ci) * kh * kw;
                        for (int ky = 0; ky < kh; ++ky) {
                            int oh_lo, oh_hi;
                            axis_bounds(ky, padding, stride, H, Ho, oh_lo, oh_hi);
                            for (int kx = 0; kx < kw; ++kx) {
                                int ow_lo, ow_hi;
                                axis_bounds(kx, padding, stride, W, Wo, ow_lo, ow_hi);
                                double wv = pw[woff + ky * kw + kx];
                                double wacc = 0.0;
                                for (int oh = oh_lo; oh <= oh_hi; ++oh) {
                                    int ih = oh * stride - padding + ky;
                                    const double* grow = goc + static_cast<int64_t>(oh) * Wo;
                                    const double* irow = ic + static_cast<int64_t>(ih) * W;
                                    if (stride == 1) {
                                        int off = kx - padding;
                                        if (gw)
                                            for (int ow = ow_lo; ow <= ow_hi; ++ow)
                                                wacc += grow[ow] * irow[ow + off];
                                        if (gi) {
                                            double* grow_i = gic + static_cast<int64_t>(ih) * W;
                                            for (int ow = ow_lo; ow <= ow_hi; ++ow)
                                                grow_i[ow + off] += wv * grow[ow];
                                        }
                                    } else {
                                        for (int ow = ow_lo; ow <= ow_hi; ++ow) {
                                            int iw = ow * stride - padding + kx;
                                            if (gw) wacc += grow[ow] * irow[iw];
                                            if (gi)
                                                gic[static_cast<int64_t>(ih) * W + iw] +=
                                                    wv * grow[ow];
                                        }
                                    }
                                }
                                if (gw) gw[woff + ky * kw + kx] += wacc;
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

Tensor max_pool2d(const Tensor& x, int k, int stride) {
    require_4d(x, "max_pool2d");
    if (k < 1 || stride < 1) throw ConfigError("max_pool2d: invalid kernel/stride");
    int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (k > H || k > W) throw ConfigError("max_pool2d: kernel larger than input");
    int Ho = (H - k) / stride + 1;
    int Wo = (W - k) / stride + 1;
    Tensor out = Tensor::zeros({B, C, Ho, Wo});
    auto argmax = std::make_shared<std::vector<int64_t>>(out.numel());
    const double* px = x.data();
    double* po = out.data();
    int64_t oi = 0;
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const double* plane = px + (static_cast<int64_t>(b) * C + c) * H * W;
            int64_t pbase = (static_cast<int64_t>(b) * C + c) * H * W;
            for (int oh = 0; oh < Ho; ++oh)
                for (int ow = 0; ow < Wo; ++ow, ++oi) {
                    int ih0 = oh * stride, iw0 = ow * stride;
                    double best = plane[static_cast<int64_t>(ih0) * W + iw0];
                    int64_t bidx = static_cast<int64_t>(ih0) * W + iw0;
                    for (int dy = 0; dy < k; ++dy)
                        for (int dx = 0; dx < k; ++dx) {
                            int64_t idx = static_cast<int64_t>(ih0 + dy) * W + (iw0 + dx);
                            if (plane[idx] > best) {
                                best = plane[idx];
                                bidx = idx;
                            }
                        }
                    po[oi] = best;
                    (*argmax)[oi] = pbase + bidx;
                }
        }
    bool needs = x.requires_grad();
    mark(out, needs);
    if (tracked(needs)) {
        Tape::active()->record(out, [x, out, argmax]() mutable {
            if (!out.has_grad()) return;
            const double* go = out.grad_vec().data();
            double* gx = x.grad();
            int64_t n = out.numel();
            for (int64_t i = 0; i < n; ++i) gx[(*argmax)[i]] += go[i];
        });
    }
    return out;
}

Tensor global_avg_pool(const Tensor& x) {
    require_4d(x, "global_avg_pool");
    int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    int64_t hw = static_cast<int64_t>(H) * W;
    Tensor out = Tensor::zeros({B, C});
    const double* px = x.data();
    double* po = out.data();
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const double* plane = px + (static_cast<int64_t>(b) * C + c) * hw;
            double acc = 0.0;
            for (int64_t i = 0; i < hw; ++i) acc += plane[i];
            po[b * C + c] = acc / static_cast<double>(hw);
        }
    bool needs = x.requires_grad();
    mark(out, needs);
    if (tracked(needs)) {
        Tape::active()->record(out, [x, out, B, C, hw]() mutable {
            if (!out.has_grad()) return;
            const double* go = out.grad_vec().data();
            double* gx = x.grad();
            double inv = 1.0 / static_cast<double>(hw);
            for (int b = 0; b < B; ++b)
                for (int c = 0; c < C; ++c) {
                    double g = go[b * C + c] * inv;
                    double* plane = gx + (static_cast<int64_t>(b) * C + c) * hw;
                    for (int64_t i = 0; i < hw; ++i) plane[i] += g;
                }
        });
    }
    return out;
}

Tensor adaptive_avg_pool(const Tensor& x, int outH, int outW) {
    require_4d(x, "adaptive_avg_pool");
    int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (outH < 1 || outW < 1) throw ConfigError("adaptive_avg_pool: zero-sized output");
    if (outH > H || outW > W)
        throw ConfigError("adaptive_avg_pool: output larger than input");
    Tensor out = Tensor::zeros({B, C, outH, outW});
    // bin i covers [floor(i*H/outH), floor((i+1)*H/outH))
    std::vector<int> hs(outH + 1), ws(outW + 1);
    for (int i = 0; i <= outH; ++i) hs[i] = static_cast<int>(static_cast<int64_t>(i) * H / outH);
    for (int i = 0; i <= outW; ++i) ws[i] = static_cast<int>(static_cast<int64_t>(i) * W / outW);
    const double* px = x.data();
    double* po = out.data();
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const double* plane = px + (static_cast<int64_t>(b) * C + c) * H * W;
            double* oplane = po + (static_cast<int64_t>(b) * C + c) * outH * outW;
            for (int oh = 0; oh < outH; ++oh)
                for (int ow = 0; ow < outW; ++ow) {
                    double acc = 0.0;
                    for (int ih = hs[oh]; ih < hs[oh + 1]; ++ih)
                        for (int iw = ws[ow]; iw < ws[ow + 1]; ++iw)
                            acc += plane[static_cast<int64_t>(ih) * W + iw];
                    int cnt = (hs[oh + 1] - hs[oh]) * (ws[ow + 1] - ws[ow]);
                    oplane[oh * outW + ow] = acc / cnt;
                }
        }
    bool needs = x.requires_grad();
    mark(out, needs);
    if (tracked(needs)) {
        auto hsp = std::make_shared<std::vector<int>>(hs);
        auto wsp = std::make_shared<std::vector<int>>(ws);
        Tape::active()->record(out, [x, out, hsp, wsp, B, C, H, W, outH, outW]() mutable {
            if (!out.has_grad()) return;
            const double* go = out.grad_vec().data();
            double* gx = x.grad();
            const auto& hs = *hsp;
            const auto& ws = *wsp;
            for (int b = 0; b < B; ++b)
                for (int c = 0; c < C; ++c) {
                    double* plane = gx + (static_cast<int64_t>(b) * C + c) * H * W;
                    const double* oplane =
                        go + (static_cast<int64_t>(b) * C + c) * outH * outW;
                    for (int oh = 0; oh < outH; ++oh)
                        for (int ow = 0; ow < outW; ++ow) {
                            int cnt = (hs[oh + 1] - hs[oh]) * (ws[ow + 1] - ws[ow]);
                            double g = oplane[oh * outW + ow] / cnt;
                            for (int ih = hs[oh]; ih < hs[oh + 1]; ++ih)
                                for (int iw = ws[ow]; iw < ws[ow + 1]; ++iw)
                                    plane[static_cast<int64_t>(ih) * W + iw] += g;
                        }
                }
        });
    }
    return out;
}

namespace {

struct LerpAxis {
    std::vector<int> i0, i1;
    std::vector<double> w1;  // weight of i1; weight of i0 is 1-w1
};

// align-corners=false: src = (dst + 0.5) * (in/out) - 0.5, clamped to [0, in-1]
LerpAxis make_axis(int in, int out) {
    LerpAxis ax;
    ax.i0.resize(out);
    ax.i1.resize(out);
    ax.w1.resize(out);
    double scale = static_cast<double>(in) / out;
    for (int d = 0; d < out; ++d) {
        double src = (d + 0.5) * scale - 0.5;
        if (src < 0.0) src = 0.0;
        if (src > in - 1) src = in - 1;
        int lo = static_cast<int>(std::floor(src));
        if (lo > in - 1) lo = in - 1;
        int hi = std::min(lo + 1, in - 1);
        ax.i0[d] = lo;
        ax.i1[d] = hi;
        ax.w1[d] = src - lo;
    }
    return ax;
}

}  // namespace

Tensor bilinear_upsample(const Tensor& x, int outH, int outW) {
    require_4d(x, "bilinear_upsample");
    int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (outH < H || outW < W)
        throw ConfigError("bilinear_upsample: output smaller than input");
    auto ay = std::make_shared<LerpAxis>(make_axis(H, outH));
    auto ax = std::make_shared<LerpAxis>(make_axis(W, outW));
    Tensor out = Tensor::zeros({B, C, outH, outW});
    const double* px = x.data();
    double* po = out.data();
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const double* plane = px + (static_cast<int64_t>(b) * C + c) * H * W;
            double* oplane = po + (static_cast<int64_t>(b) * C + c) * outH * outW;
            for (int oy = 0; oy < outH; ++oy) {
                int y0 = ay->i0[oy], y1 = ay->i1[oy];
                double wy = ay->w1[oy];
                const double* r0 = plane + static_cast<int64_t>(y0) * W;
                const double* r1 = plane + static_cast<int64_t>(y1) * W;
                double* orow = oplane + static_cast<int64_t>(oy) * outW;
                for (int ox = 0; ox < outW; ++ox) {
                    int x0 = ax->i0[ox], x1 = ax->i1[ox];
                    double wx = ax->w1[ox];
                    double top = (1.0 - wx) * r0[x0] + wx * r0[x1];
                    double bot = (1.0 - wx) * r1[x0] + wx * r1[x1];
                    orow[ox] = (1.0 - wy) * top + wy * bot;
                }
            }
        }
    bool needs = x.requires_grad();
    mark(out, needs);
    if (tracked(needs)) {
        Tape::active()->record(out, [x, out, ay, ax, B, C, H, W, outH, outW]() mutable {
            if (!out.has_grad()) return;
            const double* go = out.grad_vec().data();
            double* gx = x.grad();
            for (int b = 0; b < B; ++b)
                for (int c = 0; c < C; ++c) {
                    double* plane = gx + (static_cast<int64_t>(b) * C + c) * H * W;
                    const double* oplane =
                        go + (static_cast<int64_t>(b) * C + c) * outH * outW;
                    for (int oy = 0; oy < outH; ++oy) {
                        int y0 = ay->i0[oy], y1 = ay->i1[oy];
                        double wy = ay->w1[oy];
                        const double* orow = oplane + static_cast<int64_t>(oy) * outW;
                        for (int ox = 0; ox < outW; ++ox) {
                            int x0 = ax->i0[ox], x1 = ax->i1[ox];
                            double wx = ax->w1[ox];
                            double g = orow[ox];
                            plane[static_cast<int64_t>(y0) * W + x0] += (1.0 - wy) * (1.0 - wx) * g;
                            plane[static_cast<int64_t>(y0) * W + x1] += (1.0 - wy) * wx * g;
                            plane[static_cast<int64_t>(y1) * W + x0] += wy * (1.0 - wx) * g;
                            plane[static_cast<int64_t>(y1) * W + x1] += wy * wx * g;
                        }
                    }
                }
        });
    }
    return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    require_4d(a, "concat_channels");
    require_4d(b, "concat_channels");
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
        throw ShapeError("concat_channels: incompatible shapes " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    int B = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), H = a.dim(2), W = a.dim(3);
    int64_t hw = static_cast<int64_t>(H) * W;
    Tensor out = Tensor::zeros({B, Ca + Cb, H, W});
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (int bi = 0; bi < B; ++bi) {
        std::memcpy(po + static_cast<int64_t>(bi) * (Ca + Cb) * hw,
                    pa + static_cast<int64_t>(bi) * Ca * hw, sizeof(double) * Ca * hw);
        std::memcpy(po + (static_cast<int64_t>(bi) * (Ca + Cb) + Ca) * hw,
                    pb + static_cast<int64_t>(bi) * Cb * hw, sizeof(double) * Cb * hw);
    }
    bool needs = a.requires_grad() || b.requires_grad();
    mark(out, needs);
    if (tracked(needs)) {
        Tape::active()->record(out, [a, b, out, B, Ca, Cb, hw]() mutable {
            if (!out.has_grad()) return;
            const double* go = out.grad_vec().data();
            for (int bi = 0; bi < B; ++bi) {
                if (a.requires_grad()) {
                    double* ga = a.grad();
                    const double* src = go + static_cast<int64_t>(bi) * (Ca + Cb) * hw;
                    double* dst = ga + static_cast<int64_t>(bi) * Ca * hw;
                    for (int64_t i = 0; i < Ca * hw; ++i) dst[i] += src[i];
                }
                if (b.requires_grad()) {
                    double* gb = b.grad();
                    const double* src = go + (static_cast<int64_t>(bi) * (Ca + Cb) + Ca) * hw;
                    double* dst = gb + static_cast<int64_t>(bi) * Cb * hw;
                    for (int64_t i = 0; i < Cb * hw; ++i) dst[i] += src[i];
                }
            }
        });
    }
    return out;
}

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    const double* px = x.data();
    int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) acc += px[i];
    Tensor out = Tensor::scalar(acc);
    bool needs = x.requires_grad();
    mark(out, needs);
    if (tracked(needs)) {
        Tape::active()->record(out, [x, out]() mutable {
            if (!out.has_grad()) return;
            double g = out.grad_vec()[0];
            double* gx = x.grad();
            int64_t n = x.numel();
            for (int64_t i = 0; i < n; ++i) gx[i] += g;
        });
    }
    return out;
}

Tensor pick(const Tensor& x, int64_t flat_index) {
    if (flat_index < 0 || flat_index >= x.numel())
        throw LookupError("pick: index " + std::to_string(flat_index) + " out of range");
    Tensor out = Tensor::scalar(x.data()[flat_index]);
    bool needs = x.requires_grad();
    mark(out, needs);
    if (tracked(needs)) {
        Tape::active()->record(out, [x, out, flat_index]() mutable {
            if (!out.has_grad()) return;
            x.grad()[flat_index] += out.grad_vec()[0];
        });
    }
    return out;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.ndim() != 2)
        throw ShapeError("cross_entropy: expected [B,K], got " + shape_str(logits.shape()));
    int B = logits.dim(0), K = logits.dim(1);
    if (static_cast<int>(labels.size()) != B)
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
                         std::to_string(B));
    for (int y : labels)
        if (y < 0 || y >= K)
            throw ConfigError("cross_entropy: label " + std::to_string(y) + " outside [0," +
                              std::to_string(K) + ")");
    // keep softmax probabilities for the backward pass
    auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(B) * K);
    const double* pl = logits.data();
    double loss = 0.0;
    for (int b = 0; b < B; ++b) {
        const double* row = pl + static_cast<int64_t>(b) * K;
        double m = row[0];
        for (int k = 1; k < K; ++k) m = std::max(m, row[k]);
        double z = 0.0;
        for (int k = 0; k < K; ++k) z += std::exp(row[k] - m);
        double lse = m + std::log(z);
        loss += lse - row[labels[b]];
        for (int k = 0; k < K; ++k)
            (*probs)[static_cast<size_t>(b) * K + k] = std::exp(row[k] - lse);
    }
    loss /= B;
    Tensor out = Tensor::scalar(loss);
    bool needs = logits.requires_grad();
    mark(out, needs);
    if (tracked(needs)) {
        auto lab = std::make_shared<std::vector<int>>(labels);
        Tape::active()->record(out, [logits, out, probs, lab, B, K]() mutable {
            if (!out.has_grad()) return;
            double g = out.grad_vec()[0] / B;
            double* gl = logits.grad();
            for (int b = 0; b < B; ++b) {
                for (int k = 0; k < K; ++k)
                    gl[static_cast<int64_t>(b) * K + k] +=
                        g * (*probs)[static_cast<size_t>(b) * K + k];
                gl[static_cast<int64_t>(b) * K + (*lab)[b]] -= g;
            }
        });
    }
    return out;
}

namespace {

void check_mask_batch(const Tensor& probs, const std::vector<LayerMask>& targets,
                      const char* op) {
    require_4d(probs, op);
    int B = probs.dim(0), C = probs.dim(1), H = probs.dim(2), W = probs.dim(3);
    if (static_cast<int>(targets.size()) != B)
        throw ShapeError(std::string(op) + ": " + std::to_string(targets.size()) +
                         " masks for batch " + std::to_string(B));
    for (const auto& m : targets) {
        if (m.height != H || m.width != W)
            throw ShapeError(std::string(op) + ": mask size mismatch");
        if (m.layer_count + 1 != C)
            throw ShapeError(std::string(op) + ": mask has " + std::to_string(m.layer_count + 1) +
                             " classes, prediction has " + std::to_string(C));
    }
}

constexpr double kLogFloor = 1e-300;

}  // namespace

Tensor pixel_nll(const Tensor& probs, const std::vector<LayerMask>& targets) {
    check_mask_batch(probs, targets, "pixel_nll");
    int B = probs.dim(0), C = probs.dim(1), H = probs.dim(2), W = probs.dim(3);
    int64_t hw = static_cast<int64_t>(H) * W;
    const double* pp = probs.data();
    double loss = 0.0;
    for (int b = 0; b < B; ++b) {
        int64_t base = static_cast<int64_t>(b) * C * hw;
        const auto& m = targets[b];
        for (int64_t p = 0; p < hw; ++p) {
            double v = pp[base + static_cast<int64_t>(m.labels[p]) * hw + p];
            loss -= std::log(std::max(v, kLogFloor));
        }
    }
    double denom = static_cast<double>(B) * hw;
    loss /= denom;
    Tensor out = Tensor::scalar(loss);
    bool needs = probs.requires_grad();
    mark(out, needs);
    if (tracked(needs)) {
        auto tgt = std::make_shared<std::vector<LayerMask>>(targets);
        Tape::active()->record(out, [probs, out, tgt, B, C, hw, denom]() mutable {
            if (!out.has_grad()) return;
            double g = out.grad_vec()[0] / denom;
            const double* pp = probs.data();
            double* gp = probs.grad();
            for (int b = 0; b < B; ++b) {
                int64_t base = static_cast<int64_t>(b) * C * hw;
                const auto& m = (*tgt)[b];
                for (int64_t p = 0; p < hw; ++p) {
                    int64_t idx = base + static_cast<int64_t>(m.labels[p]) * hw + p;
                    double v = std::max(pp[idx], kLogFloor);
                    gp[idx] -= g / v;
                }
            }
        });
    }
    return out;
}

Tensor dice_loss(const Tensor& probs, const std::vector<LayerMask>& targets) {
    check_mask_batch(probs, targets, "dice_loss");
    int B = probs.dim(0), C = probs.dim(1), H = probs.dim(2), W = probs.dim(3);
    int64_t hw = static_cast<int64_t>(H) * W;
    constexpr double eps = 1e-6;
    const double* pp = probs.data();
    // per-(sample, class) soft Dice, averaged over both
    auto inter = std::make_shared<std::vector<double>>(static_cast<size_t>(B) * C, 0.0);
    auto psum = std::make_shared<std::vector<double>>(static_cast<size_t>(B) * C, 0.0);
    auto tsum = std::make_shared<std::vector<double>>(static_cast<size_t>(B) * C, 0.0);
    for (int b = 0; b < B; ++b) {
        const auto& m = targets[b];
        for (int c = 0; c < C; ++c) {
            const double* plane = pp + (static_cast<int64_t>(b) * C + c) * hw;
            double i_acc = 0.0, p_acc = 0.0;
            int64_t t_cnt = 0;
            for (int64_t p = 0; p < hw; ++p) {
                p_acc += plane[p];
                if (m.labels[p] == c) {
                    i_acc += plane[p];
                    ++t_cnt;
                }
            }
            (*inter)[static_cast<size_t>(b) * C + c] = i_acc;
            (*psum)[static_cast<size_t>(b) * C + c] = p_acc;
            (*tsum)[static_cast<size_t>(b) * C + c] = static_cast<double>(t_cnt);
        }
    }
    double dice_mean = 0.0;
    for (size_t i = 0; i < inter->size(); ++i)
        dice_mean += (2.0 * (*inter)[i] + eps) / ((*psum)[i] + (*tsum)[i] + eps);
    dice_mean /= static_cast<double>(B * C);
    Tensor out = Tensor::scalar(1.0 - dice_mean);
    bool needs = probs.requires_grad();
    mark(out, needs);
    if (tracked(needs)) {
        auto tgt = std::make_shared<std::vector<LayerMask>>(targets);
        Tape::active()->record(out, [probs, out, tgt, inter, psum, tsum, B, C, hw]() mutable {
            if (!out.has_grad()) return;
            double g = out.grad_vec()[0] / static_cast<double>(B * C);
            double* gp = probs.grad();
            for (int b = 0; b < B; ++b) {
                const auto& m = (*tgt)[b];
                for (int c = 0; c < C; ++c) {
                    size_t bc = static_cast<size_t>(b) * C + c;
                    double num = 2.0 * (*inter)[bc] + eps;
                    double den = (*psum)[bc] + (*tsum)[bc] + eps;
                    // d(1 - num/den)/dp = -(2*t*den - num)/den^2
                    double inv_den = 1.0 / den;
                    double base_term = num * inv_den * inv_den;  // when t = 0
                    double hit_term = 2.0 * inv_den - base_term; // when t = 1
                    double* plane = gp + (static_cast<int64_t>(b) * C + c) * hw;
                    for (int64_t p = 0; p < hw; ++p)
                        plane[p] -= g * (m.labels[p] == c ? hit_term : -base_term);
                }
            }
        });
    }
    return out;
}

Tensor dice_loss(const Tensor& probs, const LayerMask& target) {
    return dice_loss(probs, std::vector<LayerMask>{target});
}

LayerMask argmax_mask(const Tensor& probs, int b) {
    require_4d(probs, "argmax_mask");
    int B = probs.dim(0), C = probs.dim(1), H = probs.dim(2), W = probs.dim(3);
    if (b < 0 || b >= B) throw LookupError("argmax_mask: sample index out of range");
    LayerMask m(H, W, C - 1);
    int64_t hw = static_cast<int64_t>(H) * W;
    const double* pp = probs.data() + static_cast<int64_t>(b) * C * hw;
    for (int64_t p = 0; p < hw; ++p) {
        int best_c = 0;
        double best = pp[p];
        for (int c = 1; c < C; ++c) {
            double v = pp[c * hw + p];
            if (v > best) {
                best = v;
                best_c = c;
            }
        }
        m.labels[static_cast<size_t>(p)] = best_c;
    }
    return m;
}

}  // namespace sail
