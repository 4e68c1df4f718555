#pragma once

// Differentiable operations on grl::nn::Var.

#include <grl/tensor.hpp>

#include <cblas.h>

namespace grl::nn {

namespace detail {

/// C = op(A) * op(B) + beta * C, row-major. op(A) is M x K, op(B) is K x N.
inline void gemm(bool trans_a, bool trans_b, int M, int N, int K, const double* A, const double* B, double beta,
                 double* C) {
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans, M, N, K, 1.0,
                A, trans_a ? M : K, B, trans_b ? K : N, beta, C, N);
}

struct ConvGeometry {
    int cin, h, w;      // input plane
    int kh, kw;         // kernel
    int sh, sw;         // stride
    int ph, pw;         // zero padding
    int oh, ow;         // output plane

    static ConvGeometry make(int cin, int h, int w, int kh, int kw, int sh, int sw, int ph, int pw) {
        ConvGeometry g{cin, h, w, kh, kw, sh, sw, ph, pw, 0, 0};
        if (sh <= 0 || sw <= 0 || ph < 0 || pw < 0) throw ShapeError("conv: bad stride/padding");
        const int nh = h + 2 * ph - kh;
        const int nw = w + 2 * pw - kw;
        if (nh < 0 || nw < 0) throw ShapeError("conv: kernel larger than padded input");
        g.oh = nh / sh + 1;
        g.ow = nw / sw + 1;
        return g;
    }
    int rows() const { return cin * kh * kw; }
    int cols() const { return oh * ow; }
};

/// col[(ci*kh + y)*kw + x][oy*ow + ox] = in[ci][oy*sh - ph + y][ox*sw - pw + x]
inline void im2col(const ConvGeometry& g, const double* in, double* col) {
    for (int ci = 0; ci < g.cin; ++ci)
        for (int y = 0; y < g.kh; ++y)
            for (int x = 0; x < g.kw; ++x) {
                double* dst = col + static_cast<std::size_t>((ci * g.kh + y) * g.kw + x) * g.cols();
                const double* plane = in + static_cast<std::size_t>(ci) * g.h * g.w;
                for (int oy = 0; oy < g.oh; ++oy) {
                    const int iy = oy * g.sh - g.ph + y;
                    double* d = dst + static_cast<std::size_t>(oy) * g.ow;
                    if (iy < 0 || iy >= g.h) {
                        std::fill(d, d + g.ow, 0.0);
                        continue;
                    }
                    const double* src = plane + static_cast<std::size_t>(iy) * g.w;
                    for (int ox = 0; ox < g.ow; ++ox) {
                        const int ix = ox * g.sw - g.pw + x;
                        d[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0;
                    }
                }
            }
}

/// Adjoint of im2col: scatters columns back onto the (zeroed) input plane.
inline void col2im(const ConvGeometry& g, const double* col, double* in) {
    for (int ci = 0; ci < g.cin; ++ci)
        for (int y = 0; y < g.kh; ++y)
            for (int x = 0; x < g.kw; ++x) {
                const double* src = col + static_cast<std::size_t>((ci * g.kh + y) * g.kw + x) * g.cols();
                double* plane = in + static_cast<std::size_t>(ci) * g.h * g.w;
                for (int oy = 0; oy < g.oh; ++oy) {
                    const int iy = oy * g.sh - g.ph + y;
                    if (iy < 0 || iy >= g.h) continue;
                    const double* s = src + static_cast<std::size_t>(oy) * g.ow;
                    double* d = plane + static_cast<std::size_t>(iy) * g.w;
                    for (int ox = 0; ox < g.ow; ++ox) {
                        const int ix = ox * g.sw - g.pw + x;
                        if (ix >= 0 && ix < g.w) d[ix] += s[ox];
                    }
                }
            }
}

inline void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (!(a.shape() == b.shape()))
        throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
}

template <class F, class DF>
Var unary(const Var& x, const char* op, F f, DF df) {
    Tensor out(x.shape());
    auto xi = x.value().data();
    auto o = out.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(xi[i]);
    return make_result(std::move(out), {x}, op, [df](Node& self) {
        Node& in = *self.inputs[0];
        if (!in.requires_grad) return;
        auto xi = in.value.data();
        auto yo = self.value.data();
        auto go = self.grad.data();
        auto gi = in.ensure_grad().data();
        for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += go[i] * df(xi[i], yo[i]);
    });
}

}  // namespace detail

/// Cross-correlation. x: [N, Cin, H, W]; weight: [Cout, Cin, KH, KW]; bias: [1, Cout, 1, 1] or undefined.
inline Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride_h, int stride_w, int pad_h, int pad_w) {
    const Shape xs = x.shape();
    const Shape ws = weight.shape();
    if (ws.c != xs.c) throw ShapeError("conv2d: input channels " + xs.str() + " vs kernel " + ws.str());
    if (bias.defined() && !(bias.shape() == Shape{1, ws.n, 1, 1})) throw ShapeError("conv2d: bias shape");
    const auto g = detail::ConvGeometry::make(xs.c, xs.h, xs.w, ws.h, ws.w, stride_h, stride_w, pad_h, pad_w);
    const int cout = ws.n;
    Tensor out(Shape{xs.n, cout, g.oh, g.ow});
    std::vector<double> col(static_cast<std::size_t>(g.rows()) * g.cols());
    for (int n = 0; n < xs.n; ++n) {
        detail::im2col(g, x.value().ptr() + static_cast<std::size_t>(n) * xs.c * xs.h * xs.w, col.data());
        double* o = out.ptr() + static_cast<std::size_t>(n) * cout * g.cols();
        if (bias.defined())
            for (int co = 0; co < cout; ++co)
                std::fill(o + static_cast<std::size_t>(co) * g.cols(), o + static_cast<std::size_t>(co + 1) * g.cols(),
                          bias.value()[co]);
        detail::gemm(false, false, cout, g.cols(), g.rows(), weight.value().ptr(), col.data(), 1.0, o);
    }
    std::vector<Var> inputs{x, weight};
    if (bias.defined()) inputs.push_back(bias);
    return detail::make_result(std::move(out), std::move(inputs), "conv2d", [g, cout, has_bias = bias.defined()](Node& self) {
        Node& xin = *self.inputs[0];
        Node& win = *self.inputs[1];
        const Shape xs = xin.value.shape();
        const int R = g.rows(), C = g.cols();
        std::vector<double> col(static_cast<std::size_t>(R) * C);
        for (int n = 0; n < xs.n; ++n) {
            const double* go = self.grad.ptr() + static_cast<std::size_t>(n) * cout * C;
            if (win.requires_grad) {
                detail::im2col(g, xin.value.ptr() + static_cast<std::size_t>(n) * xs.c * xs.h * xs.w, col.data());
                detail::gemm(false, true, cout, R, C, go, col.data(), 1.0, win.ensure_grad().ptr());
            }
            if (xin.requires_grad) {
                detail::gemm(true, false, R, C, cout, win.value.ptr(), go, 0.0, col.data());
                detail::col2im(g, col.data(), xin.ensure_grad().ptr() + static_cast<std::size_t>(n) * xs.c * xs.h * xs.w);
            }
            if (has_bias) {
                Node& bin = *self.inputs[2];
                if (bin.requires_grad) {
                    double* gb = bin.ensure_grad().ptr();
                    for (int co = 0; co < cout; ++co) {
                        const double* row = go + static_cast<std::size_t>(co) * C;
                        double s = 0.0;
                        for (int i = 0; i < C; ++i) s += row[i];
                        gb[co] += s;
                    }
                }
            }
        }
    });
}

/// 1D cross-correlation along the width axis. x: [N, Cin, 1, L]; weight: [Cout, Cin, 1, K].
inline Var conv1d(const Var& x, const Var& weight, const Var& bias, int stride, int pad) {
    if (x.shape().h != 1 || weight.shape().h != 1) throw ShapeError("conv1d: height must be 1");
    return conv2d(x, weight, bias, 1, stride, 0, pad);
}

/// Transposed convolution (adjoint of conv2d w.r.t. its input).
/// x: [N, Cin, H, W]; weight: [Cin, Cout, KH, KW]; output plane (H-1)*s - 2p + K.
inline Var conv_transpose2d(const Var& x, const Var& weight, const Var& bias, int stride_h, int stride_w, int pad_h,
                            int pad_w) {
    const Shape xs = x.shape();
    const Shape ws = weight.shape();
    if (ws.n != xs.c) throw ShapeError("conv_transpose2d: input channels " + xs.str() + " vs kernel " + ws.str());
    const int cout = ws.c;
    const int oh = (xs.h - 1) * stride_h - 2 * pad_h + ws.h;
    const int ow = (xs.w - 1) * stride_w - 2 * pad_w + ws.w;
    if (oh <= 0 || ow <= 0) throw ShapeError("conv_transpose2d: empty output");
    if (bias.defined() && !(bias.shape() == Shape{1, cout, 1, 1})) throw ShapeError("conv_transpose2d: bias shape");
    // The output plane is the input plane of the equivalent forward conv.
    const auto g = detail::ConvGeometry::make(cout, oh, ow, ws.h, ws.w, stride_h, stride_w, pad_h, pad_w);
    if (g.oh != xs.h || g.ow != xs.w) throw ShapeError("conv_transpose2d: inconsistent geometry");
    const int R = g.rows(), C = g.cols(), cin = xs.c;
    Tensor out(Shape{xs.n, cout, oh, ow});
    std::vector<double> col(static_cast<std::size_t>(R) * C);
    for (int n = 0; n < xs.n; ++n) {
        detail::gemm(true, false, R, C, cin, weight.value().ptr(), x.value().ptr() + static_cast<std::size_t>(n) * cin * C,
                     0.0, col.data());
        double* o = out.ptr() + static_cast<std::size_t>(n) * cout * oh * ow;
        detail::col2im(g, col.data(), o);
        if (bias.defined())
            for (int co = 0; co < cout; ++co)
                for (int i = 0; i < oh * ow; ++i) o[static_cast<std::size_t>(co) * oh * ow + i] += bias.value()[co];
    }
    std::vector<Var> inputs{x, weight};
    if (bias.defined()) inputs.push_back(bias);
    return detail::make_result(std::move(out), std::move(inputs), "conv_transpose2d", [g, cin, cout, has_bias = bias.defined()](Node& self) {
        Node& xin = *self.inputs[0];
        Node& win = *self.inputs[1];
        const Shape xs = xin.value.shape();
        const int R = g.rows(), C = g.cols();
        const std::size_t out_plane = static_cast<std::size_t>(g.h) * g.w;
        std::vector<double> col(static_cast<std::size_t>(R) * C);
        for (int n = 0; n < xs.n; ++n) {
            const double* go = self.grad.ptr() + static_cast<std::size_t>(n) * cout * out_plane;
            detail::im2col(g, go, col.data());
            if (xin.requires_grad)
                detail::gemm(false, false, cin, C, R, win.value.ptr(), col.data(), 1.0,
                             xin.ensure_grad().ptr() + static_cast<std::size_t>(n) * cin * C);
            if (win.requires_grad)
                detail::gemm(false, true, cin, R, C, xin.value.ptr() + static_cast<std::size_t>(n) * cin * C, col.data(),
                             1.0, win.ensure_grad().ptr());
            if (has_bias) {
                Node& bin = *self.inputs[2];
                if (bin.requires_grad) {
                    double* gb = bin.ensure_grad().ptr();
                    for (int co = 0; co < cout; ++co) {
                        double s = 0.0;
                        for (std::size_t i = 0; i < out_plane; ++i) s += go[co * out_plane + i];
                        gb[co] += s;
                    }
                }
            }
        }
    });
}

inline Var leaky_relu(const Var& x, double alpha = 0.2) {
    return detail::unary(
        x, "leaky_relu", [alpha](double v) { return v > 0.0 ? v : alpha * v; },
        [alpha](double v, double) { return v > 0.0 ? 1.0 : alpha; });
}

inline Var relu(const Var& x) {
    return detail::unary(
        x, "relu", [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Var tanh(const Var& x) {
    return detail::unary(
        x, "tanh", [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var sigmoid(const Var& x) {
    return detail::unary(
        x, "sigmoid",
        [](double v) { return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); },
        [](double, double y) { return y * (1.0 - y); });
}

/// a * x + b, element-wise with scalar constants.
inline Var affine(const Var& x, double a, double b) {
    return detail::unary(
        x, "affine", [a, b](double v) { return a * v + b; }, [a](double, double) { return a; });
}

inline Var add(const Var& a, const Var& b) {
    detail::require_same_shape(a, b, "add");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
    return detail::make_result(std::move(out), {a, b}, "add", [](Node& self) {
        detail::accumulate(*self.inputs[0], self.grad);
        detail::accumulate(*self.inputs[1], self.grad);
    });
}

/// Normalizes every (batch, channel) plane to zero mean and unit variance;
/// output variance is var / (var + eps).
inline Var instance_norm(const Var& x, double eps = 1e-5) {
    const Shape s = x.shape();
    const std::size_t P = s.plane();
    const std::size_t planes = static_cast<std::size_t>(s.n) * s.c;
    Tensor out(s);
    std::vector<double> inv_std(planes);
    for (std::size_t p = 0; p < planes; ++p) {
        const double* xi = x.value().ptr() + p * P;
        double mean = 0.0;
        for (std::size_t i = 0; i < P; ++i) mean += xi[i];
        mean /= static_cast<double>(P);
        double var = 0.0;
        for (std::size_t i = 0; i < P; ++i) var += (xi[i] - mean) * (xi[i] - mean);
        var /= static_cast<double>(P);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[p] = is;
        double* o = out.ptr() + p * P;
        for (std::size_t i = 0; i < P; ++i) o[i] = (xi[i] - mean) * is;
    }
    return detail::make_result(std::move(out), {x}, "instance_norm", [inv_std = std::move(inv_std), P](Node& self) {
        Node& in = *self.inputs[0];
        if (!in.requires_grad) return;
        double* gi = in.ensure_grad().ptr();
        const double n = static_cast<double>(P);
        for (std::size_t p = 0; p < inv_std.size(); ++p) {
            const double* y = self.value.ptr() + p * P;
            const double* g = self.grad.ptr() + p * P;
            double sg = 0.0, sgy = 0.0;
            for (std::size_t i = 0; i < P; ++i) {
                sg += g[i];
                sgy += g[i] * y[i];
            }
            for (std::size_t i = 0; i < P; ++i) gi[p * P + i] += inv_std[p] * (g[i] - sg / n - y[i] * sgy / n);
        }
    });
}

/// Nearest-neighbour upsampling by integer factors along height and width.
inline Var upsample(const Var& x, int fh, int fw) {
    const Shape s = x.shape();
    const Shape os{s.n, s.c, s.h * fh, s.w * fw};
    Tensor out(os);
    const std::size_t planes = static_cast<std::size_t>(s.n) * s.c;
    for (std::size_t p = 0; p < planes; ++p)
        for (int y = 0; y < os.h; ++y)
            for (int xx = 0; xx < os.w; ++xx)
                out[p * os.plane() + static_cast<std::size_t>(y) * os.w + xx] =
                    x.value()[p * s.plane() + static_cast<std::size_t>(y / fh) * s.w + xx / fw];
    return detail::make_result(std::move(out), {x}, "upsample", [s, os, fh, fw](Node& self) {
        Node& in = *self.inputs[0];
        if (!in.requires_grad) return;
        double* gi = in.ensure_grad().ptr();
        const std::size_t planes = static_cast<std::size_t>(s.n) * s.c;
        for (std::size_t p = 0; p < planes; ++p)
            for (int y = 0; y < os.h; ++y)
                for (int xx = 0; xx < os.w; ++xx)
                    gi[p * s.plane() + static_cast<std::size_t>(y / fh) * s.w + xx / fw] +=
                        self.grad[p * os.plane() + static_cast<std::size_t>(y) * os.w + xx];
    });
}

inline Var upsample2x(const Var& x) { return upsample(x, x.shape().h == 1 ? 1 : 2, 2); }

/// Average pooling over non-overlapping fh x fw blocks.
inline Var avg_pool(const Var& x, int fh, int fw) {
    const Shape s = x.shape();
    if (s.h % fh != 0 || s.w % fw != 0) throw ShapeError("avg_pool: plane " + s.str() + " not divisible");
    const Shape os{s.n, s.c, s.h / fh, s.w / fw};
    const double scale = 1.0 / (fh * fw);
    Tensor out(os);
    const std::size_t planes = static_cast<std::size_t>(s.n) * s.c;
    for (std::size_t p = 0; p < planes; ++p)
        for (int y = 0; y < s.h; ++y)
            for (int xx = 0; xx < s.w; ++xx)
                out[p * os.plane() + static_cast<std::size_t>(y / fh) * os.w + xx / fw] +=
                    scale * x.value()[p * s.plane() + static_cast<std::size_t>(y) * s.w + xx];
    return detail::make_result(std::move(out), {x}, "avg_pool", [s, os, fh, fw, scale](Node& self) {
        Node& in = *self.inputs[0];
        if (!in.requires_grad) return;
        double* gi = in.ensure_grad().ptr();
        const std::size_t planes = static_cast<std::size_t>(s.n) * s.c;
        for (std::size_t p = 0; p < planes; ++p)
            for (int y = 0; y < s.h; ++y)
                for (int xx = 0; xx < s.w; ++xx)
                    gi[p * s.plane() + static_cast<std::size_t>(y) * s.w + xx] +=
                        scale * self.grad[p * os.plane() + static_cast<std::size_t>(y / fh) * os.w + xx / fw];
    });
}

inline Var downsample2x(const Var& x) { return avg_pool(x, x.shape().h == 1 ? 1 : 2, 2); }

/// Concatenates along the channel axis.
inline Var concat_channels(const Var& a, const Var& b) {
    const Shape sa = a.shape(), sb = b.shape();
    if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w)
        throw ShapeError("concat_channels: " + sa.str() + " vs " + sb.str());
    const Shape os{sa.n, sa.c + sb.c, sa.h, sa.w};
    Tensor out(os);
    const std::size_t P = sa.plane();
    for (int n = 0; n < sa.n; ++n) {
        std::copy_n(a.value().ptr() + static_cast<std::size_t>(n) * sa.c * P, sa.c * P,
                    out.ptr() + static_cast<std::size_t>(n) * os.c * P);
        std::copy_n(b.value().ptr() + static_cast<std::size_t>(n) * sb.c * P, sb.c * P,
                    out.ptr() + (static_cast<std::size_t>(n) * os.c + sa.c) * P);
    }
    return detail::make_result(std::move(out), {a, b}, "concat", [sa, sb, os, P](Node& self) {
        Node& ia = *self.inputs[0];
        Node& ib = *self.inputs[1];
        for (int n = 0; n < sa.n; ++n) {
            const double* g = self.grad.ptr() + static_cast<std::size_t>(n) * os.c * P;
            if (ia.requires_grad) {
                double* d = ia.ensure_grad().ptr() + static_cast<std::size_t>(n) * sa.c * P;
                for (std::size_t i = 0; i < sa.c * P; ++i) d[i] += g[i];
            }
            if (ib.requires_grad) {
                double* d = ib.ensure_grad().ptr() + static_cast<std::size_t>(n) * sb.c * P;
                for (std::size_t i = 0; i < sb.c * P; ++i) d[i] += g[sa.c * P + i];
            }
        }
    });
}

/// [N, C, H, W] -> [N, C, 1, 1]
inline Var global_avg_pool(const Var& x) {
    const Shape s = x.shape();
    return avg_pool(x, s.h, s.w);
}

/// Fully connected layer on [N, F, 1, 1] features; weight [Out, F, 1, 1].
inline Var linear(const Var& x, const Var& weight, const Var& bias) {
    if (x.shape().h != 1 || x.shape().w != 1) throw ShapeError("linear: expects [N, F, 1, 1]");
    return conv2d(x, weight, bias, 1, 1, 0, 0);
}

inline Var mean(const Var& x) {
    double s = 0.0;
    for (double v : x.value().data()) s += v;
    const double n = static_cast<double>(x.value().size());
    return detail::make_result(Tensor(Shape{}, {s / n}), {x}, "mean", [n](Node& self) {
        Node& in = *self.inputs[0];
        if (!in.requires_grad) return;
        const double g = self.grad[0] / n;
        for (double& v : in.ensure_grad().data()) v += g;
    });
}

inline Var scale(const Var& x, double s) { return affine(x, s, 0.0); }

/// sum_i w_i * x_i with constant weights.
inline Var weighted_sum(const Var& x, const Tensor& w) {
    if (!(x.shape() == w.shape())) throw ShapeError("weighted_sum: shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * x.value()[i];
    return detail::make_result(Tensor(Shape{}, {s}), {x}, "weighted_sum", [w](Node& self) {
        Node& in = *self.inputs[0];
        if (!in.requires_grad) return;
        auto gi = in.ensure_grad().data();
        for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += self.grad[0] * w[i];
    });
}

inline Var add_scalars(const Var& a, const Var& b) {
    if (a.value().size() != 1 || b.value().size() != 1) throw ShapeError("add_scalars: non-scalar input");
    return add(a, b);
}

// Losses ---------------------------------------------------------------

inline constexpr double kProbFloor = 1e-12;

/// Mean binary cross-entropy of probabilities `pred` against a constant target tensor.
inline Var bce(const Var& pred, const Tensor& target) {
    if (!(pred.shape() == target.shape())) throw ShapeError("bce: shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) {
        const double p = pred.value()[i];
        const double t = target[i];
        if (!(p >= 0.0 && p <= 1.0)) throw std::domain_error("bce: prediction outside [0, 1]");
        if (!(t >= 0.0 && t <= 1.0)) throw std::domain_error("bce: target outside [0, 1]");
        const double pc = std::clamp(p, kProbFloor, 1.0 - kProbFloor);
        s -= t * std::log(pc) + (1.0 - t) * std::log(1.0 - pc);
    }
    const double n = static_cast<double>(target.size());
    return detail::make_result(Tensor(Shape{}, {s / n}), {pred}, "bce", [target, n](Node& self) {
        Node& in = *self.inputs[0];
        if (!in.requires_grad) return;
        auto gi = in.ensure_grad().data();
        const double g = self.grad[0] / n;
        for (std::size_t i = 0; i < gi.size(); ++i) {
            const double pc = std::clamp(in.value[i], kProbFloor, 1.0 - kProbFloor);
            const double t = target[i];
            gi[i] += g * (-(t / pc) + (1.0 - t) / (1.0 - pc));
        }
    });
}

inline Var bce(const Var& pred, double target) { return bce(pred, Tensor(pred.shape(), target)); }

/// Mean absolute difference. The subgradient at a == b is 0.
inline Var l1(const Var& a, const Var& b) {
    detail::require_same_shape(a, b, "l1");
    double s = 0.0;
    for (std::size_t i = 0; i < a.value().size(); ++i) s += std::abs(a.value()[i] - b.value()[i]);
    const double n = static_cast<double>(a.value().size());
    return detail::make_result(Tensor(Shape{}, {s / n}), {a, b}, "l1", [n](Node& self) {
        Node& ia = *self.inputs[0];
        Node& ib = *self.inputs[1];
        const double g = self.grad[0] / n;
        for (std::size_t i = 0; i < ia.value.size(); ++i) {
            const double d = ia.value[i] - ib.value[i];
            const double sg = d > 0.0 ? g : (d < 0.0 ? -g : 0.0);
            if (ia.requires_grad) ia.ensure_grad()[i] += sg;
            if (ib.requires_grad) ib.ensure_grad()[i] -= sg;
        }
    });
}

struct CganWeights {
    double gan = 1.0;
    double l1 = 100.0;
};

/// gan * BCE(D(x, G(x)), 1) + l1 * L1(G(x), y)
inline Var cgan_generator_loss(const Var& d_on_fake, const Var& fake, const Var& target, CganWeights w = {}) {
    return add(scale(bce(d_on_fake, 1.0), w.gan), scale(l1(fake, target), w.l1));
}

/// 0.5 * [BCE(D(x, y), 1) + BCE(D(x, G(x)), 0)]
inline Var cgan_discriminator_loss(const Var& d_on_real, const Var& d_on_fake) {
    return scale(add(bce(d_on_real, 1.0), bce(d_on_fake, 0.0)), 0.5);
}

}  // namespace grl::nn
