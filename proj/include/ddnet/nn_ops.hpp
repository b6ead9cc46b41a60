#pragma once

// Spatial operators: convolution, transposed convolution, pooling,
// batch normalization, bilinear upsampling. Convolutions are computed
// via im2col + a small row-major GEMM; backward rules reuse the same
// kernels, so the transposed convolution is the exact adjoint of the
// forward convolution.

#include <array>
#include <cstdint>

#include "ddnet/tensor.hpp"

namespace ddnet {

struct ConvSpec {
    int in_channels = 0;
    int out_channels = 0;
    int kh = 1, kw = 1;
    int sh = 1, sw = 1;
    int ph = 0, pw = 0;
    int dh = 1, dw = 1;
    bool has_bias = true;

    int out_h(int h) const { return (h + 2 * ph - dh * (kh - 1) - 1) / sh + 1; }
    int out_w(int w) const { return (w + 2 * pw - dw * (kw - 1) - 1) / sw + 1; }

    // transposed-convolution output size for an input of (h, w)
    int tout_h(int h) const { return (h - 1) * sh - 2 * ph + dh * (kh - 1) + 1; }
    int tout_w(int w) const { return (w - 1) * sw - 2 * pw + dw * (kw - 1) + 1; }

    static ConvSpec k1(int in, int out, bool bias = true) {
        return ConvSpec{in, out, 1, 1, 1, 1, 0, 0, 1, 1, bias};
    }
    static ConvSpec k3(int in, int out, int stride = 1, int pad = 1,
                       int dilation = 1, bool bias = true) {
        return ConvSpec{in,  out, 3,        3,        stride, stride,
                        pad, pad, dilation, dilation, bias};
    }
};

namespace detail {

// C(M,N) = A(M,K) * B(K,N), row-major. accumulate: C += instead of C =.
template <typename T>
void gemm_nn(int M, int N, int K, const T* A, const T* B, T* C,
             bool accumulate) {
    if (!accumulate) std::fill(C, C + static_cast<std::size_t>(M) * N, T(0));
    for (int i = 0; i < M; ++i) {
        T* c = C + static_cast<std::size_t>(i) * N;
        const T* a = A + static_cast<std::size_t>(i) * K;
        for (int k = 0; k < K; ++k) {
            const T aik = a[k];
            const T* b = B + static_cast<std::size_t>(k) * N;
            for (int j = 0; j < N; ++j) c[j] += aik * b[j];
        }
    }
}

// C(M,N) = A^T * B where A is (K,M), B is (K,N).
template <typename T>
void gemm_tn(int M, int N, int K, const T* A, const T* B, T* C,
             bool accumulate) {
    if (!accumulate) std::fill(C, C + static_cast<std::size_t>(M) * N, T(0));
    for (int k = 0; k < K; ++k) {
        const T* a = A + static_cast<std::size_t>(k) * M;
        const T* b = B + static_cast<std::size_t>(k) * N;
        for (int i = 0; i < M; ++i) {
            const T aki = a[i];
            T* c = C + static_cast<std::size_t>(i) * N;
            for (int j = 0; j < N; ++j) c[j] += aki * b[j];
        }
    }
}

// C(M,N) = A * B^T where A is (M,K), B is (N,K).
template <typename T>
void gemm_nt(int M, int N, int K, const T* A, const T* B, T* C,
             bool accumulate) {
    for (int i = 0; i < M; ++i) {
        const T* a = A + static_cast<std::size_t>(i) * K;
        T* c = C + static_cast<std::size_t>(i) * N;
        for (int j = 0; j < N; ++j) {
            const T* b = B + static_cast<std::size_t>(j) * K;
            T acc = T(0);
            for (int k = 0; k < K; ++k) acc += a[k] * b[k];
            if (accumulate)
                c[j] += acc;
            else
                c[j] = acc;
        }
    }
}

struct ConvGeom {
    int c, h, w;        // source plane stack
    int kh, kw, sh, sw, ph, pw, dh, dw;
    int oh, ow;         // sliding-window output size
};

// cols: (c*kh*kw) x (oh*ow), zero-padded reads outside the source.
template <typename T>
void im2col(const T* src, const ConvGeom& g, T* cols) {
    const int ohw = g.oh * g.ow;
    for (int c = 0; c < g.c; ++c) {
        const T* plane = src + static_cast<std::size_t>(c) * g.h * g.w;
        for (int ky = 0; ky < g.kh; ++ky) {
            for (int kx = 0; kx < g.kw; ++kx) {
                T* row = cols +
                         (static_cast<std::size_t>(c) * g.kh * g.kw +
                          ky * g.kw + kx) *
                             ohw;
                for (int oy = 0; oy < g.oh; ++oy) {
                    const int iy = oy * g.sh - g.ph + ky * g.dh;
                    if (iy < 0 || iy >= g.h) {
                        std::fill(row + oy * g.ow, row + (oy + 1) * g.ow, T(0));
                        continue;
                    }
                    const T* srow = plane + static_cast<std::size_t>(iy) * g.w;
                    T* drow = row + oy * g.ow;
                    for (int ox = 0; ox < g.ow; ++ox) {
                        const int ix = ox * g.sw - g.pw + kx * g.dw;
                        drow[ox] = (ix >= 0 && ix < g.w) ? srow[ix] : T(0);
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: scatter-accumulate cols back into the source layout.
template <typename T>
void col2im_accum(const T* cols, const ConvGeom& g, T* dst) {
    const int ohw = g.oh * g.ow;
    for (int c = 0; c < g.c; ++c) {
        T* plane = dst + static_cast<std::size_t>(c) * g.h * g.w;
        for (int ky = 0; ky < g.kh; ++ky) {
            for (int kx = 0; kx < g.kw; ++kx) {
                const T* row = cols +
                               (static_cast<std::size_t>(c) * g.kh * g.kw +
                                ky * g.kw + kx) *
                                   ohw;
                for (int oy = 0; oy < g.oh; ++oy) {
                    const int iy = oy * g.sh - g.ph + ky * g.dh;
                    if (iy < 0 || iy >= g.h) continue;
                    T* srow = plane + static_cast<std::size_t>(iy) * g.w;
                    const T* drow = row + oy * g.ow;
                    for (int ox = 0; ox < g.ow; ++ox) {
                        const int ix = ox * g.sw - g.pw + kx * g.dw;
                        if (ix >= 0 && ix < g.w) srow[ix] += drow[ox];
                    }
                }
            }
        }
    }
}

template <typename T>
ConvGeom conv_geom(const ConvSpec& s, int h, int w) {
    return ConvGeom{s.in_channels, h,    w,    s.kh, s.kw, s.sh, s.sw,
                    s.ph,          s.pw, s.dh, s.dw, s.out_h(h), s.out_w(w)};
}

}  // namespace detail

// ---- conv2d -------------------------------------------------------------

template <typename T>
Tensor4<T> conv2d(Tape<T>* tape, const Tensor4<T>& x, const Tensor4<T>& weight,
                  const Tensor4<T>* bias, const ConvSpec& spec) {
    const Shape& xs = x.shape();
    if (xs.c != spec.in_channels)
        throw ShapeError("conv2d: input has " + std::to_string(xs.c) +
                         " channels, spec expects " +
                         std::to_string(spec.in_channels));
    if (weight.shape() !=
        Shape{spec.out_channels, spec.in_channels, spec.kh, spec.kw})
        throw ShapeError("conv2d: weight shape " + weight.shape().str() +
                         " does not match spec");
    const int oh = spec.out_h(xs.h), ow = spec.out_w(xs.w);
    if (oh < 1 || ow < 1)
        throw ShapeError("conv2d: non-positive output size for input " +
                         xs.str());
    if (spec.has_bias) {
        if (!bias || bias->shape() != Shape{1, spec.out_channels, 1, 1})
            throw ShapeError("conv2d: bias must be (1,out,1,1)");
    }

    const detail::ConvGeom g = detail::conv_geom<T>(spec, xs.h, xs.w);
    const int ck = spec.in_channels * spec.kh * spec.kw;
    const int ohw = oh * ow;
    Tensor4<T> out(Shape{xs.n, spec.out_channels, oh, ow});
    std::vector<T> cols(static_cast<std::size_t>(ck) * ohw);

    for (int n = 0; n < xs.n; ++n) {
        const T* xp = x.data().data() + x.index(n, 0, 0, 0);
        T* yp = out.data().data() + out.index(n, 0, 0, 0);
        detail::im2col(xp, g, cols.data());
        detail::gemm_nn(spec.out_channels, ohw, ck, weight.data().data(),
                        cols.data(), yp, false);
        if (spec.has_bias) {
            for (int o = 0; o < spec.out_channels; ++o) {
                const T b = bias->data()[o];
                T* row = yp + static_cast<std::size_t>(o) * ohw;
                for (int i = 0; i < ohw; ++i) row[i] += b;
            }
        }
    }

    bool needs = x.requires_grad() || weight.requires_grad() ||
                 (spec.has_bias && bias->requires_grad());
    if (tape && needs) {
        detail::mark_out(out);
        Tensor4<T> xc = x, wc = weight, oc = out;
        Tensor4<T> bc = spec.has_bias ? *bias : Tensor4<T>();
        tape->record([xc, wc, bc, oc, spec, g, ck, ohw]() mutable {
            const Shape& xs = xc.shape();
            std::vector<T> cols(static_cast<std::size_t>(ck) * ohw);
            std::vector<T> dcols;
            for (int n = 0; n < xs.n; ++n) {
                const T* gy = oc.grad().data() + oc.index(n, 0, 0, 0);
                if (wc.requires_grad()) {
                    detail::im2col(xc.data().data() + xc.index(n, 0, 0, 0), g,
                                   cols.data());
                    detail::gemm_nt(spec.out_channels, ck, ohw, gy, cols.data(),
                                    wc.grad().data(), true);
                }
                if (bc.defined() && bc.requires_grad()) {
                    auto& gb = bc.grad();
                    for (int o = 0; o < spec.out_channels; ++o) {
                        T acc = T(0);
                        const T* row = gy + static_cast<std::size_t>(o) * ohw;
                        for (int i = 0; i < ohw; ++i) acc += row[i];
                        gb[o] += acc;
                    }
                }
                if (xc.requires_grad()) {
                    dcols.assign(static_cast<std::size_t>(ck) * ohw, T(0));
                    detail::gemm_tn(ck, ohw, spec.out_channels,
                                    wc.data().data(), gy, dcols.data(), false);
                    detail::col2im_accum(dcols.data(), g,
                                         xc.grad().data() + xc.index(n, 0, 0, 0));
                }
            }
        });
    }
    return out;
}

// ---- transposed conv2d --------------------------------------------------
//
// Weight layout is (in_channels, out_channels, kh, kw). With the in/out
// roles swapped, the same weight array makes transposed_conv2d the exact
// adjoint of conv2d for matching kernel/stride/padding/dilation:
//   <conv2d(a, w), b> == <a, transposed_conv2d(b, w)>.

template <typename T>
Tensor4<T> transposed_conv2d(Tape<T>* tape, const Tensor4<T>& x,
                             const Tensor4<T>& weight, const ConvSpec& spec) {
    const Shape& xs = x.shape();
    if (xs.c != spec.in_channels)
        throw ShapeError("transposed_conv2d: input has " +
                         std::to_string(xs.c) + " channels, spec expects " +
                         std::to_string(spec.in_channels));
    if (weight.shape() !=
        Shape{spec.in_channels, spec.out_channels, spec.kh, spec.kw})
        throw ShapeError("transposed_conv2d: weight shape " +
                         weight.shape().str() + " does not match spec");
    const int oh = spec.tout_h(xs.h), ow = spec.tout_w(xs.w);
    if (oh < 1 || ow < 1)
        throw ShapeError("transposed_conv2d: non-positive output size");

    // geometry of the underlying forward convolution (out -> in)
    detail::ConvGeom g{spec.out_channels, oh,   ow,   spec.kh, spec.kw,
                       spec.sh,           spec.sw, spec.ph, spec.pw,
                       spec.dh,           spec.dw, xs.h,    xs.w};
    const int ck = spec.out_channels * spec.kh * spec.kw;
    const int ihw = xs.h * xs.w;
    Tensor4<T> out(Shape{xs.n, spec.out_channels, oh, ow});
    std::vector<T> cols(static_cast<std::size_t>(ck) * ihw);

    for (int n = 0; n < xs.n; ++n) {
        const T* xp = x.data().data() + x.index(n, 0, 0, 0);
        T* yp = out.data().data() + out.index(n, 0, 0, 0);
        // cols = W^T (ck x in) * X (in x ihw)
        detail::gemm_tn(ck, ihw, spec.in_channels, weight.data().data(), xp,
                        cols.data(), false);
        detail::col2im_accum(cols.data(), g, yp);
    }

    if (tape && (x.requires_grad() || weight.requires_grad())) {
        detail::mark_out(out);
        Tensor4<T> xc = x, wc = weight, oc = out;
        tape->record([xc, wc, oc, spec, g, ck, ihw]() mutable {
            const Shape& xs = xc.shape();
            std::vector<T> gcols(static_cast<std::size_t>(ck) * ihw);
            for (int n = 0; n < xs.n; ++n) {
                const T* gy = oc.grad().data() + oc.index(n, 0, 0, 0);
                detail::im2col(gy, g, gcols.data());
                if (xc.requires_grad())
                    detail::gemm_nn(spec.in_channels, ihw, ck,
                                    wc.data().data(), gcols.data(),
                                    xc.grad().data() + xc.index(n, 0, 0, 0),
                                    true);
                if (wc.requires_grad())
                    detail::gemm_nt(spec.in_channels, ck, ihw,
                                    xc.data().data() + xc.index(n, 0, 0, 0),
                                    gcols.data(), wc.grad().data(), true);
            }
        });
    }
    return out;
}

// ---- pooling ------------------------------------------------------------

template <typename T>
Tensor4<T> max_pool(Tape<T>* tape, const Tensor4<T>& x, int window,
                    int stride) {
    const Shape& xs = x.shape();
    if (window > xs.h || window > xs.w)
        throw ShapeError("max_pool: window larger than input " + xs.str());
    const int oh = (xs.h - window) / stride + 1;
    const int ow = (xs.w - window) / stride + 1;
    Tensor4<T> out(Shape{xs.n, xs.c, oh, ow});
    auto argmax = std::make_shared<std::vector<std::uint32_t>>(out.numel());

    std::size_t oi = 0;
    for (int n = 0; n < xs.n; ++n)
        for (int c = 0; c < xs.c; ++c)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox, ++oi) {
                    T best = x.at(n, c, oy * stride, ox * stride);
                    std::uint32_t best_idx = static_cast<std::uint32_t>(
                        x.index(n, c, oy * stride, ox * stride));
                    for (int ky = 0; ky < window; ++ky)
                        for (int kx = 0; kx < window; ++kx) {
                            const T v =
                                x.at(n, c, oy * stride + ky, ox * stride + kx);
                            // strict >: ties keep the first occurrence
                            if (v > best) {
                                best = v;
                                best_idx = static_cast<std::uint32_t>(x.index(
                                    n, c, oy * stride + ky, ox * stride + kx));
                            }
                        }
                    out.data()[oi] = best;
                    (*argmax)[oi] = best_idx;
                }

    if (tape && x.requires_grad()) {
        detail::mark_out(out);
        Tensor4<T> xc = x, oc = out;
        tape->record([xc, oc, argmax]() mutable {
            auto& gx = xc.grad();
            const auto& g = oc.grad();
            for (std::size_t i = 0; i < g.size(); ++i)
                gx[(*argmax)[i]] += g[i];
        });
    }
    return out;
}

template <typename T>
Tensor4<T> avg_pool(Tape<T>* tape, const Tensor4<T>& x, int window,
                    int stride) {
    const Shape& xs = x.shape();
    if (window > xs.h || window > xs.w)
        throw ShapeError("avg_pool: window larger than input " + xs.str());
    const int oh = (xs.h - window) / stride + 1;
    const int ow = (xs.w - window) / stride + 1;
    const T inv = T(1) / static_cast<T>(window * window);
    Tensor4<T> out(Shape{xs.n, xs.c, oh, ow});

    for (int n = 0; n < xs.n; ++n)
        for (int c = 0; c < xs.c; ++c)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    T acc = T(0);
                    for (int ky = 0; ky < window; ++ky)
                        for (int kx = 0; kx < window; ++kx)
                            acc += x.at(n, c, oy * stride + ky, ox * stride + kx);
                    out.at(n, c, oy, ox) = acc * inv;
                }

    if (tape && x.requires_grad()) {
        detail::mark_out(out);
        Tensor4<T> xc = x, oc = out;
        tape->record([xc, oc, window, stride, inv]() mutable {
            const Shape& os = oc.shape();
            for (int n = 0; n < os.n; ++n)
                for (int c = 0; c < os.c; ++c)
                    for (int oy = 0; oy < os.h; ++oy)
                        for (int ox = 0; ox < os.w; ++ox) {
                            const T g = oc.grad()[oc.index(n, c, oy, ox)] * inv;
                            for (int ky = 0; ky < window; ++ky)
                                for (int kx = 0; kx < window; ++kx)
                                    xc.grad()[xc.index(n, c, oy * stride + ky,
                                                       ox * stride + kx)] += g;
                        }
        });
    }
    return out;
}

// ---- batch norm ---------------------------------------------------------

enum class NormMode { train, eval };

template <typename T>
struct BatchNormState {
    Tensor4<T> gamma;  // (1,C,1,1), trainable
    Tensor4<T> beta;   // (1,C,1,1), trainable
    std::vector<T> running_mean;
    std::vector<T> running_var;
    T momentum = T(0.1);
    T epsilon = T(1e-5);

    explicit BatchNormState(int channels)
        : gamma(Tensor4<T>::full(Shape{1, channels, 1, 1}, T(1))),
          beta(Shape{1, channels, 1, 1}),
          running_mean(channels, T(0)),
          running_var(channels, T(1)) {
        gamma.set_requires_grad(true);
        beta.set_requires_grad(true);
    }
    int channels() const { return gamma.shape().c; }
};

template <typename T>
Tensor4<T> batch_norm(Tape<T>* tape, const Tensor4<T>& x,
                      BatchNormState<T>& state, NormMode mode) {
    const Shape& xs = x.shape();
    if (xs.c != state.channels())
        throw ShapeError("batch_norm: channel mismatch");
    const std::size_t plane = static_cast<std::size_t>(xs.h) * xs.w;
    const std::size_t m = static_cast<std::size_t>(xs.n) * plane;
    Tensor4<T> out(xs);

    if (mode == NormMode::eval) {
        for (int c = 0; c < xs.c; ++c) {
            const T s = state.gamma.data()[c] /
                        std::sqrt(state.running_var[c] + state.epsilon);
            const T b = state.beta.data()[c] - s * state.running_mean[c];
            for (int n = 0; n < xs.n; ++n) {
                const T* src = x.data().data() + x.index(n, c, 0, 0);
                T* dst = out.data().data() + out.index(n, c, 0, 0);
                for (std::size_t i = 0; i < plane; ++i) dst[i] = s * src[i] + b;
            }
        }
        if (tape && (x.requires_grad() || state.gamma.requires_grad())) {
            detail::mark_out(out);
            Tensor4<T> xc = x, oc = out, gm = state.gamma, bt = state.beta;
            std::vector<T> rm = state.running_mean, rv = state.running_var;
            const T eps = state.epsilon;
            tape->record([xc, oc, gm, bt, rm, rv, eps, plane]() mutable {
                const Shape& xs = xc.shape();
                for (int c = 0; c < xs.c; ++c) {
                    const T inv_sd = T(1) / std::sqrt(rv[c] + eps);
                    const T s = gm.data()[c] * inv_sd;
                    for (int n = 0; n < xs.n; ++n) {
                        const T* g = oc.grad().data() + oc.index(n, c, 0, 0);
                        if (xc.requires_grad()) {
                            T* gx = xc.grad().data() + xc.index(n, c, 0, 0);
                            for (std::size_t i = 0; i < plane; ++i)
                                gx[i] += s * g[i];
                        }
                        if (gm.requires_grad()) {
                            const T* src =
                                xc.data().data() + xc.index(n, c, 0, 0);
                            T gacc = T(0), bacc = T(0);
                            for (std::size_t i = 0; i < plane; ++i) {
                                gacc += g[i] * (src[i] - rm[c]) * inv_sd;
                                bacc += g[i];
                            }
                            gm.grad()[c] += gacc;
                            bt.grad()[c] += bacc;
                        }
                    }
                }
            });
        }
        return out;
    }

    if (m < 2)
        throw std::invalid_argument(
            "batch_norm: train mode requires n*h*w >= 2 per channel");

    auto mean_c = std::make_shared<std::vector<T>>(xs.c);
    auto var_c = std::make_shared<std::vector<T>>(xs.c);  // biased
    auto xhat = std::make_shared<std::vector<T>>(x.numel());

    for (int c = 0; c < xs.c; ++c) {
        T acc = T(0);
        for (int n = 0; n < xs.n; ++n) {
            const T* src = x.data().data() + x.index(n, c, 0, 0);
            for (std::size_t i = 0; i < plane; ++i) acc += src[i];
        }
        const T mu = acc / static_cast<T>(m);
        T vacc = T(0);
        for (int n = 0; n < xs.n; ++n) {
            const T* src = x.data().data() + x.index(n, c, 0, 0);
            for (std::size_t i = 0; i < plane; ++i) {
                const T d = src[i] - mu;
                vacc += d * d;
            }
        }
        const T var = vacc / static_cast<T>(m);
        (*mean_c)[c] = mu;
        (*var_c)[c] = var;
        const T inv_sd = T(1) / std::sqrt(var + state.epsilon);
        const T gc = state.gamma.data()[c], bc = state.beta.data()[c];
        for (int n = 0; n < xs.n; ++n) {
            const T* src = x.data().data() + x.index(n, c, 0, 0);
            T* dst = out.data().data() + out.index(n, c, 0, 0);
            T* xh = xhat->data() + x.index(n, c, 0, 0);
            for (std::size_t i = 0; i < plane; ++i) {
                xh[i] = (src[i] - mu) * inv_sd;
                dst[i] = gc * xh[i] + bc;
            }
        }
        // running stats use the unbiased variance
        const T unbiased = vacc / static_cast<T>(m - 1);
        state.running_mean[c] =
            (T(1) - state.momentum) * state.running_mean[c] + state.momentum * mu;
        state.running_var[c] = (T(1) - state.momentum) * state.running_var[c] +
                               state.momentum * unbiased;
    }

    if (tape && (x.requires_grad() || state.gamma.requires_grad())) {
        detail::mark_out(out);
        Tensor4<T> xc = x, oc = out, gm = state.gamma, bt = state.beta;
        const T eps = state.epsilon;
        tape->record([xc, oc, gm, bt, var_c, xhat, eps, plane, m]() mutable {
            const Shape& xs = xc.shape();
            const T inv_m = T(1) / static_cast<T>(m);
            for (int c = 0; c < xs.c; ++c) {
                T sum_g = T(0), sum_gx = T(0);
                for (int n = 0; n < xs.n; ++n) {
                    const T* g = oc.grad().data() + oc.index(n, c, 0, 0);
                    const T* xh = xhat->data() + xc.index(n, c, 0, 0);
                    for (std::size_t i = 0; i < plane; ++i) {
                        sum_g += g[i];
                        sum_gx += g[i] * xh[i];
                    }
                }
                if (gm.requires_grad()) {
                    gm.grad()[c] += sum_gx;
                    bt.grad()[c] += sum_g;
                }
                if (xc.requires_grad()) {
                    const T inv_sd = T(1) / std::sqrt((*var_c)[c] + eps);
                    const T s = gm.data()[c] * inv_sd;
                    for (int n = 0; n < xs.n; ++n) {
                        const T* g = oc.grad().data() + oc.index(n, c, 0, 0);
                        const T* xh = xhat->data() + xc.index(n, c, 0, 0);
                        T* gx = xc.grad().data() + xc.index(n, c, 0, 0);
                        for (std::size_t i = 0; i < plane; ++i)
                            gx[i] += s * (g[i] - inv_m * sum_g -
                                          xh[i] * inv_m * sum_gx);
                    }
                }
            }
        });
    }
    return out;
}

// ---- bilinear upsampling ------------------------------------------------

// Integer-factor bilinear upsampling, align-corners=false with border
// clamping: src coordinate = (dst + 0.5)/scale - 0.5.
template <typename T>
Tensor4<T> bilinear_upsample(Tape<T>* tape, const Tensor4<T>& x, int scale) {
    if (scale < 1) throw std::invalid_argument("bilinear_upsample: scale < 1");
    const Shape& xs = x.shape();
    const int oh = xs.h * scale, ow = xs.w * scale;
    Tensor4<T> out(Shape{xs.n, xs.c, oh, ow});

    struct Lerp {
        int i0, i1;
        T w0, w1;
    };
    auto make_axis = [scale](int src_len, int dst_len) {
        std::vector<Lerp> ax(dst_len);
        for (int d = 0; d < dst_len; ++d) {
            double s = (d + 0.5) / scale - 0.5;
            if (s < 0) s = 0;
            if (s > src_len - 1) s = src_len - 1;
            const int i0 = static_cast<int>(std::floor(s));
            const int i1 = std::min(i0 + 1, src_len - 1);
            const T w1 = static_cast<T>(s - i0);
            ax[d] = Lerp{i0, i1, T(1) - w1, w1};
        }
        return ax;
    };
    auto ay = std::make_shared<std::vector<Lerp>>(make_axis(xs.h, oh));
    auto axx = std::make_shared<std::vector<Lerp>>(make_axis(xs.w, ow));

    for (int n = 0; n < xs.n; ++n)
        for (int c = 0; c < xs.c; ++c) {
            const T* src = x.data().data() + x.index(n, c, 0, 0);
            T* dst = out.data().data() + out.index(n, c, 0, 0);
            for (int oy = 0; oy < oh; ++oy) {
                const Lerp& ly = (*ay)[oy];
                const T* r0 = src + static_cast<std::size_t>(ly.i0) * xs.w;
                const T* r1 = src + static_cast<std::size_t>(ly.i1) * xs.w;
                T* drow = dst + static_cast<std::size_t>(oy) * ow;
                for (int ox = 0; ox < ow; ++ox) {
                    const Lerp& lx = (*axx)[ox];
                    drow[ox] = ly.w0 * (lx.w0 * r0[lx.i0] + lx.w1 * r0[lx.i1]) +
                               ly.w1 * (lx.w0 * r1[lx.i0] + lx.w1 * r1[lx.i1]);
                }
            }
        }

    if (tape && x.requires_grad()) {
        detail::mark_out(out);
        Tensor4<T> xc = x, oc = out;
        tape->record([xc, oc, ay, axx]() mutable {
            const Shape& xs = xc.shape();
            const Shape& os = oc.shape();
            for (int n = 0; n < xs.n; ++n)
                for (int c = 0; c < xs.c; ++c) {
                    T* gx = xc.grad().data() + xc.index(n, c, 0, 0);
                    const T* g = oc.grad().data() + oc.index(n, c, 0, 0);
                    for (int oy = 0; oy < os.h; ++oy) {
                        const auto& ly = (*ay)[oy];
                        const T* grow = g + static_cast<std::size_t>(oy) * os.w;
                        for (int ox = 0; ox < os.w; ++ox) {
                            const auto& lx = (*axx)[ox];
                            const T gv = grow[ox];
                            gx[ly.i0 * xs.w + lx.i0] += ly.w0 * lx.w0 * gv;
                            gx[ly.i0 * xs.w + lx.i1] += ly.w0 * lx.w1 * gv;
                            gx[ly.i1 * xs.w + lx.i0] += ly.w1 * lx.w0 * gv;
                            gx[ly.i1 * xs.w + lx.i1] += ly.w1 * lx.w1 * gv;
                        }
                    }
                }
        });
    }
    return out;
}

}  // namespace ddnet
