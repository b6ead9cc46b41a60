#pragma once

// Modulated deformable convolution: kernel taps are displaced by learned
// fractional offsets, read through bilinear interpolation, and scaled by
// learned (0,1) masks. Gradients flow through data, weights, offsets,
// and masks.

#include "ddnet/nn_ops.hpp"
#include "ddnet/tensor.hpp"

namespace ddnet {

struct DeformSpec {
    ConvSpec base;
    int taps() const { return base.kh * base.kw; }
    int offset_channels() const { return 2 * taps(); }
    int mask_channels() const { return taps(); }
};

namespace detail {

// Bilinear read of a zero-padded plane at fractional (py, px), plus the
// partials needed for backward. Out-of-range neighbors read 0.
template <typename T>
struct SampleGrad {
    T value;
    T d_py, d_px;
    // neighbor coordinates and weights for scattering into the plane grad
    int y0, x0;
    T w00, w01, w10, w11;
};

template <typename T>
SampleGrad<T> bilinear_at(const T* plane, int h, int w, T py, T px) {
    const int y0 = static_cast<int>(std::floor(py));
    const int x0 = static_cast<int>(std::floor(px));
    const T fy = py - static_cast<T>(y0);
    const T fx = px - static_cast<T>(x0);
    auto pix = [&](int y, int x) -> T {
        return (y >= 0 && y < h && x >= 0 && x < w)
                   ? plane[static_cast<std::size_t>(y) * w + x]
                   : T(0);
    };
    const T v00 = pix(y0, x0), v01 = pix(y0, x0 + 1);
    const T v10 = pix(y0 + 1, x0), v11 = pix(y0 + 1, x0 + 1);
    SampleGrad<T> s;
    s.value = (T(1) - fy) * ((T(1) - fx) * v00 + fx * v01) +
              fy * ((T(1) - fx) * v10 + fx * v11);
    s.d_py = ((T(1) - fx) * v10 + fx * v11) - ((T(1) - fx) * v00 + fx * v01);
    s.d_px = ((T(1) - fy) * v01 + fy * v11) - ((T(1) - fy) * v00 + fy * v10);
    s.y0 = y0;
    s.x0 = x0;
    s.w00 = (T(1) - fy) * (T(1) - fx);
    s.w01 = (T(1) - fy) * fx;
    s.w10 = fy * (T(1) - fx);
    s.w11 = fy * fx;
    return s;
}

}  // namespace detail

// Plain scalar sampler over a single-channel plane.
template <typename T>
T bilinear_sample(const Tensor4<T>& x, T py, T px, int n = 0, int c = 0) {
    if (!std::isfinite(py) || !std::isfinite(px))
        throw std::invalid_argument("bilinear_sample: non-finite position");
    const Shape& s = x.shape();
    const T* plane = x.data().data() + x.index(n, c, 0, 0);
    return detail::bilinear_at(plane, s.h, s.w, py, px).value;
}

// Tape form: x is (1,1,h,w), p is (1,2,1,1) holding (row, col); output is a
// scalar tensor, differentiable in both the plane and the position.
template <typename T>
Tensor4<T> bilinear_sample_op(Tape<T>* tape, const Tensor4<T>& x,
                              const Tensor4<T>& p) {
    if (x.shape().n != 1 || x.shape().c != 1)
        throw ShapeError("bilinear_sample_op: expected a (1,1,h,w) plane");
    if (p.shape() != Shape{1, 2, 1, 1})
        throw ShapeError("bilinear_sample_op: position must be (1,2,1,1)");
    const T py = p.data()[0], px = p.data()[1];
    if (!std::isfinite(py) || !std::isfinite(px))
        throw std::invalid_argument("bilinear_sample_op: non-finite position");
    const Shape& s = x.shape();
    auto sg = detail::bilinear_at(x.data().data(), s.h, s.w, py, px);
    Tensor4<T> out = Tensor4<T>::scalar(sg.value);
    if (tape && (x.requires_grad() || p.requires_grad())) {
        detail::mark_out(out);
        Tensor4<T> xc = x, pc = p, oc = out;
        tape->record([xc, pc, oc, sg]() mutable {
            const T g = oc.grad()[0];
            if (pc.requires_grad()) {
                pc.grad()[0] += g * sg.d_py;
                pc.grad()[1] += g * sg.d_px;
            }
            if (xc.requires_grad()) {
                const Shape& s = xc.shape();
                auto scatter = [&](int y, int x, T w) {
                    if (y >= 0 && y < s.h && x >= 0 && x < s.w)
                        xc.grad()[static_cast<std::size_t>(y) * s.w + x] +=
                            g * w;
                };
                scatter(sg.y0, sg.x0, sg.w00);
                scatter(sg.y0, sg.x0 + 1, sg.w01);
                scatter(sg.y0 + 1, sg.x0, sg.w10);
                scatter(sg.y0 + 1, sg.x0 + 1, sg.w11);
            }
        });
    }
    return out;
}

// y(n,o,p) = bias(o) + sum_{c,k} weight(o,c,k) * mask(n,k,p)
//            * sample(x(n,c), p*stride - pad + dilation*grid(k) + offset(n,k,p))
template <typename T>
Tensor4<T> deform_conv2d(Tape<T>* tape, const Tensor4<T>& x,
                         const Tensor4<T>& offsets, const Tensor4<T>& masks,
                         const Tensor4<T>& weight, const Tensor4<T>* bias,
                         const DeformSpec& spec) {
    const ConvSpec& b = spec.base;
    const Shape& xs = x.shape();
    if (xs.c != b.in_channels)
        throw ShapeError("deform_conv2d: input channel mismatch");
    if (weight.shape() != Shape{b.out_channels, b.in_channels, b.kh, b.kw})
        throw ShapeError("deform_conv2d: weight shape mismatch");
    const int oh = b.out_h(xs.h), ow = b.out_w(xs.w);
    if (oh < 1 || ow < 1) throw ShapeError("deform_conv2d: empty output");
    const int K = spec.taps();
    if (offsets.shape() != Shape{xs.n, 2 * K, oh, ow})
        throw ShapeError("deform_conv2d: offsets must be " +
                         Shape{xs.n, 2 * K, oh, ow}.str() + ", got " +
                         offsets.shape().str());
    if (masks.shape() != Shape{xs.n, K, oh, ow})
        throw ShapeError("deform_conv2d: masks must be " +
                         Shape{xs.n, K, oh, ow}.str());
    if (!all_finite(offsets))
        throw std::invalid_argument("deform_conv2d: non-finite offsets");
    if (b.has_bias && (!bias || bias->shape() != Shape{1, b.out_channels, 1, 1}))
        throw ShapeError("deform_conv2d: bias must be (1,out,1,1)");

    Tensor4<T> out(Shape{xs.n, b.out_channels, oh, ow});
    const int C = b.in_channels;
    const std::size_t plane = static_cast<std::size_t>(xs.h) * xs.w;
    std::vector<T> tap(static_cast<std::size_t>(C) * K);  // mask * sample

    for (int n = 0; n < xs.n; ++n) {
        const T* xbase = x.data().data() + x.index(n, 0, 0, 0);
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                for (int k = 0; k < K; ++k) {
                    const int ky = k / b.kw, kx = k % b.kw;
                    const T py = static_cast<T>(oy * b.sh - b.ph + ky * b.dh) +
                                 offsets.at(n, 2 * k, oy, ox);
                    const T px = static_cast<T>(ox * b.sw - b.pw + kx * b.dw) +
                                 offsets.at(n, 2 * k + 1, oy, ox);
                    const T m = masks.at(n, k, oy, ox);
                    for (int c = 0; c < C; ++c) {
                        const auto sg = detail::bilinear_at(
                            xbase + c * plane, xs.h, xs.w, py, px);
                        tap[static_cast<std::size_t>(c) * K + k] = m * sg.value;
                    }
                }
                for (int o = 0; o < b.out_channels; ++o) {
                    const T* wrow =
                        weight.data().data() + static_cast<std::size_t>(o) * C * K;
                    T acc = b.has_bias ? bias->data()[o] : T(0);
                    for (std::size_t i = 0; i < tap.size(); ++i)
                        acc += wrow[i] * tap[i];
                    out.at(n, o, oy, ox) = acc;
                }
            }
    }

    const bool needs = x.requires_grad() || offsets.requires_grad() ||
                       masks.requires_grad() || weight.requires_grad() ||
                       (b.has_bias && bias->requires_grad());
    if (tape && needs) {
        detail::mark_out(out);
        Tensor4<T> xc = x, offc = offsets, mc = masks, wc = weight, oc = out;
        Tensor4<T> biasc = b.has_bias ? *bias : Tensor4<T>();
        tape->record([xc, offc, mc, wc, biasc, oc, spec]() mutable {
            const ConvSpec& b = spec.base;
            const Shape& xs = xc.shape();
            const Shape& os = oc.shape();
            const int K = spec.taps(), C = b.in_channels;
            const std::size_t plane = static_cast<std::size_t>(xs.h) * xs.w;
            std::vector<T> gtap(static_cast<std::size_t>(C) * K);
            for (int n = 0; n < xs.n; ++n) {
                const T* xbase = xc.data().data() + xc.index(n, 0, 0, 0);
                T* gx = xc.requires_grad()
                            ? xc.grad().data() + xc.index(n, 0, 0, 0)
                            : nullptr;
                for (int oy = 0; oy < os.h; ++oy)
                    for (int ox = 0; ox < os.w; ++ox) {
                        // gtap[c,k] = sum_o gy[o] * W[o,c,k]
                        std::fill(gtap.begin(), gtap.end(), T(0));
                        for (int o = 0; o < b.out_channels; ++o) {
                            const T gy = oc.grad()[oc.index(n, o, oy, ox)];
                            if (gy == T(0)) continue;
                            const T* wrow = wc.data().data() +
                                            static_cast<std::size_t>(o) * C * K;
                            for (std::size_t i = 0; i < gtap.size(); ++i)
                                gtap[i] += gy * wrow[i];
                            if (biasc.defined() && biasc.requires_grad())
                                biasc.grad()[o] += gy;
                        }
                        for (int k = 0; k < K; ++k) {
                            const int ky = k / b.kw, kx = k % b.kw;
                            const T py =
                                static_cast<T>(oy * b.sh - b.ph + ky * b.dh) +
                                offc.at(n, 2 * k, oy, ox);
                            const T px =
                                static_cast<T>(ox * b.sw - b.pw + kx * b.dw) +
                                offc.at(n, 2 * k + 1, oy, ox);
                            const T m = mc.at(n, k, oy, ox);
                            T gm = T(0), gpy = T(0), gpx = T(0);
                            for (int c = 0; c < C; ++c) {
                                const auto sg = detail::bilinear_at(
                                    xbase + c * plane, xs.h, xs.w, py, px);
                                const T gck =
                                    gtap[static_cast<std::size_t>(c) * K + k];
                                gm += gck * sg.value;
                                const T gsample = gck * m;
                                gpy += gsample * sg.d_py;
                                gpx += gsample * sg.d_px;
                                if (gx) {
                                    T* gplane = gx + c * plane;
                                    auto scatter = [&](int y, int x, T w) {
                                        if (y >= 0 && y < xs.h && x >= 0 &&
                                            x < xs.w)
                                            gplane[static_cast<std::size_t>(y) *
                                                       xs.w +
                                                   x] += gsample * w;
                                    };
                                    scatter(sg.y0, sg.x0, sg.w00);
                                    scatter(sg.y0, sg.x0 + 1, sg.w01);
                                    scatter(sg.y0 + 1, sg.x0, sg.w10);
                                    scatter(sg.y0 + 1, sg.x0 + 1, sg.w11);
                                }
                                if (wc.requires_grad()) {
                                    const T ms = m * sg.value;
                                    for (int o = 0; o < b.out_channels; ++o) {
                                        const T gy =
                                            oc.grad()[oc.index(n, o, oy, ox)];
                                        if (gy != T(0))
                                            wc.grad()[(static_cast<std::size_t>(
                                                           o) *
                                                           C +
                                                       c) *
                                                          K +
                                                      k] += gy * ms;
                                    }
                                }
                            }
                            if (mc.requires_grad())
                                mc.grad()[mc.index(n, k, oy, ox)] += gm;
                            if (offc.requires_grad()) {
                                offc.grad()[offc.index(n, 2 * k, oy, ox)] += gpy;
                                offc.grad()[offc.index(n, 2 * k + 1, oy, ox)] +=
                                    gpx;
                            }
                        }
                    }
            }
        });
    }
    return out;
}

// One deformable layer: a 3x3 offset branch (same stride/padding as the
// main kernel) predicts 2K offsets and K pre-squash masks from the layer
// input; zero-initialized it starts as a 0.5-modulated standard convolution.
template <typename T>
struct DeformLayer {
    DeformSpec spec;
    ConvSpec offset_spec;
    Tensor4<T> weight;         // (out, in, kh, kw)
    Tensor4<T> bias;           // (1, out, 1, 1)
    Tensor4<T> offset_weight;  // (3K, in, kh, kw)
    Tensor4<T> offset_bias;    // (1, 3K, 1, 1)

    DeformLayer() = default;
    DeformLayer(const DeformSpec& s, std::mt19937& rng) : spec(s) {
        const ConvSpec& b = s.base;
        offset_spec = b;
        offset_spec.out_channels = 3 * s.taps();
        offset_spec.has_bias = true;
        weight = Tensor4<T>(Shape{b.out_channels, b.in_channels, b.kh, b.kw},
                            true);
        const T fan_in = static_cast<T>(b.in_channels * b.kh * b.kw);
        fill_random_normal(weight, rng, std::sqrt(T(2) / fan_in));
        bias = Tensor4<T>(Shape{1, b.out_channels, 1, 1}, true);
        offset_weight = Tensor4<T>(
            Shape{3 * s.taps(), b.in_channels, b.kh, b.kw}, true);
        offset_bias = Tensor4<T>(Shape{1, 3 * s.taps(), 1, 1}, true);
        // offsets start at 0, masks at logistic(0) = 0.5
    }
};

template <typename T>
Tensor4<T> deform_layer_forward(Tape<T>* tape, const Tensor4<T>& x,
                                const DeformLayer<T>& layer) {
    const int K = layer.spec.taps();
    Tensor4<T> branch = conv2d(tape, x, layer.offset_weight,
                               &layer.offset_bias, layer.offset_spec);
    Tensor4<T> offsets = slice_channels(tape, branch, 0, 2 * K);
    Tensor4<T> masks =
        sigmoid(tape, slice_channels(tape, branch, 2 * K, 3 * K));
    return deform_conv2d(tape, x, offsets, masks, layer.weight, &layer.bias,
                         layer.spec);
}

}  // namespace ddnet
