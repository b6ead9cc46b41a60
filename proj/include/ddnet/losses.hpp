#pragma once

// Training objectives: MSE, BCE, and SSIM negation. All are composed from
// tape primitives, so their gradients come for free and can be checked
// against finite differences like any other operator.

#include "ddnet/nn_ops.hpp"
#include "ddnet/tensor.hpp"

namespace ddnet {

enum class LossKind { mse, bce, ssim_negation };

inline const char* loss_name(LossKind k) {
    switch (k) {
        case LossKind::mse: return "mse";
        case LossKind::bce: return "bce";
        case LossKind::ssim_negation: return "ssim";
    }
    return "?";
}

template <typename T>
Tensor4<T> mse(Tape<T>* tape, const Tensor4<T>& pred,
               const Tensor4<T>& target) {
    Tensor4<T> d = sub(tape, pred, target);
    return mean(tape, mul(tape, d, d));
}

template <typename T>
Tensor4<T> bce(Tape<T>* tape, const Tensor4<T>& pred, const Tensor4<T>& target,
               T clamp_eps = T(1e-7)) {
    if (pred.shape() != target.shape())
        throw ShapeError("bce: shape mismatch");
    Tensor4<T> p = clamp(tape, pred, clamp_eps, T(1) - clamp_eps);
    Tensor4<T> one_minus_t = affine(tape, target, T(-1), T(1));
    Tensor4<T> one_minus_p = affine(tape, p, T(-1), T(1));
    Tensor4<T> pos = mul(tape, target, log_op(tape, p));
    Tensor4<T> neg = mul(tape, one_minus_t, log_op(tape, one_minus_p));
    return scale(tape, mean(tape, add(tape, pos, neg)), T(-1));
}

namespace detail {

// 11x11 Gaussian, sigma 1.5, normalized; held as a fixed conv weight.
template <typename T>
Tensor4<T> ssim_window() {
    constexpr int W = 11;
    constexpr double sigma = 1.5;
    Tensor4<T> k(Shape{1, 1, W, W});
    double total = 0.0;
    for (int y = 0; y < W; ++y)
        for (int x = 0; x < W; ++x) {
            const double dy = y - (W - 1) / 2.0, dx = x - (W - 1) / 2.0;
            const double v = std::exp(-(dy * dy + dx * dx) / (2 * sigma * sigma));
            k.at(0, 0, y, x) = static_cast<T>(v);
            total += v;
        }
    for (auto& v : k.data()) v = static_cast<T>(v / total);
    return k;
}

}  // namespace detail

// 1 - mean SSIM over valid (fully interior) window positions.
template <typename T>
Tensor4<T> ssim_loss(Tape<T>* tape, const Tensor4<T>& pred,
                     const Tensor4<T>& target) {
    const Shape& s = pred.shape();
    if (s != target.shape()) throw ShapeError("ssim_loss: shape mismatch");
    if (s.c != 1) throw ShapeError("ssim_loss: expects single-channel maps");
    if (s.h < 11 || s.w < 11)
        throw ShapeError("ssim_loss: map smaller than the 11x11 window");

    static const Tensor4<T> window = detail::ssim_window<T>();
    const ConvSpec gspec{1, 1, 11, 11, 1, 1, 0, 0, 1, 1, false};
    const T c1 = T(0.01) * T(0.01);
    const T c2 = T(0.03) * T(0.03);

    auto blur = [&](const Tensor4<T>& t) {
        return conv2d(tape, t, window, static_cast<const Tensor4<T>*>(nullptr),
                      gspec);
    };

    Tensor4<T> mu_x = blur(pred);
    Tensor4<T> mu_y = blur(target);
    Tensor4<T> mu_xx = mul(tape, mu_x, mu_x);
    Tensor4<T> mu_yy = mul(tape, mu_y, mu_y);
    Tensor4<T> mu_xy = mul(tape, mu_x, mu_y);
    Tensor4<T> sigma_x = sub(tape, blur(mul(tape, pred, pred)), mu_xx);
    Tensor4<T> sigma_y = sub(tape, blur(mul(tape, target, target)), mu_yy);
    Tensor4<T> sigma_xy = sub(tape, blur(mul(tape, pred, target)), mu_xy);

    Tensor4<T> num = mul(tape, affine(tape, mu_xy, T(2), c1),
                         affine(tape, sigma_xy, T(2), c2));
    Tensor4<T> den =
        mul(tape, affine(tape, add(tape, mu_xx, mu_yy), T(1), c1),
            affine(tape, add(tape, sigma_x, sigma_y), T(1), c2));
    Tensor4<T> ssim_map = div(tape, num, den);
    return affine(tape, mean(tape, ssim_map), T(-1), T(1));
}

template <typename T>
Tensor4<T> loss_forward(Tape<T>* tape, LossKind kind, const Tensor4<T>& pred,
                        const Tensor4<T>& target) {
    switch (kind) {
        case LossKind::mse: return mse(tape, pred, target);
        case LossKind::bce: return bce(tape, pred, target);
        case LossKind::ssim_negation: return ssim_loss(tape, pred, target);
    }
    throw std::invalid_argument("unknown loss kind");
}

}  // namespace ddnet
