#pragma once

// Central-difference gradient verification for any scalar-valued forward
// function expressed through the tape.

#include <functional>

#include "ddnet/tensor.hpp"

namespace ddnet {

struct GradCheckResult {
    double max_rel_error = 0.0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

// forward: builds the scalar loss from the current contents of `inputs`,
// recording on the given tape (nullptr = plain forward).
// Every tensor in `inputs` must have requires_grad set.
inline GradCheckResult grad_check(
    const std::function<Tensor4<double>(Tape<double>*)>& forward,
    std::vector<Tensor4<double>>& inputs, double eps = 1e-5) {
    if (eps <= 0.0) throw std::invalid_argument("grad_check: eps must be > 0");
    for (auto& in : inputs) {
        if (!all_finite(in)) throw NumericError("grad_check: non-finite input");
        in.zero_grad();
    }

    Tape<double> tape;
    Tensor4<double> loss = forward(&tape);
    if (!all_finite(loss)) throw NumericError("grad_check: non-finite loss");
    tape.backward(loss);

    GradCheckResult res;
    for (auto& in : inputs) {
        in.ensure_grad();
        for (std::size_t i = 0; i < in.numel(); ++i) {
            const double saved = in.data()[i];
            in.data()[i] = saved + eps;
            const double up = forward(nullptr).item();
            in.data()[i] = saved - eps;
            const double down = forward(nullptr).item();
            in.data()[i] = saved;
            if (!std::isfinite(up) || !std::isfinite(down))
                throw NumericError("grad_check: non-finite perturbed forward");

            const double numeric = (up - down) / (2.0 * eps);
            const double analytic = in.grad()[i];
            const double denom =
                std::max({std::abs(analytic), std::abs(numeric), 1e-8});
            const double rel = std::abs(analytic - numeric) / denom;
            if (rel > res.max_rel_error) {
                res.max_rel_error = rel;
                res.worst_analytic = analytic;
                res.worst_numeric = numeric;
            }
        }
    }
    return res;
}

}  // namespace ddnet
