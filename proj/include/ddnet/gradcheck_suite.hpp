#pragma once

// Finite-difference verification suite over every operator, and an
// end-to-end check through a tiny model. Runs at double precision.

#include "ddnet/deform.hpp"
#include "ddnet/grad_check.hpp"
#include "ddnet/losses.hpp"
#include "ddnet/model.hpp"
#include "ddnet/nn_ops.hpp"

namespace ddnet {

struct SuiteRow {
    std::string name;
    double max_rel_error = 0;
    double threshold = 1e-4;
    bool passed() const { return max_rel_error < threshold; }
};

namespace suite_detail {

using DT = Tensor4<double>;

inline DT random_input(Shape s, std::mt19937& rng, double lo = -1.0,
                       double hi = 1.0, bool requires_grad = true) {
    DT t(s, requires_grad);
    fill_random_uniform(t, rng, lo, hi);
    return t;
}

// Fixed random coefficients make the scalar reduction sensitive to every
// output element.
inline Tensor4<double> weighted_mean(Tape<double>* tape, const DT& out,
                                     const DT& coeffs) {
    return mean(tape, mul(tape, out, coeffs));
}

// Uniform in (-0.7, 0.7) avoiding a +-1e-3 band around integers, where the
// bilinear sampler is non-smooth.
inline void fill_offsets(DT& t, std::mt19937& rng) {
    std::uniform_real_distribution<double> dist(-0.7, 0.7);
    for (auto& v : t.data()) {
        double x;
        do {
            x = dist(rng);
        } while (std::abs(x - std::round(x)) < 1e-3);
        v = x;
    }
}

}  // namespace suite_detail

// One row of the operator gradient suite; max error over `seeds` runs.
inline SuiteRow gradcheck_op(const std::string& name, int seeds,
                             double eps = 1e-5) {
    using namespace suite_detail;
    SuiteRow row{name, 0.0, 1e-4};

    for (int seed = 0; seed < seeds; ++seed) {
        std::mt19937 rng(1234u + static_cast<unsigned>(seed) * 7919u);
        double err = 0;

        if (name == "conv2d") {
            ConvSpec spec = ConvSpec::k3(3, 4, 1, 1);
            DT x = random_input({2, 3, 6, 6}, rng);
            DT w = random_input({4, 3, 3, 3}, rng);
            DT b = random_input({1, 4, 1, 1}, rng);
            DT coeffs = random_input({2, 4, 6, 6}, rng, -1, 1, false);
            std::vector<DT> inputs{x, w, b};
            err = grad_check(
                      [&](Tape<double>* t) {
                          return weighted_mean(t, conv2d(t, x, w, &b, spec),
                                               coeffs);
                      },
                      inputs, eps)
                      .max_rel_error;
        } else if (name == "transposed_conv2d") {
            ConvSpec spec{3, 2, 3, 3, 2, 2, 1, 1, 1, 1, false};
            DT x = random_input({2, 3, 4, 4}, rng);
            DT w = random_input({3, 2, 3, 3}, rng);
            DT coeffs = random_input({2, 2, 7, 7}, rng, -1, 1, false);
            std::vector<DT> inputs{x, w};
            err = grad_check(
                      [&](Tape<double>* t) {
                          return weighted_mean(
                              t, transposed_conv2d(t, x, w, spec), coeffs);
                      },
                      inputs, eps)
                      .max_rel_error;
        } else if (name == "batch_norm_train") {
            DT x = random_input({2, 3, 4, 4}, rng);
            BatchNormState<double> state(3);
            fill_random_uniform(state.gamma, rng, 0.5, 1.5);
            fill_random_uniform(state.beta, rng, -0.5, 0.5);
            DT coeffs = random_input({2, 3, 4, 4}, rng, -1, 1, false);
            std::vector<DT> inputs{x, state.gamma, state.beta};
            err = grad_check(
                      [&](Tape<double>* t) {
                          return weighted_mean(
                              t, batch_norm(t, x, state, NormMode::train),
                              coeffs);
                      },
                      inputs, eps)
                      .max_rel_error;
        } else if (name == "max_pool") {
            DT x = random_input({2, 2, 6, 6}, rng);
            DT coeffs = random_input({2, 2, 3, 3}, rng, -1, 1, false);
            std::vector<DT> inputs{x};
            err = grad_check(
                      [&](Tape<double>* t) {
                          return weighted_mean(t, max_pool(t, x, 2, 2), coeffs);
                      },
                      inputs, eps)
                      .max_rel_error;
        } else if (name == "avg_pool") {
            DT x = random_input({2, 2, 6, 6}, rng);
            DT coeffs = random_input({2, 2, 3, 3}, rng, -1, 1, false);
            std::vector<DT> inputs{x};
            err = grad_check(
                      [&](Tape<double>* t) {
                          return weighted_mean(t, avg_pool(t, x, 2, 2), coeffs);
                      },
                      inputs, eps)
                      .max_rel_error;
        } else if (name == "bilinear_upsample") {
            DT x = random_input({2, 2, 4, 4}, rng);
            DT coeffs = random_input({2, 2, 8, 8}, rng, -1, 1, false);
            std::vector<DT> inputs{x};
            err = grad_check(
                      [&](Tape<double>* t) {
                          return weighted_mean(t, bilinear_upsample(t, x, 2),
                                               coeffs);
                      },
                      inputs, eps)
                      .max_rel_error;
        } else if (name == "bilinear_sample") {
            DT x = random_input({1, 1, 5, 5}, rng);
            DT p(Shape{1, 2, 1, 1}, true);
            fill_offsets(p, rng);
            p.data()[0] += 2.0;  // an interior, non-integer position
            p.data()[1] += 2.0;
            std::vector<DT> inputs{x, p};
            err = grad_check(
                      [&](Tape<double>* t) {
                          return bilinear_sample_op(t, x, p);
                      },
                      inputs, eps)
                      .max_rel_error;
        } else if (name == "deform_conv2d") {
            DeformSpec spec{ConvSpec::k3(2, 3, 1, 1)};
            DT x = random_input({1, 2, 5, 5}, rng);
            DT w = random_input({3, 2, 3, 3}, rng);
            DT b = random_input({1, 3, 1, 1}, rng);
            DT off({1, 18, 5, 5}, true);
            fill_offsets(off, rng);
            DT masks = random_input({1, 9, 5, 5}, rng, 0.05, 0.95);
            DT coeffs = random_input({1, 3, 5, 5}, rng, -1, 1, false);
            std::vector<DT> inputs{x, w, b, off, masks};
            err = grad_check(
                      [&](Tape<double>* t) {
                          return weighted_mean(
                              t, deform_conv2d(t, x, off, masks, w, &b, spec),
                              coeffs);
                      },
                      inputs, eps)
                      .max_rel_error;
        } else if (name == "mse" || name == "bce" || name == "ssim") {
            const bool is_ssim = name == "ssim";
            const Shape s =
                is_ssim ? Shape{1, 1, 12, 12} : Shape{1, 2, 4, 4};
            DT pred = random_input(s, rng, 0.1, 0.9);
            DT target = random_input(s, rng, 0.05, 0.95, false);
            std::vector<DT> inputs{pred};
            const LossKind kind = name == "mse" ? LossKind::mse
                                 : name == "bce" ? LossKind::bce
                                                 : LossKind::ssim_negation;
            // SSIM gradients have entries near zero where the relative
            // central-difference error is roundoff-dominated; a slightly
            // larger step keeps the comparison meaningful.
            const double op_eps = is_ssim ? 1e-4 : eps;
            err = grad_check(
                      [&](Tape<double>* t) {
                          return loss_forward(t, kind, pred, target);
                      },
                      inputs, op_eps)
                      .max_rel_error;
        } else if (name == "logistic") {
            DT x = random_input({2, 2, 4, 4}, rng, -2, 2);
            DT coeffs = random_input({2, 2, 4, 4}, rng, -1, 1, false);
            std::vector<DT> inputs{x};
            err = grad_check(
                      [&](Tape<double>* t) {
                          return weighted_mean(t, sigmoid(t, x), coeffs);
                      },
                      inputs, eps)
                      .max_rel_error;
        } else {
            throw std::invalid_argument("unknown suite op: " + name);
        }
        row.max_rel_error = std::max(row.max_rel_error, err);
    }
    return row;
}

inline std::vector<std::string> gradcheck_op_names() {
    return {"conv2d",          "transposed_conv2d", "batch_norm_train",
            "max_pool",        "avg_pool",          "bilinear_upsample",
            "bilinear_sample", "deform_conv2d",     "mse",
            "bce",             "ssim",              "logistic"};
}

inline std::vector<SuiteRow> gradcheck_ops(int seeds = 10) {
    std::vector<SuiteRow> rows;
    for (const auto& name : gradcheck_op_names())
        rows.push_back(gradcheck_op(name, seeds));
    return rows;
}

// End-to-end check through a tiny model: perturbs a deterministic sample
// of parameter entries and compares against the tape gradients.
inline SuiteRow gradcheck_model(int samples_per_param = 4, double eps = 1e-5) {
    ModelConfig cfg;
    cfg.input_h = cfg.input_w = 16;
    cfg.stem_channels = 4;
    cfg.growth_rate = 4;
    cfg.block1_layers = 1;
    cfg.block2_layers = 1;
    cfg.deform_channels = 4;

    Model<double> model(cfg, /*seed=*/17);
    model.mode = NormMode::train;
    std::mt19937 rng(99);

    // The offset branches start at zero, which puts every sampling position
    // exactly on an integer lattice point where bilinear interpolation has a
    // slope discontinuity and central differences straddle the kink. Nudge
    // those parameters so the check runs at a generic point.
    for (auto& p : model.parameters())
        if (p.name.find("offset") != std::string::npos)
            fill_random_uniform(p.value, rng, -0.05, 0.05);
    Tensor4<double> x = suite_detail::random_input({2, 3, 16, 16}, rng, 0, 1,
                                                   false);
    Tensor4<double> target =
        suite_detail::random_input({2, 1, 16, 16}, rng, 0, 1, false);

    // Batch-norm running statistics change on each forward pass; freeze the
    // forward function's statistics path by snapshotting and restoring them.
    auto snapshot = [&model]() {
        std::vector<std::vector<double>> s;
        for (auto& a : model.arrays())
            if (a.buffer) s.push_back(*a.buffer);
        return s;
    };
    auto restore = [&model](const std::vector<std::vector<double>>& s) {
        std::size_t i = 0;
        for (auto& a : model.arrays())
            if (a.buffer) *a.buffer = s[i++];
    };
    const auto initial_stats = snapshot();

    auto forward = [&](Tape<double>* tape) {
        restore(initial_stats);
        Tensor4<double> pred = model.forward(tape, x);
        return mse(tape, pred, target);
    };

    model.zero_grad();
    Tape<double> tape;
    Tensor4<double> loss = forward(&tape);
    tape.backward(loss);

    SuiteRow row{"model", 0.0, 1e-3};
    auto params = model.parameters();
    std::mt19937 pick(7);
    for (auto& p : params) {
        for (int s = 0; s < samples_per_param; ++s) {
            const std::size_t i = pick() % p.value.numel();
            const double saved = p.value.data()[i];
            p.value.data()[i] = saved + eps;
            const double up = forward(nullptr).item();
            p.value.data()[i] = saved - eps;
            const double down = forward(nullptr).item();
            p.value.data()[i] = saved;
            const double numeric = (up - down) / (2 * eps);
            const double analytic = p.value.grad()[i];
            const double denom =
                std::max({std::abs(analytic), std::abs(numeric), 1e-8});
            row.max_rel_error =
                std::max(row.max_rel_error, std::abs(analytic - numeric) / denom);
        }
    }
    restore(initial_stats);
    return row;
}

}  // namespace ddnet
