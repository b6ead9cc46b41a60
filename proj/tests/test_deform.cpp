#include <catch2/catch_amalgamated.hpp>

#include "ddnet/deform.hpp"
#include "ddnet/nn_ops.hpp"

using namespace ddnet;
using DT = Tensor4<double>;

namespace {

DT random_tensor(Shape s, std::mt19937& rng, double lo = -1, double hi = 1) {
    DT t(s);
    fill_random_uniform(t, rng, lo, hi);
    return t;
}

}  // namespace

TEST_CASE("bilinear sampler: integer positions, midpoints, zero outside") {
    DT x(Shape{1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
    CHECK(bilinear_sample(x, 0.0, 0.0) == 1.0);
    CHECK(bilinear_sample(x, 1.0, 1.0) == 4.0);
    CHECK(bilinear_sample(x, 0.0, 0.5) == 1.5);
    CHECK(bilinear_sample(x, 0.5, 0.5) == 2.5);
    // outside the plane reads as zero padding
    CHECK(bilinear_sample(x, -1.0, 0.0) == 0.0);
    CHECK(bilinear_sample(x, 0.0, 5.0) == 0.0);
    // half a pixel outside blends with zeros
    CHECK(bilinear_sample(x, -0.5, 0.0) == 0.5);
    CHECK(bilinear_sample(x, 1.5, 1.0) == 2.0);
}

TEST_CASE("bilinear sampler rejects non-finite positions") {
    DT x(Shape{1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
    const double inf = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(bilinear_sample(x, inf, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(bilinear_sample(x, 0.0, std::nan("")),
                    std::invalid_argument);
}

TEST_CASE("zero offsets and unit masks reduce to standard convolution") {
    std::mt19937 rng(2);
    DeformSpec spec{ConvSpec::k3(2, 3, 1, 1)};
    DT x = random_tensor({2, 2, 6, 6}, rng);
    DT w = random_tensor({3, 2, 3, 3}, rng);
    DT b = random_tensor({1, 3, 1, 1}, rng);
    const int K = spec.taps();
    DT off(Shape{2, 2 * K, 6, 6});
    DT masks = DT::full(Shape{2, K, 6, 6}, 1.0);
    auto got = deform_conv2d<double>(nullptr, x, off, masks, w, &b, spec);
    auto want = conv2d<double>(nullptr, x, w, &b, spec.base);
    REQUIRE(got.shape() == want.shape());
    for (std::size_t i = 0; i < got.numel(); ++i)
        CHECK(got.data()[i] == Catch::Approx(want.data()[i]).margin(1e-9));
}

TEST_CASE("constant masks scale the bias-free convolution part") {
    std::mt19937 rng(4);
    DeformSpec spec{ConvSpec::k3(2, 2, 1, 1)};
    DT x = random_tensor({1, 2, 5, 5}, rng);
    DT w = random_tensor({2, 2, 3, 3}, rng);
    DT b = random_tensor({1, 2, 1, 1}, rng);
    const int K = spec.taps();
    DT off(Shape{1, 2 * K, 5, 5});
    DT half = DT::full(Shape{1, K, 5, 5}, 0.5);
    auto got = deform_conv2d<double>(nullptr, x, off, half, w, &b, spec);
    ConvSpec nobias = spec.base;
    nobias.has_bias = false;
    auto plain = conv2d<double>(nullptr, x, w, nullptr, nobias);
    for (std::size_t i = 0; i < got.numel(); ++i) {
        const int o = static_cast<int>(i / (5 * 5)) % 2;
        const double want = 0.5 * plain.data()[i] + b.data()[o];
        CHECK(got.data()[i] == Catch::Approx(want).margin(1e-9));
    }
}

TEST_CASE("a uniform integer offset shifts the sampled input") {
    std::mt19937 rng(6);
    DeformSpec spec{ConvSpec::k3(1, 1, 1, 1, 1, false)};
    DT x = random_tensor({1, 1, 7, 7}, rng);
    DT w = random_tensor({1, 1, 3, 3}, rng);
    const int K = spec.taps();
    // shift every tap one column right
    DT off(Shape{1, 2 * K, 7, 7});
    for (int k = 0; k < K; ++k)
        for (int oy = 0; oy < 7; ++oy)
            for (int ox = 0; ox < 7; ++ox)
                off.at(0, 2 * k + 1, oy, ox) = 1.0;
    DT masks = DT::full(Shape{1, K, 7, 7}, 1.0);
    auto got = deform_conv2d<double>(nullptr, x, off, masks, w, nullptr, spec);
    auto plain = conv2d<double>(nullptr, x, w, nullptr, spec.base);
    // interior outputs equal the unshifted result one column to the right
    for (int oy = 1; oy < 6; ++oy)
        for (int ox = 1; ox < 5; ++ox)
            CHECK(got.at(0, 0, oy, ox) ==
                  Catch::Approx(plain.at(0, 0, oy, ox + 1)).margin(1e-9));
}

TEST_CASE("centered offsets reproduce dilated convolution") {
    std::mt19937 rng(8);
    for (int d : {2, 3, 5, 7}) {
        ConvSpec dil = ConvSpec::k3(2, 2, 1, d, d, true);
        DeformSpec spec{ConvSpec::k3(2, 2, 1, 1)};
        const int hw = 2 * d + 9;
        DT x = random_tensor({1, 2, hw, hw}, rng);
        DT w = random_tensor({2, 2, 3, 3}, rng);
        DT b = random_tensor({1, 2, 1, 1}, rng);
        auto want = conv2d<double>(nullptr, x, w, &b, dil);
        // base pad 1, dilation 1 and per-tap offsets (d-1)*(ky-1, kx-1)
        // land each tap where the dilation-d kernel with pad d reads
        const int K = spec.taps();
        DT off(Shape{1, 2 * K, hw, hw});
        for (int k = 0; k < K; ++k) {
            const int ky = k / 3, kx = k % 3;
            for (int oy = 0; oy < hw; ++oy)
                for (int ox = 0; ox < hw; ++ox) {
                    off.at(0, 2 * k, oy, ox) = (d - 1.0) * (ky - 1);
                    off.at(0, 2 * k + 1, oy, ox) = (d - 1.0) * (kx - 1);
                }
        }
        DT masks = DT::full(Shape{1, K, hw, hw}, 1.0);
        auto got =
            deform_conv2d<double>(nullptr, x, off, masks, w, &b, spec);
        REQUIRE(got.shape() == want.shape());
        double worst = 0;
        for (std::size_t i = 0; i < got.numel(); ++i)
            worst = std::max(worst,
                             std::abs(got.data()[i] - want.data()[i]));
        CHECK(worst < 1e-9);
    }
}

TEST_CASE("deform output is linear in the weight and in the masks") {
    std::mt19937 rng(10);
    DeformSpec spec{ConvSpec::k3(2, 2, 1, 1, 1, false)};
    const int K = spec.taps();
    DT x = random_tensor({1, 2, 5, 5}, rng);
    DT w = random_tensor({2, 2, 3, 3}, rng);
    DT off(Shape{1, 2 * K, 5, 5});
    fill_random_uniform(off, rng, -0.4, 0.4);
    DT m = random_tensor({1, K, 5, 5}, rng, 0.1, 0.9);

    auto y = deform_conv2d<double>(nullptr, x, off, m, w, nullptr, spec);

    DT w2(w.shape());
    for (std::size_t i = 0; i < w.numel(); ++i) w2.data()[i] = 3 * w.data()[i];
    auto yw = deform_conv2d<double>(nullptr, x, off, m, w2, nullptr, spec);
    for (std::size_t i = 0; i < y.numel(); ++i)
        CHECK(yw.data()[i] == Catch::Approx(3 * y.data()[i]).margin(1e-9));

    DT m2(m.shape());
    for (std::size_t i = 0; i < m.numel(); ++i) m2.data()[i] = 2 * m.data()[i];
    auto ym = deform_conv2d<double>(nullptr, x, off, m2, w, nullptr, spec);
    for (std::size_t i = 0; i < y.numel(); ++i)
        CHECK(ym.data()[i] == Catch::Approx(2 * y.data()[i]).margin(1e-9));
}

TEST_CASE("deform_conv2d validates offsets, masks, and finiteness") {
    DeformSpec spec{ConvSpec::k3(1, 1, 1, 1, 1, false)};
    DT x(Shape{1, 1, 4, 4});
    DT w(Shape{1, 1, 3, 3});
    DT off(Shape{1, 18, 4, 4});  // 18 channels, but k3 needs 2*9 = 18: ok
    DT badoff(Shape{1, 9, 4, 4});
    DT masks(Shape{1, 9, 4, 4});
    DT badmasks(Shape{1, 3, 4, 4});
    CHECK_NOTHROW(
        deform_conv2d<double>(nullptr, x, off, masks, w, nullptr, spec));
    CHECK_THROWS_AS(
        deform_conv2d<double>(nullptr, x, badoff, masks, w, nullptr, spec),
        ShapeError);
    CHECK_THROWS_AS(
        deform_conv2d<double>(nullptr, x, off, badmasks, w, nullptr, spec),
        ShapeError);
    off.data()[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(
        deform_conv2d<double>(nullptr, x, off, masks, w, nullptr, spec),
        std::invalid_argument);
}

TEST_CASE("a freshly initialized layer is a 0.5-modulated convolution") {
    std::mt19937 rng(12);
    DeformSpec spec{ConvSpec::k3(3, 4, 1, 1)};
    DeformLayer<double> layer(spec, rng);
    DT x = random_tensor({2, 3, 6, 6}, rng);
    auto y = deform_layer_forward<double>(nullptr, x, layer);

    ConvSpec nobias = spec.base;
    nobias.has_bias = false;
    auto plain = conv2d<double>(nullptr, x, layer.weight, nullptr, nobias);
    const std::size_t ohw = 6 * 6;
    for (std::size_t i = 0; i < y.numel(); ++i) {
        const int o = static_cast<int>(i / ohw) % spec.base.out_channels;
        const double want = 0.5 * plain.data()[i] + layer.bias.data()[o];
        CHECK(y.data()[i] == Catch::Approx(want).margin(1e-9));
    }
}

TEST_CASE("layer gradients reach data, weights, offsets, and masks") {
    std::mt19937 rng(14);
    DeformSpec spec{ConvSpec::k3(2, 2, 1, 1)};
    DeformLayer<double> layer(spec, rng);
    // move off the zero-init point so offset gradients are generic
    fill_random_uniform(layer.offset_weight, rng, -0.05, 0.05);
    fill_random_uniform(layer.offset_bias, rng, -0.05, 0.05);
    DT x(Shape{1, 2, 5, 5}, true);
    fill_random_uniform(x, rng, -1.0, 1.0);

    Tape<double> tape;
    auto y = deform_layer_forward(&tape, x, layer);
    auto loss = mean(&tape, mul(&tape, y, y));
    tape.backward(loss);

    auto count_nonzero = [](const std::vector<double>& g) {
        std::size_t n = 0;
        for (double v : g)
            if (v != 0.0) ++n;
        return n;
    };
    CHECK(count_nonzero(x.grad()) > 0);
    CHECK(count_nonzero(layer.weight.grad()) == layer.weight.numel());
    CHECK(count_nonzero(layer.bias.grad()) == layer.bias.numel());
    CHECK(count_nonzero(layer.offset_weight.grad()) > 0);
    CHECK(count_nonzero(layer.offset_bias.grad()) > 0);
}
