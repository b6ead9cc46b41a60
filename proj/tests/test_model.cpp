#include <catch2/catch_amalgamated.hpp>

#include <cstdio>

#include "ddnet/checkpoint.hpp"
#include "ddnet/losses.hpp"
#include "ddnet/model.hpp"

using namespace ddnet;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.input_h = c.input_w = 16;
    c.stem_channels = 4;
    c.growth_rate = 4;
    c.block1_layers = 1;
    c.block2_layers = 1;
    c.deform_channels = 4;
    return c;
}

template <typename T>
Tensor4<T> random_input(Shape s, unsigned seed) {
    std::mt19937 rng(seed);
    Tensor4<T> x(s);
    fill_random_uniform(x, rng, T(0), T(1));
    return x;
}

}  // namespace

TEST_CASE("desk model maps (n,3,h,w) to (n,1,h,w) inside (0,1)") {
    Model<float> model(ModelConfig::desk(), 1);
    model.mode = NormMode::eval;
    auto x = random_input<float>({2, 3, 64, 64}, 10);
    auto y = model.forward(nullptr, x);
    REQUIRE(y.shape() == Shape{2, 1, 64, 64});
    for (float v : y.data()) {
        CHECK(v > 0.0f);
        CHECK(v < 1.0f);
    }
}

TEST_CASE("input validation: channels and divisibility") {
    Model<float> model(tiny_config(), 2);
    auto bad_c = random_input<float>({1, 1, 16, 16}, 3);
    CHECK_THROWS_AS(model.forward(nullptr, bad_c), ShapeError);
    auto bad_hw = random_input<float>({1, 3, 20, 20}, 4);
    CHECK_THROWS_AS(model.forward(nullptr, bad_hw), ShapeError);
}

TEST_CASE("identical seeds build identical models; different seeds differ") {
    Model<float> a(tiny_config(), 7), b(tiny_config(), 7), c(tiny_config(), 8);
    auto x = random_input<float>({1, 3, 16, 16}, 5);
    a.mode = b.mode = c.mode = NormMode::eval;
    auto ya = a.forward(nullptr, x);
    auto yb = b.forward(nullptr, x);
    auto yc = c.forward(nullptr, x);
    CHECK(ya.data() == yb.data());
    CHECK(ya.data() != yc.data());
}

TEST_CASE("config validation rejects bad sizes, layer counts, dilations") {
    ModelConfig c = tiny_config();
    c.input_h = 20;
    CHECK_THROWS_AS(Model<float>(c, 1), std::invalid_argument);
    c = tiny_config();
    c.block1_layers = 0;
    CHECK_THROWS_AS(Model<float>(c, 1), std::invalid_argument);
    c = tiny_config();
    c.variant = Variant::dilated;
    c.dilation = 3;
    CHECK_THROWS_AS(Model<float>(c, 1), std::invalid_argument);
    c.dilation = 5;
    CHECK_NOTHROW(Model<float>(c, 1));
    c.dilation = 7;
    CHECK_NOTHROW(Model<float>(c, 1));
}

TEST_CASE("full-config channel arithmetic: 64 + 6*32 = 256 into transition") {
    Model<float> model(ModelConfig::full(), 1);
    const auto specs = model.all_conv_specs();
    // stem first; transition 1x1 follows the 12 block1 convs
    CHECK(specs[0].out_channels == 64);
    const ConvSpec& trans = specs[1 + 2 * 6];
    CHECK(trans.kh == 1);
    CHECK(trans.in_channels == 64 + 6 * 32);
    CHECK(trans.out_channels == 128);
    // projection reads 128 + 12*32 = 512
    const ConvSpec& proj = specs[1 + 2 * 6 + 1 + 2 * 12];
    CHECK(proj.in_channels == 128 + 12 * 32);
    CHECK(proj.out_channels == 64);
}

TEST_CASE("variant wiring: dense concatenates, plain chains, dilated dilates") {
    ModelConfig dense = tiny_config();
    Model<float> md(dense, 1);
    CHECK(md.deform_in_channels(0) == 4);
    CHECK(md.deform_in_channels(1) == 8);
    CHECK(md.deform_in_channels(2) == 12);

    ModelConfig plain = tiny_config();
    plain.variant = Variant::plain_deformable;
    Model<float> mp(plain, 1);
    CHECK(mp.deform_in_channels(0) == 4);
    CHECK(mp.deform_in_channels(1) == 4);
    CHECK(mp.deform_in_channels(2) == 4);

    ModelConfig dil = tiny_config();
    dil.variant = Variant::dilated;
    dil.dilation = 5;
    Model<float> mdil(dil, 1);
    CHECK(mdil.deform_layers().empty());
    int dilated_convs = 0;
    for (const auto& s : mdil.all_conv_specs())
        if (s.dh == 5) {
            ++dilated_convs;
            CHECK(s.ph == 5);  // padding d preserves the spatial size
        }
    CHECK(dilated_convs == 3);

    // all three variants still produce the full-resolution map
    auto x = random_input<float>({1, 3, 16, 16}, 6);
    for (Model<float>* m : {&md, &mp, &mdil}) {
        m->mode = NormMode::eval;
        CHECK(m->forward(nullptr, x).shape() == Shape{1, 1, 16, 16});
    }
}

TEST_CASE("parameter count matches an explicit hand count for the tiny config") {
    Model<float> model(tiny_config(), 1);
    // stem: 7x7x3x4 conv + bn
    std::size_t want = 4 * 3 * 7 * 7 + 2 * 4;
    // block1 layer0 (in 4): bn1, 1x1 to 16, bn2, 3x3 to 4
    want += 2 * 4 + 16 * 4 + 2 * 16 + 4 * 16 * 3 * 3;
    // transition (in 8): bn + 1x1 to 4
    want += 2 * 8 + 4 * 8;
    // block2 layer0 (in 4): same shape as block1 layer0
    want += 2 * 4 + 16 * 4 + 2 * 16 + 4 * 16 * 3 * 3;
    // projection (in 8): bn + biased 1x1 to 4
    want += 2 * 8 + 4 * 8 + 4;
    // deform layers, dense wiring: in = 4, 8, 12; K = 9 taps
    for (int in : {4, 8, 12})
        want += 4 * in * 9 + 4 + 27 * in * 9 + 27;
    // decoder: 4->2 (4x4), 2->1 (3x3), 1->1 (3x3)
    want += 4 * 2 * 4 * 4 + 2 * 1 * 3 * 3 + 1 * 1 * 3 * 3;
    CHECK(model.param_count() == want);
}

TEST_CASE("gradients reach nearly every parameter entry") {
    // 32x32 keeps the deform stage at 4x4, large enough that relu-dead
    // channels stay rare
    ModelConfig cfg = tiny_config();
    cfg.input_h = cfg.input_w = 32;
    Model<double> model(cfg, 3);
    model.mode = NormMode::train;
    auto x = random_input<double>({4, 3, 32, 32}, 7);
    auto target = random_input<double>({4, 1, 32, 32}, 8);
    model.zero_grad();
    Tape<double> tape;
    auto pred = model.forward(&tape, x);
    auto loss = mse(&tape, pred, target);
    tape.backward(loss);

    std::size_t total = 0, nonzero = 0;
    for (auto& p : model.parameters()) {
        total += p.value.numel();
        for (double g : p.value.grad()) nonzero += (g != 0.0);
    }
    CHECK(total == model.param_count());
    CHECK(static_cast<double>(nonzero) >= 0.95 * static_cast<double>(total));
}

TEST_CASE("eval forward treats batch elements independently") {
    Model<float> model(tiny_config(), 9);
    model.mode = NormMode::eval;
    auto pair = random_input<float>({2, 3, 16, 16}, 11);
    auto yp = model.forward(nullptr, pair);
    for (int n = 0; n < 2; ++n) {
        Tensor4<float> single({1, 3, 16, 16});
        std::copy(pair.data().begin() + n * 3 * 16 * 16,
                  pair.data().begin() + (n + 1) * 3 * 16 * 16,
                  single.data().begin());
        auto ys = model.forward(nullptr, single);
        for (int i = 0; i < 16 * 16; ++i)
            CHECK(ys.data()[i] ==
                  Catch::Approx(yp.data()[n * 16 * 16 + i]).margin(1e-5));
    }
}

TEST_CASE("checkpoint round-trip restores every array and the output") {
    const std::string path = "test_model_ckpt.bin";
    Model<float> model(tiny_config(), 13);
    // perturb running stats so buffers carry non-default values
    model.mode = NormMode::train;
    auto x = random_input<float>({2, 3, 16, 16}, 14);
    (void)model.forward(nullptr, x);

    save_checkpoint(model, path);
    Model<float> loaded = load_checkpoint<float>(path);
    CHECK(loaded.mode == NormMode::eval);

    auto a = model.arrays();
    auto b = loaded.arrays();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].name == b[i].name);
        if (a[i].tensor)
            CHECK(a[i].tensor->data() == b[i].tensor->data());
        else
            CHECK(*a[i].buffer == *b[i].buffer);
    }

    model.mode = NormMode::eval;
    auto y1 = model.forward(nullptr, x);
    auto y2 = loaded.forward(nullptr, x);
    CHECK(y1.data() == y2.data());
    std::remove(path.c_str());
}

TEST_CASE("checkpoint loading validates magic and scalar width") {
    const std::string path = "test_model_ckpt_bad.bin";
    {
        std::ofstream os(path);
        os << "not-a-checkpoint\n";
    }
    CHECK_THROWS_AS(load_checkpoint<float>(path), CheckpointError);
    Model<float> model(tiny_config(), 1);
    save_checkpoint(model, path);
    CHECK_THROWS_AS(load_checkpoint<double>(path), CheckpointError);
    CHECK_NOTHROW(load_checkpoint<float>(path));
    std::remove(path.c_str());
    CHECK_THROWS_AS(load_checkpoint<float>(path), CheckpointError);
}

TEST_CASE("checkpoint preserves the variant through the embedded config") {
    const std::string path = "test_model_ckpt_var.bin";
    ModelConfig c = tiny_config();
    c.variant = Variant::dilated;
    c.dilation = 7;
    Model<float> model(c, 21);
    save_checkpoint(model, path);
    Model<float> loaded = load_checkpoint<float>(path);
    CHECK(loaded.config.variant == Variant::dilated);
    CHECK(loaded.config.dilation == 7);
    std::remove(path.c_str());
}
