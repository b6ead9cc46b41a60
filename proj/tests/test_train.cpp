#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "ddnet/train.hpp"

using namespace ddnet;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name)
        : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

ModelConfig tiny_model() {
    ModelConfig c;
    c.input_h = c.input_w = 16;
    c.stem_channels = 4;
    c.growth_rate = 4;
    c.block1_layers = 1;
    c.block2_layers = 1;
    c.deform_channels = 4;
    return c;
}

TrainConfig tiny_train(int epochs = 2) {
    TrainConfig cfg;
    cfg.model = tiny_model();
    cfg.loss = LossKind::mse;
    cfg.learning_rate = 1e-3;
    cfg.batch_size = 4;
    cfg.epochs = epochs;
    cfg.seed = 11;
    cfg.checkpoint_interval = 0;
    return cfg;
}

}  // namespace

TEST_CASE("adam leaves parameters alone when gradients are zero") {
    Tensor4<float> w(Shape{1, 1, 1, 3}, {1.0f, -2.0f, 0.5f}, true);
    w.ensure_grad();
    std::vector<Parameter<float>> params{{"w", w}};
    AdamState<float> st(params);
    adam_step(params, st, 0.1f);
    CHECK(w.data() == std::vector<float>{1.0f, -2.0f, 0.5f});
}

TEST_CASE("adam first step moves each weight by about lr against the sign") {
    Tensor4<double> w(Shape{1, 1, 1, 2}, {1.0, 1.0}, true);
    w.ensure_grad();
    w.grad()[0] = 0.3;
    w.grad()[1] = -40.0;
    std::vector<Parameter<double>> params{{"w", w}};
    AdamState<double> st(params);
    adam_step(params, st, 1e-4);
    // bias-corrected m/sqrt(v) is sign(g) on the first step
    CHECK(w.data()[0] == Catch::Approx(1.0 - 1e-4).epsilon(1e-7));
    CHECK(w.data()[1] == Catch::Approx(1.0 + 1e-4).epsilon(1e-7));
}

TEST_CASE("adam validates state pairing and gradient presence") {
    Tensor4<float> w(Shape{1, 1, 1, 1}, std::vector<float>{1.0f}, true);
    w.ensure_grad();
    std::vector<Parameter<float>> params{{"w", w}};
    AdamState<float> st(params);
    std::vector<Parameter<float>> extra = params;
    Tensor4<float> w2(Shape{1, 1, 1, 1}, std::vector<float>{2.0f}, true);
    w2.ensure_grad();
    extra.push_back({"w2", w2});
    CHECK_THROWS_AS(adam_step(extra, st, 0.1f), std::invalid_argument);
}

TEST_CASE("config parser: sections, comments, defaults, and errors") {
    std::istringstream is(
        "# experiment\n"
        "[model]\n"
        "input_size = 16\n"
        "stem_channels = 4\n"
        "growth_rate = 4\n"
        "block1_layers = 1   # short\n"
        "block2_layers = 1\n"
        "deform_channels = 4\n"
        "variant = dilated\n"
        "dilation = 7\n"
        "\n"
        "[train]\n"
        "loss = bce\n"
        "learning_rate = 0.005\n"
        "batch_size = 8\n"
        "epochs = 3\n"
        "seed = 99\n");
    TrainConfig cfg = parse_train_config(is);
    CHECK(cfg.model.input_h == 16);
    CHECK(cfg.model.input_w == 16);
    CHECK(cfg.model.stem_channels == 4);
    CHECK(cfg.model.variant == Variant::dilated);
    CHECK(cfg.model.dilation == 7);
    CHECK(cfg.loss == LossKind::bce);
    CHECK(cfg.learning_rate == 0.005);
    CHECK(cfg.batch_size == 8);
    CHECK(cfg.epochs == 3);
    CHECK(cfg.seed == 99);
    CHECK(cfg.checkpoint_interval == 50);  // untouched default
    CHECK_NOTHROW(cfg.validate());

    std::istringstream bad_section("[optimizer]\nlr = 1\n");
    CHECK_THROWS_AS(parse_train_config(bad_section), std::invalid_argument);
    std::istringstream bad_key("[train]\nmomentum = 0.9\n");
    CHECK_THROWS_AS(parse_train_config(bad_key), std::invalid_argument);
    std::istringstream bad_line("[train]\nepochs\n");
    CHECK_THROWS_AS(parse_train_config(bad_line), std::invalid_argument);
}

TEST_CASE("config validation bounds") {
    TrainConfig cfg = tiny_train();
    cfg.learning_rate = 0.0;
    CHECK_NOTHROW(cfg.validate());
    cfg.learning_rate = -1e-4;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = tiny_train();
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = tiny_train();
    cfg.epochs = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("loss names map to kinds") {
    CHECK(loss_from_name("mse") == LossKind::mse);
    CHECK(loss_from_name("bce") == LossKind::bce);
    CHECK(loss_from_name("ssim") == LossKind::ssim_negation);
    CHECK_THROWS_AS(loss_from_name("dice"), std::invalid_argument);
}

TEST_CASE("stack_batch concatenates along the batch axis") {
    Tensor4<float> a(Shape{1, 2, 1, 2}, {1, 2, 3, 4});
    Tensor4<float> b(Shape{1, 2, 1, 2}, {5, 6, 7, 8});
    auto batch = stack_batch<float>({a, b}, 0, 2);
    REQUIRE(batch.shape() == Shape{2, 2, 1, 2});
    CHECK(batch.data() == std::vector<float>{1, 2, 3, 4, 5, 6, 7, 8});
    auto tail = stack_batch<float>({a, b}, 1, 2);
    CHECK(tail.shape() == Shape{1, 2, 1, 2});
    CHECK(tail.data() == b.data());
}

TEST_CASE("training runs, logs the expected format, writes a checkpoint") {
    TempDir dir("ddnet_train_run");
    auto [train_path, test_path] = synth_generate(10, 16, 3, dir.path / "data");
    const auto train_m = load_manifest(train_path, "train");
    const auto test_m = load_manifest(test_path, "test");

    std::ostringstream log;
    TrainResult result =
        train(tiny_train(2), train_m, test_m, dir.path / "out", log);

    REQUIRE(result.epochs.size() == 2);
    CHECK(result.epochs[0].epoch == 1);
    CHECK(std::isfinite(result.epochs[0].mean_loss));
    CHECK(result.epochs[0].metrics.count == 2);
    CHECK(fs::exists(result.final_checkpoint));
    CHECK(log.str().rfind("epoch 1 loss ", 0) == 0);
    CHECK(log.str().find(" MAE ") != std::string::npos);

    Model<float> restored = load_checkpoint<float>(
        result.final_checkpoint.string());
    CHECK(restored.config.input_h == 16);
}

TEST_CASE("lr = 0 leaves trainable parameters bit-identical to the init") {
    TempDir dir("ddnet_train_lr0");
    auto [train_path, test_path] = synth_generate(10, 16, 4, dir.path / "data");
    const auto train_m = load_manifest(train_path, "train");
    const auto test_m = load_manifest(test_path, "test");

    TrainConfig cfg = tiny_train(2);
    cfg.learning_rate = 0.0;
    std::ostringstream log;
    TrainResult result = train(cfg, train_m, test_m, dir.path / "out", log);

    Model<float> trained =
        load_checkpoint<float>(result.final_checkpoint.string());
    Model<float> fresh(cfg.model, cfg.seed);
    auto ta = trained.arrays();
    auto fa = fresh.arrays();
    REQUIRE(ta.size() == fa.size());
    for (std::size_t i = 0; i < ta.size(); ++i) {
        if (!ta[i].trainable) continue;  // running stats do move
        CHECK(ta[i].tensor->data() == fa[i].tensor->data());
    }
}

TEST_CASE("training is reproducible per seed") {
    TempDir dir("ddnet_train_seed");
    auto [train_path, test_path] = synth_generate(10, 16, 5, dir.path / "data");
    const auto train_m = load_manifest(train_path, "train");
    const auto test_m = load_manifest(test_path, "test");

    auto run = [&](std::uint64_t seed, const std::string& out) {
        TrainConfig cfg = tiny_train(2);
        cfg.seed = seed;
        std::ostringstream log;
        return train(cfg, train_m, test_m, dir.path / out, log);
    };
    TrainResult r1 = run(21, "o1");
    TrainResult r2 = run(21, "o2");
    TrainResult r3 = run(22, "o3");
    REQUIRE(r1.epochs.size() == r2.epochs.size());
    for (std::size_t i = 0; i < r1.epochs.size(); ++i)
        CHECK(r1.epochs[i].mean_loss == r2.epochs[i].mean_loss);
    CHECK(r1.epochs.back().mean_loss != r3.epochs.back().mean_loss);

    // the two same-seed checkpoints are byte-identical
    std::ifstream f1(r1.final_checkpoint, std::ios::binary);
    std::ifstream f2(r2.final_checkpoint, std::ios::binary);
    std::vector<char> b1((std::istreambuf_iterator<char>(f1)),
                         std::istreambuf_iterator<char>());
    std::vector<char> b2((std::istreambuf_iterator<char>(f2)),
                         std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
}

TEST_CASE("training rejects an empty train manifest") {
    TempDir dir("ddnet_train_empty");
    DatasetManifest empty;
    empty.root = dir.path;
    std::ostringstream log;
    CHECK_THROWS_AS(train(tiny_train(1), empty, empty, dir.path / "out", log),
                    DataError);
}
