// Command-line harness: training, inference, evaluation, gradient
// checking, synthetic data generation, and parameter accounting.
//
// Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.

#include <chrono>
#include <iostream>

#include <CLI11.hpp>

#include "ddnet/checkpoint.hpp"
#include "ddnet/data_io.hpp"
#include "ddnet/gradcheck_suite.hpp"
#include "ddnet/train.hpp"

namespace {

using namespace ddnet;

int cmd_synth(int n, int size, std::uint64_t seed, const std::string& out) {
    auto [train_path, test_path] = synth_generate(n, size, seed, out);
    std::cout << "wrote " << n << " pairs under " << out << "\n"
              << "train manifest: " << train_path.string() << "\n"
              << "test manifest:  " << test_path.string() << "\n";
    return 0;
}

int cmd_train(TrainConfig cfg, const std::string& train_manifest,
              const std::string& test_manifest, const std::string& out) {
    DatasetManifest train_m = load_manifest(train_manifest, "train");
    DatasetManifest test_m = load_manifest(test_manifest, "test");
    TrainResult result = train(cfg, train_m, test_m, out, std::cout);
    std::cout << "final checkpoint: " << result.final_checkpoint.string()
              << "\n";
    return 0;
}

int cmd_infer(const std::string& checkpoint, const std::string& image_dir,
              const std::string& out_dir, bool binarize) {
    Model<float> model = load_checkpoint<float>(checkpoint);
    fs::create_directories(out_dir);

    std::vector<fs::path> images;
    for (const auto& e : fs::directory_iterator(image_dir)) {
        const auto ext = e.path().extension().string();
        if (ext == ".png" || ext == ".jpg" || ext == ".jpeg")
            images.push_back(e.path());
    }
    std::sort(images.begin(), images.end());
    if (images.empty()) throw DataError("no images in " + image_dir);

    double total_ms = 0;
    for (const auto& path : images) {
        cv::Mat native = cv::imread(path.string(), cv::IMREAD_COLOR);
        if (native.empty()) throw DataError("cannot decode: " + path.string());
        Tensor4<float> x =
            load_image<float>(path, model.config.input_h, model.config.input_w);
        const auto start = std::chrono::steady_clock::now();
        Tensor4<float> pred = model.forward(nullptr, x);
        const auto stop = std::chrono::steady_clock::now();
        const double ms =
            std::chrono::duration<double, std::milli>(stop - start).count();
        total_ms += ms;

        SaliencyMap map = resize_map_bilinear(map_from_tensor(pred),
                                              native.rows, native.cols);
        if (binarize)
            for (auto& v : map.v) v = v >= 0.5 ? 1.0 : 0.0;
        save_saliency(map, fs::path(out_dir) / (path.stem().string() + ".png"));
        std::cout << path.filename().string() << " " << ms << " ms\n";
    }
    std::cout << "mean " << total_ms / images.size() << " ms over "
              << images.size() << " images\n";
    return 0;
}

int cmd_eval(const std::string& pred_dir, const std::string& gt_dir,
             const std::string& csv_path) {
    auto pairs = load_eval_pairs(pred_dir, gt_dir);
    std::vector<PairScore> rows;
    MetricReport report = evaluate_pairs(pairs, &rows);
    if (!csv_path.empty()) {
        std::ofstream os(csv_path, std::ios::binary);
        if (!os) throw DataError("cannot write " + csv_path);
        write_report_csv(os, rows, report);
    }
    std::cout << format_report_table(report);
    return 0;
}

int cmd_gradcheck(const std::string& scope) {
    bool any_failed = false;
    auto print = [&any_failed](const SuiteRow& row) {
        std::cout << (row.passed() ? "pass " : "FAIL ") << row.name << " "
                  << row.max_rel_error << " (threshold " << row.threshold
                  << ")\n";
        any_failed = any_failed || !row.passed();
    };
    if (scope == "ops") {
        for (const auto& row : gradcheck_ops(10)) print(row);
    } else if (scope == "model") {
        print(gradcheck_model());
    } else {
        std::cerr << "unknown scope: " << scope << " (want ops|model)\n";
        return 1;
    }
    return any_failed ? 3 : 0;
}

int cmd_params(const ModelConfig& cfg, std::uint64_t seed) {
    for (Variant v : {Variant::dense_deformable, Variant::plain_deformable}) {
        ModelConfig c = cfg;
        c.variant = v;
        Model<float> model(c, seed);
        std::cout << variant_name(v) << " parameters: " << model.param_count()
                  << "\n";
    }
    return 0;
}

void add_model_flags(CLI::App* app, ModelConfig& cfg, std::string& variant) {
    app->add_option("--input-size", cfg.input_h, "square input size");
    app->add_option("--stem-channels", cfg.stem_channels);
    app->add_option("--growth-rate", cfg.growth_rate);
    app->add_option("--deform-channels", cfg.deform_channels);
    app->add_option("--variant", variant,
                    "dense_deformable|plain_deformable|dilated");
    app->add_option("--dilation", cfg.dilation, "5 or 7 (dilated variant)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"DDNet saliency detection harness"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    int synth_n = 200, synth_size = 64;
    std::uint64_t synth_seed = 0;
    std::string synth_out = "data";
    synth->add_option("--n", synth_n, "number of pairs");
    synth->add_option("--size", synth_size, "square image size");
    synth->add_option("--seed", synth_seed);
    synth->add_option("--out", synth_out, "output directory");

    // train
    auto* train_cmd = app.add_subcommand("train", "train a model");
    std::string train_config, train_manifest, test_manifest,
        train_out = "run";
    std::string train_variant, train_loss;
    TrainConfig tcfg;
    bool desk = false;
    train_cmd->add_option("--config", train_config, "config file");
    train_cmd->add_option("--train-manifest", train_manifest)->required();
    train_cmd->add_option("--test-manifest", test_manifest)->required();
    train_cmd->add_option("--out", train_out, "output directory");
    train_cmd->add_flag("--desk", desk, "start from the desk configuration");
    train_cmd->add_option("--epochs", tcfg.epochs);
    train_cmd->add_option("--batch-size", tcfg.batch_size);
    train_cmd->add_option("--lr", tcfg.learning_rate);
    train_cmd->add_option("--seed", tcfg.seed);
    train_cmd->add_option("--loss", train_loss, "mse|bce|ssim");
    train_cmd->add_option("--checkpoint-interval", tcfg.checkpoint_interval);
    add_model_flags(train_cmd, tcfg.model, train_variant);

    // infer
    auto* infer = app.add_subcommand("infer", "run inference over a directory");
    std::string infer_ckpt, infer_images, infer_out = "maps";
    bool infer_binarize = false;
    infer->add_option("--checkpoint", infer_ckpt)->required();
    infer->add_option("--images", infer_images)->required();
    infer->add_option("--out", infer_out);
    infer->add_flag("--binarize", infer_binarize,
                    "threshold the maps at 0.5 (post-processing)");

    // eval
    auto* eval = app.add_subcommand("eval", "score predictions against masks");
    std::string eval_pred, eval_gt, eval_csv;
    eval->add_option("--pred", eval_pred)->required();
    eval->add_option("--gt", eval_gt)->required();
    eval->add_option("--csv", eval_csv, "also write a CSV report");

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "finite-difference suite");
    std::string gc_scope = "ops";
    gc->add_option("--scope", gc_scope, "ops|model");

    // params
    auto* params = app.add_subcommand("params", "report parameter counts");
    ModelConfig pcfg;
    std::string params_variant;
    bool params_desk = false;
    std::uint64_t params_seed = 0;
    params->add_flag("--desk", params_desk, "use the desk configuration");
    params->add_option("--seed", params_seed);
    add_model_flags(params, pcfg, params_variant);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*synth) return cmd_synth(synth_n, synth_size, synth_seed, synth_out);
        if (*train_cmd) {
            TrainConfig cfg;
            if (!train_config.empty())
                cfg = ddnet::parse_train_config_file(train_config);
            else if (desk) {
                cfg.model = ModelConfig::desk();
                cfg.epochs = 50;
            }
            // flags override file values
            if (train_cmd->count("--epochs")) cfg.epochs = tcfg.epochs;
            if (train_cmd->count("--batch-size")) cfg.batch_size = tcfg.batch_size;
            if (train_cmd->count("--lr")) cfg.learning_rate = tcfg.learning_rate;
            if (train_cmd->count("--seed")) cfg.seed = tcfg.seed;
            if (train_cmd->count("--checkpoint-interval"))
                cfg.checkpoint_interval = tcfg.checkpoint_interval;
            if (!train_loss.empty()) cfg.loss = ddnet::loss_from_name(train_loss);
            if (train_cmd->count("--input-size"))
                cfg.model.input_h = cfg.model.input_w = tcfg.model.input_h;
            if (train_cmd->count("--stem-channels"))
                cfg.model.stem_channels = tcfg.model.stem_channels;
            if (train_cmd->count("--growth-rate"))
                cfg.model.growth_rate = tcfg.model.growth_rate;
            if (train_cmd->count("--deform-channels"))
                cfg.model.deform_channels = tcfg.model.deform_channels;
            if (train_cmd->count("--dilation"))
                cfg.model.dilation = tcfg.model.dilation;
            if (!train_variant.empty())
                cfg.model.variant = ddnet::variant_from_name(train_variant);
            return cmd_train(cfg, train_manifest, test_manifest, train_out);
        }
        if (*infer)
            return cmd_infer(infer_ckpt, infer_images, infer_out, infer_binarize);
        if (*eval) return cmd_eval(eval_pred, eval_gt, eval_csv);
        if (*gc) return cmd_gradcheck(gc_scope);
        if (*params) {
            if (params_desk) {
                const ModelConfig desk_cfg = ModelConfig::desk();
                ModelConfig c = desk_cfg;
                if (params->count("--input-size"))
                    c.input_h = c.input_w = pcfg.input_h;
                if (params->count("--stem-channels"))
                    c.stem_channels = pcfg.stem_channels;
                if (params->count("--growth-rate"))
                    c.growth_rate = pcfg.growth_rate;
                if (params->count("--deform-channels"))
                    c.deform_channels = pcfg.deform_channels;
                return cmd_params(c, params_seed);
            }
            return cmd_params(pcfg, params_seed);
        }
    } catch (const ddnet::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const ddnet::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const ddnet::CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
