#pragma once

// Training harness: seeded shuffling, minibatch Adam on the configured
// loss, per-epoch test-split metrics, periodic checkpoints. Single
// threaded and fully reproducible per seed.

#include <iostream>

#include "ddnet/checkpoint.hpp"
#include "ddnet/data_io.hpp"
#include "ddnet/losses.hpp"
#include "ddnet/model.hpp"
#include "ddnet/optim.hpp"

namespace ddnet {

struct TrainConfig {
    ModelConfig model;
    LossKind loss = LossKind::mse;
    double learning_rate = 1e-4;
    int batch_size = 16;
    int epochs = 500;
    std::uint64_t seed = 0;
    int checkpoint_interval = 50;

    void validate() const {
        model.validate();
        // zero is permitted: a no-op run is useful for reproducibility checks
        if (learning_rate < 0)
            throw std::invalid_argument("learning_rate must be >= 0");
        if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
        if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    }
};

inline LossKind loss_from_name(const std::string& s) {
    if (s == "mse") return LossKind::mse;
    if (s == "bce") return LossKind::bce;
    if (s == "ssim") return LossKind::ssim_negation;
    throw std::invalid_argument("unknown loss: " + s);
}

// "[section]" headers with "key = value" lines; '#' comments.
inline TrainConfig parse_train_config(std::istream& is) {
    TrainConfig cfg;
    std::string line, section;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            if (b == std::string::npos) return std::string();
            const auto e = s.find_last_not_of(" \t\r");
            return s.substr(b, e - b + 1);
        };
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[' && line.back() == ']') {
            section = line.substr(1, line.size() - 2);
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(lineno) +
                                        ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (section == "model") {
            if (key == "input_size") {
                cfg.model.input_h = cfg.model.input_w = std::stoi(value);
            } else {
                detail::apply_config_line(cfg.model, key, value);
            }
        } else if (section == "train") {
            if (key == "loss") cfg.loss = loss_from_name(value);
            else if (key == "learning_rate") cfg.learning_rate = std::stod(value);
            else if (key == "batch_size") cfg.batch_size = std::stoi(value);
            else if (key == "epochs") cfg.epochs = std::stoi(value);
            else if (key == "seed") cfg.seed = std::stoull(value);
            else if (key == "checkpoint_interval")
                cfg.checkpoint_interval = std::stoi(value);
            else
                throw std::invalid_argument("unknown train key: " + key);
        } else {
            throw std::invalid_argument("unknown config section: " + section);
        }
    }
    return cfg;
}

inline TrainConfig parse_train_config_file(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open config: " + path.string());
    return parse_train_config(is);
}

template <typename T>
Tensor4<T> stack_batch(const std::vector<Tensor4<T>>& items, std::size_t begin,
                       std::size_t end) {
    const Shape& s = items[begin].shape();
    Tensor4<T> out(Shape{static_cast<int>(end - begin), s.c, s.h, s.w});
    const std::size_t per = s.numel();
    for (std::size_t i = begin; i < end; ++i)
        std::copy(items[i].data().begin(), items[i].data().end(),
                  out.data().begin() + (i - begin) * per);
    return out;
}

struct TrainSample {
    std::string name;
    Tensor4<float> image;   // (1,3,h,w)
    Tensor4<float> target;  // (1,1,h,w)
    GroundTruthMask mask;
};

inline std::vector<TrainSample> load_samples(const DatasetManifest& m,
                                             int target_size) {
    std::vector<TrainSample> out;
    out.reserve(m.pairs.size());
    for (const auto& [img_rel, mask_rel] : m.pairs) {
        auto [image, mask] =
            load_pair<float>(m.root / img_rel, m.root / mask_rel, target_size);
        Tensor4<float> target = tensor_from_mask<float>(mask);
        out.push_back({fs::path(img_rel).stem().string(), std::move(image),
                       std::move(target), std::move(mask)});
    }
    return out;
}

struct EpochLog {
    int epoch;
    double mean_loss;
    MetricReport metrics;
};

struct TrainResult {
    std::vector<EpochLog> epochs;
    fs::path final_checkpoint;
};

template <typename T>
MetricReport evaluate_model(Model<T>& model,
                            const std::vector<TrainSample>& test_set) {
    if (test_set.empty()) return MetricReport{};
    const NormMode saved = model.mode;
    model.mode = NormMode::eval;
    std::vector<NamedPair> pairs;
    pairs.reserve(test_set.size());
    for (const auto& s : test_set) {
        Tensor4<T> input(s.image.shape());
        std::copy(s.image.data().begin(), s.image.data().end(),
                  input.data().begin());
        Tensor4<T> pred = model.forward(nullptr, input);
        pairs.push_back({s.name, map_from_tensor(pred), s.mask});
    }
    model.mode = saved;
    return evaluate_pairs(pairs);
}

inline TrainResult train(const TrainConfig& cfg,
                         const DatasetManifest& train_manifest,
                         const DatasetManifest& test_manifest,
                         const fs::path& out_dir, std::ostream& log) {
    cfg.validate();
    if (train_manifest.pairs.empty())
        throw DataError("train: empty manifest");
    fs::create_directories(out_dir);

    auto train_set = load_samples(train_manifest, cfg.model.input_h);
    auto test_set = load_samples(test_manifest, cfg.model.input_h);

    Model<float> model(cfg.model, cfg.seed);
    model.mode = NormMode::train;
    auto params = model.parameters();
    AdamState<float> adam(params);
    std::mt19937 shuffle_rng(static_cast<std::uint32_t>(cfg.seed) ^ 0x9e3779b9u);

    std::vector<std::size_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    TrainResult result;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double loss_sum = 0;
        std::size_t batches = 0;
        for (std::size_t b = 0; b < order.size();
             b += static_cast<std::size_t>(cfg.batch_size), ++batches) {
            const std::size_t e =
                std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size));
            std::vector<Tensor4<float>> images, targets;
            for (std::size_t i = b; i < e; ++i) {
                images.push_back(train_set[order[i]].image);
                targets.push_back(train_set[order[i]].target);
            }
            Tensor4<float> x = stack_batch(images, 0, images.size());
            Tensor4<float> t = stack_batch(targets, 0, targets.size());

            Tape<float> tape;
            Tensor4<float> pred = model.forward(&tape, x);
            Tensor4<float> loss = loss_forward(&tape, cfg.loss, pred, t);
            const double loss_value = loss.item();
            if (!std::isfinite(loss_value))
                throw NumericError("non-finite loss in epoch " +
                                   std::to_string(epoch) + ", batch " +
                                   std::to_string(batches));
            loss_sum += loss_value;
            tape.backward(loss);
            adam_step(params, adam, static_cast<float>(cfg.learning_rate));
            model.zero_grad();
        }

        EpochLog entry;
        entry.epoch = epoch;
        entry.mean_loss = loss_sum / static_cast<double>(batches);
        entry.metrics = evaluate_model(model, test_set);
        result.epochs.push_back(entry);
        log << "epoch " << epoch << " loss " << entry.mean_loss << " E "
            << entry.metrics.e_measure << " S " << entry.metrics.s_measure
            << " Wf " << entry.metrics.weighted_f << " F "
            << entry.metrics.f_measure << " MAE " << entry.metrics.mae << "\n";
        log.flush();

        if (cfg.checkpoint_interval > 0 && epoch % cfg.checkpoint_interval == 0 &&
            epoch != cfg.epochs) {
            save_checkpoint(model,
                            (out_dir / ("checkpoint_epoch_" +
                                        std::to_string(epoch) + ".ckpt"))
                                .string());
        }
    }

    result.final_checkpoint = out_dir / "model.ckpt";
    save_checkpoint(model, result.final_checkpoint.string());
    return result;
}

}  // namespace ddnet
