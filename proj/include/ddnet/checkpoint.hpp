#pragma once

// Model checkpoints: a text header describing the config and every named
// array (name, dims, scalar width), followed by a little-endian binary
// payload in header order.

#include <cstring>
#include <fstream>
#include <sstream>

#include "ddnet/model.hpp"

namespace ddnet {

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

template <typename T>
constexpr const char* scalar_name() {
    if constexpr (std::is_same_v<T, float>) return "float32";
    else return "float64";
}

inline void config_to_header(std::ostream& os, const ModelConfig& c) {
    os << "config input_h " << c.input_h << "\n"
       << "config input_w " << c.input_w << "\n"
       << "config stem_channels " << c.stem_channels << "\n"
       << "config growth_rate " << c.growth_rate << "\n"
       << "config block1_layers " << c.block1_layers << "\n"
       << "config block2_layers " << c.block2_layers << "\n"
       << "config deform_layers " << c.deform_layers << "\n"
       << "config deform_channels " << c.deform_channels << "\n"
       << "config variant " << variant_name(c.variant) << "\n"
       << "config dilation " << c.dilation << "\n";
}

inline void apply_config_line(ModelConfig& c, const std::string& key,
                              const std::string& value) {
    if (key == "input_h") c.input_h = std::stoi(value);
    else if (key == "input_w") c.input_w = std::stoi(value);
    else if (key == "stem_channels") c.stem_channels = std::stoi(value);
    else if (key == "growth_rate") c.growth_rate = std::stoi(value);
    else if (key == "block1_layers") c.block1_layers = std::stoi(value);
    else if (key == "block2_layers") c.block2_layers = std::stoi(value);
    else if (key == "deform_layers") c.deform_layers = std::stoi(value);
    else if (key == "deform_channels") c.deform_channels = std::stoi(value);
    else if (key == "variant") c.variant = variant_from_name(value);
    else if (key == "dilation") c.dilation = std::stoi(value);
    else throw CheckpointError("unknown config key: " + key);
}

}  // namespace detail

template <typename T>
void save_checkpoint(Model<T>& model, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw CheckpointError("cannot open for writing: " + path);
    os << "ddnet-checkpoint v1\n";
    os << "scalar " << detail::scalar_name<T>() << "\n";
    detail::config_to_header(os, model.config);
    auto arrays = model.arrays();
    for (auto& a : arrays) {
        if (a.tensor) {
            const Shape& s = a.tensor->shape();
            os << "tensor " << a.name << " " << s.n << " " << s.c << " " << s.h
               << " " << s.w << " " << (a.trainable ? 1 : 0) << "\n";
        } else {
            os << "tensor " << a.name << " 1 " << a.buffer->size()
               << " 1 1 0\n";
        }
    }
    os << "data\n";
    for (auto& a : arrays) {
        const T* src = a.tensor ? a.tensor->data().data() : a.buffer->data();
        const std::size_t len =
            a.tensor ? a.tensor->numel() : a.buffer->size();
        os.write(reinterpret_cast<const char*>(src), len * sizeof(T));
    }
    if (!os) throw CheckpointError("write failed: " + path);
}

// Rebuilds the model from the embedded config and fills every array.
template <typename T>
Model<T> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("cannot open: " + path);
    std::string line;
    if (!std::getline(is, line) || line != "ddnet-checkpoint v1")
        throw CheckpointError("bad magic in " + path);
    if (!std::getline(is, line) ||
        line != std::string("scalar ") + detail::scalar_name<T>())
        throw CheckpointError("scalar width mismatch in " + path);

    ModelConfig cfg;
    struct Entry {
        std::string name;
        Shape shape;
    };
    std::vector<Entry> entries;
    while (std::getline(is, line)) {
        if (line == "data") break;
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag == "config") {
            std::string key, value;
            ls >> key >> value;
            detail::apply_config_line(cfg, key, value);
        } else if (tag == "tensor") {
            Entry e;
            int trainable;
            ls >> e.name >> e.shape.n >> e.shape.c >> e.shape.h >> e.shape.w >>
                trainable;
            entries.push_back(e);
        } else {
            throw CheckpointError("unexpected header line: " + line);
        }
    }

    Model<T> model(cfg, /*seed=*/0);
    auto arrays = model.arrays();
    if (arrays.size() != entries.size())
        throw CheckpointError("array count mismatch: checkpoint has " +
                              std::to_string(entries.size()) + ", model has " +
                              std::to_string(arrays.size()));
    for (std::size_t i = 0; i < arrays.size(); ++i) {
        auto& a = arrays[i];
        const auto& e = entries[i];
        if (a.name != e.name)
            throw CheckpointError("array name mismatch: " + a.name + " vs " +
                                  e.name);
        T* dst = a.tensor ? a.tensor->data().data() : a.buffer->data();
        const std::size_t len = a.tensor ? a.tensor->numel() : a.buffer->size();
        if (len != e.shape.numel())
            throw CheckpointError("array size mismatch for " + a.name);
        is.read(reinterpret_cast<char*>(dst), len * sizeof(T));
        if (!is) throw CheckpointError("truncated payload in " + path);
    }
    model.mode = NormMode::eval;
    return model;
}

}  // namespace ddnet
