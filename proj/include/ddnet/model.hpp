#pragma once

// DDNet assembly: dense-block encoder with a transition layer, densely
// connected deformable block (with plain and dilated ablation variants),
// transposed-convolution decoder with bilinear upsampling, logistic output.
// The network maps (n,3,h,w) -> (n,1,h,w) for h,w divisible by 8.

#include <functional>

#include "ddnet/deform.hpp"
#include "ddnet/nn_ops.hpp"
#include "ddnet/tensor.hpp"

namespace ddnet {

enum class Variant { dense_deformable, plain_deformable, dilated };

inline const char* variant_name(Variant v) {
    switch (v) {
        case Variant::dense_deformable: return "dense_deformable";
        case Variant::plain_deformable: return "plain_deformable";
        case Variant::dilated: return "dilated";
    }
    return "?";
}

inline Variant variant_from_name(const std::string& s) {
    if (s == "dense_deformable") return Variant::dense_deformable;
    if (s == "plain_deformable") return Variant::plain_deformable;
    if (s == "dilated") return Variant::dilated;
    throw std::invalid_argument("unknown variant: " + s);
}

struct ModelConfig {
    int input_h = 224, input_w = 224;
    int stem_channels = 64;
    int growth_rate = 32;
    int block1_layers = 6;
    int block2_layers = 12;
    int deform_layers = 3;
    int deform_channels = 64;
    Variant variant = Variant::dense_deformable;
    int dilation = 5;  // used by the dilated variant only; 5 or 7

    static ModelConfig full() { return ModelConfig{}; }

    // Reduced configuration for tests and desk-scale training.
    static ModelConfig desk() {
        ModelConfig c;
        c.input_h = c.input_w = 64;
        c.stem_channels = 16;
        c.growth_rate = 8;
        c.deform_channels = 16;
        return c;
    }

    void validate() const {
        if (input_h % 8 != 0 || input_w % 8 != 0)
            throw std::invalid_argument("input size must be divisible by 8");
        if (stem_channels < 1 || growth_rate < 1 || deform_channels < 1 ||
            block1_layers < 1 || block2_layers < 1 || deform_layers < 1)
            throw std::invalid_argument("config fields must be positive");
        if (variant == Variant::dilated && dilation != 5 && dilation != 7)
            throw std::invalid_argument("dilated variant permits d in {5,7}");
    }
};

template <typename T>
struct ConvLayer {
    ConvSpec spec;
    Tensor4<T> weight;
    Tensor4<T> bias;  // undefined when spec.has_bias is false

    ConvLayer() = default;
    ConvLayer(const ConvSpec& s, std::mt19937& rng) : spec(s) {
        weight =
            Tensor4<T>(Shape{s.out_channels, s.in_channels, s.kh, s.kw}, true);
        const T fan_in = static_cast<T>(s.in_channels * s.kh * s.kw);
        fill_random_normal(weight, rng, std::sqrt(T(2) / fan_in));
        if (s.has_bias) bias = Tensor4<T>(Shape{1, s.out_channels, 1, 1}, true);
    }
    Tensor4<T> forward(Tape<T>* tape, const Tensor4<T>& x) const {
        return conv2d(tape, x, weight, spec.has_bias ? &bias : nullptr, spec);
    }
};

template <typename T>
struct TransposedConvLayer {
    ConvSpec spec;  // in_channels/out_channels from the layer's own viewpoint
    Tensor4<T> weight;

    TransposedConvLayer() = default;
    TransposedConvLayer(const ConvSpec& s, std::mt19937& rng) : spec(s) {
        weight =
            Tensor4<T>(Shape{s.in_channels, s.out_channels, s.kh, s.kw}, true);
        const T fan_in = static_cast<T>(s.in_channels * s.kh * s.kw);
        fill_random_normal(weight, rng, std::sqrt(T(2) / fan_in));
    }
    Tensor4<T> forward(Tape<T>* tape, const Tensor4<T>& x) const {
        return transposed_conv2d(tape, x, weight, spec);
    }
};

// One dense-block layer: BN -> relu -> 1x1 bottleneck (4*growth) ->
// BN -> relu -> 3x3 pad 1 (growth).
template <typename T>
struct DenseLayer {
    BatchNormState<T> bn1;
    ConvLayer<T> bottleneck;
    BatchNormState<T> bn2;
    ConvLayer<T> conv3x3;

    DenseLayer(int in_channels, int growth, std::mt19937& rng)
        : bn1(in_channels),
          bottleneck(ConvSpec::k1(in_channels, 4 * growth, /*bias=*/false),
                     rng),
          bn2(4 * growth),
          conv3x3(ConvSpec::k3(4 * growth, growth, 1, 1, 1, /*bias=*/false),
                  rng) {}

    Tensor4<T> forward(Tape<T>* tape, const Tensor4<T>& x, NormMode mode) {
        Tensor4<T> y = relu(tape, batch_norm(tape, x, bn1, mode));
        y = bottleneck.forward(tape, y);
        y = relu(tape, batch_norm(tape, y, bn2, mode));
        return conv3x3.forward(tape, y);
    }
};

// Each layer consumes the concatenation of the block input and all
// previous layer outputs; block output channels = in + layers*growth.
template <typename T>
Tensor4<T> dense_block(Tape<T>* tape, std::vector<DenseLayer<T>>& layers,
                       const Tensor4<T>& x, NormMode mode) {
    std::vector<Tensor4<T>> features{x};
    for (auto& layer : layers) {
        Tensor4<T> in = features.size() == 1 ? features.front()
                                             : concat_channels(tape, features);
        features.push_back(layer.forward(tape, in, mode));
    }
    return concat_channels(tape, features);
}

template <typename T>
class Model {
public:
    ModelConfig config;

    Model() = default;
    Model(const ModelConfig& cfg, std::uint64_t seed) : config(cfg) {
        cfg.validate();
        std::mt19937 rng(static_cast<std::uint32_t>(seed));

        stem_conv_ = ConvLayer<T>(
            ConvSpec{3, cfg.stem_channels, 7, 7, 2, 2, 3, 3, 1, 1, false},
            rng);
        stem_bn_ = std::make_unique<BatchNormState<T>>(cfg.stem_channels);

        int c = cfg.stem_channels;
        for (int i = 0; i < cfg.block1_layers; ++i) {
            block1_.emplace_back(c + i * cfg.growth_rate, cfg.growth_rate, rng);
        }
        c += cfg.block1_layers * cfg.growth_rate;

        trans_bn_ = std::make_unique<BatchNormState<T>>(c);
        const int trans_out = c / 2;
        trans_conv_ = ConvLayer<T>(ConvSpec::k1(c, trans_out, false), rng);
        c = trans_out;

        for (int i = 0; i < cfg.block2_layers; ++i) {
            block2_.emplace_back(c + i * cfg.growth_rate, cfg.growth_rate, rng);
        }
        c += cfg.block2_layers * cfg.growth_rate;

        proj_bn_ = std::make_unique<BatchNormState<T>>(c);
        proj_conv_ = ConvLayer<T>(ConvSpec::k1(c, cfg.deform_channels), rng);

        const int dc = cfg.deform_channels;
        for (int i = 0; i < cfg.deform_layers; ++i) {
            const int in = deform_in_channels(i);
            if (cfg.variant == Variant::dilated) {
                dilated_.emplace_back(
                    ConvSpec::k3(in, dc, 1, cfg.dilation, cfg.dilation), rng);
            } else {
                deform_.emplace_back(
                    DeformSpec{ConvSpec::k3(in, dc)}, rng);
            }
        }

        const int d1 = std::max(1, dc / 2), d2 = std::max(1, dc / 4);
        dec1_ = TransposedConvLayer<T>(
            ConvSpec{dc, d1, 4, 4, 2, 2, 1, 1, 1, 1, false}, rng);
        dec2_ = TransposedConvLayer<T>(
            ConvSpec{d1, d2, 3, 3, 1, 1, 1, 1, 1, 1, false}, rng);
        dec3_ = TransposedConvLayer<T>(
            ConvSpec{d2, 1, 3, 3, 1, 1, 1, 1, 1, 1, false}, rng);
    }

    int deform_in_channels(int layer_index) const {
        const int dc = config.deform_channels;
        // plain wiring: layer i reads the previous output only
        if (config.variant == Variant::plain_deformable) return dc;
        return dc + layer_index * dc;  // dense concatenation
    }

    NormMode mode = NormMode::train;

    Tensor4<T> forward(Tape<T>* tape, const Tensor4<T>& x) {
        const Shape& xs = x.shape();
        if (xs.c != 3 || xs.h % 8 != 0 || xs.w % 8 != 0)
            throw ShapeError("model input must be (n,3,h,w), h,w % 8 == 0");

        Tensor4<T> y = stem_conv_.forward(tape, x);
        y = relu(tape, batch_norm(tape, y, *stem_bn_, mode));
        y = max_pool(tape, y, 2, 2);

        y = dense_block(tape, block1_, y, mode);
        y = relu(tape, batch_norm(tape, y, *trans_bn_, mode));
        y = trans_conv_.forward(tape, y);
        y = avg_pool(tape, y, 2, 2);

        y = dense_block(tape, block2_, y, mode);
        y = relu(tape, batch_norm(tape, y, *proj_bn_, mode));
        y = relu(tape, proj_conv_.forward(tape, y));

        y = deform_block_forward(tape, y);
        return decoder_forward(tape, y);
    }

    Tensor4<T> deform_block_forward(Tape<T>* tape, const Tensor4<T>& x) {
        std::vector<Tensor4<T>> features{x};
        Tensor4<T> y = x;
        for (int i = 0; i < config.deform_layers; ++i) {
            Tensor4<T> in;
            if (config.variant == Variant::plain_deformable) {
                in = y;
            } else {
                in = features.size() == 1 ? features.front()
                                          : concat_channels(tape, features);
            }
            Tensor4<T> out = config.variant == Variant::dilated
                                 ? dilated_[i].forward(tape, in)
                                 : deform_layer_forward(tape, in, deform_[i]);
            y = relu(tape, out);
            features.push_back(y);
        }
        return y;
    }

    Tensor4<T> decoder_forward(Tape<T>* tape, const Tensor4<T>& x) {
        Tensor4<T> y = relu(tape, dec1_.forward(tape, x));
        y = bilinear_upsample(tape, y, 2);
        y = relu(tape, dec2_.forward(tape, y));
        y = bilinear_upsample(tape, y, 2);
        return sigmoid(tape, dec3_.forward(tape, y));
    }

    // Visits every stored array in a stable order. Trainable parameters
    // carry trainable=true; batch-norm running statistics are buffers.
    struct ArrayRef {
        std::string name;
        Tensor4<T>* tensor = nullptr;       // for parameters
        std::vector<T>* buffer = nullptr;   // for running stats
        bool trainable = false;
    };

    std::vector<ArrayRef> arrays() {
        std::vector<ArrayRef> out;
        auto param = [&out](const std::string& name, Tensor4<T>& t) {
            out.push_back({name, &t, nullptr, true});
        };
        auto bn = [&](const std::string& prefix, BatchNormState<T>& s) {
            param(prefix + ".gamma", s.gamma);
            param(prefix + ".beta", s.beta);
            out.push_back({prefix + ".running_mean", nullptr, &s.running_mean,
                           false});
            out.push_back({prefix + ".running_var", nullptr, &s.running_var,
                           false});
        };
        auto conv = [&](const std::string& prefix, ConvLayer<T>& c) {
            param(prefix + ".weight", c.weight);
            if (c.spec.has_bias) param(prefix + ".bias", c.bias);
        };

        conv("stem.conv", stem_conv_);
        bn("stem.bn", *stem_bn_);
        for (std::size_t i = 0; i < block1_.size(); ++i) {
            const std::string p = "encoder.block1.layer" + std::to_string(i);
            bn(p + ".bn1", block1_[i].bn1);
            conv(p + ".conv1x1", block1_[i].bottleneck);
            bn(p + ".bn2", block1_[i].bn2);
            conv(p + ".conv3x3", block1_[i].conv3x3);
        }
        bn("encoder.transition.bn", *trans_bn_);
        conv("encoder.transition.conv1x1", trans_conv_);
        for (std::size_t i = 0; i < block2_.size(); ++i) {
            const std::string p = "encoder.block2.layer" + std::to_string(i);
            bn(p + ".bn1", block2_[i].bn1);
            conv(p + ".conv1x1", block2_[i].bottleneck);
            bn(p + ".bn2", block2_[i].bn2);
            conv(p + ".conv3x3", block2_[i].conv3x3);
        }
        bn("projection.bn", *proj_bn_);
        conv("projection.conv1x1", proj_conv_);
        for (std::size_t i = 0; i < deform_.size(); ++i) {
            const std::string p = "deform.layer" + std::to_string(i);
            param(p + ".weight", deform_[i].weight);
            param(p + ".bias", deform_[i].bias);
            param(p + ".offset.weight", deform_[i].offset_weight);
            param(p + ".offset.bias", deform_[i].offset_bias);
        }
        for (std::size_t i = 0; i < dilated_.size(); ++i) {
            conv("deform.layer" + std::to_string(i) + ".dilated", dilated_[i]);
        }
        param("decoder.tconv1.weight", dec1_.weight);
        param("decoder.tconv2.weight", dec2_.weight);
        param("decoder.tconv3.weight", dec3_.weight);
        return out;
    }

    std::vector<Parameter<T>> parameters() {
        std::vector<Parameter<T>> out;
        for (auto& a : arrays())
            if (a.trainable) out.push_back({a.name, *a.tensor});
        return out;
    }

    std::size_t param_count() {
        std::size_t n = 0;
        for (auto& a : arrays())
            if (a.trainable) n += a.tensor->numel();
        return n;
    }

    void zero_grad() {
        for (auto& a : arrays())
            if (a.trainable) a.tensor->zero_grad();
    }

    // spec list for the adjointness acceptance check
    std::vector<ConvSpec> all_conv_specs() {
        std::vector<ConvSpec> specs{stem_conv_.spec};
        for (auto& l : block1_) {
            specs.push_back(l.bottleneck.spec);
            specs.push_back(l.conv3x3.spec);
        }
        specs.push_back(trans_conv_.spec);
        for (auto& l : block2_) {
            specs.push_back(l.bottleneck.spec);
            specs.push_back(l.conv3x3.spec);
        }
        specs.push_back(proj_conv_.spec);
        for (auto& d : deform_) {
            specs.push_back(d.spec.base);
            specs.push_back(d.offset_spec);
        }
        for (auto& d : dilated_) specs.push_back(d.spec);
        specs.push_back(dec1_.spec);
        specs.push_back(dec2_.spec);
        specs.push_back(dec3_.spec);
        return specs;
    }

    std::vector<DeformLayer<T>>& deform_layers() { return deform_; }

private:
    ConvLayer<T> stem_conv_;
    std::unique_ptr<BatchNormState<T>> stem_bn_;
    std::vector<DenseLayer<T>> block1_, block2_;
    std::unique_ptr<BatchNormState<T>> trans_bn_;
    ConvLayer<T> trans_conv_;
    std::unique_ptr<BatchNormState<T>> proj_bn_;
    ConvLayer<T> proj_conv_;
    std::vector<DeformLayer<T>> deform_;
    std::vector<ConvLayer<T>> dilated_;
    TransposedConvLayer<T> dec1_, dec2_, dec3_;
};

}  // namespace ddnet
