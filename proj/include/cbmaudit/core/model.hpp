#pragma once

// Concept bottleneck composition f(g(x)): an encoder ending in the single
// sigmoid bottleneck and a task predictor on the concept probabilities.

#include "cbmaudit/common/error.hpp"
#include "cbmaudit/core/network.hpp"

#include <vector>

namespace cbmaudit::core {

struct ConvBlock {
    std::size_t channels = 16;
    bool pool = true;
};

struct EncoderConfig {
    std::size_t in_channels = 3;
    std::size_t image_size = 96;
    std::vector<ConvBlock> blocks{{8, true}, {16, true}, {32, true}, {32, true}};
    bool global_pool = true;          ///< last block pools over the whole remaining map
    std::vector<std::size_t> hidden;  ///< linear widths between the conv stack and the k outputs
    std::size_t concepts = 52;
    bool batch_norm = true;
    bool bias = true;
};

struct PredictorConfig {
    std::size_t concepts = 52;
    std::size_t hidden = 64;
    std::size_t classes = 6;
    bool bias = true;
};

/// VGG-11 conv stack (with batch norm) and its three-layer classifier head.
inline EncoderConfig vgg11_encoder(std::size_t image_size, std::size_t concepts)
{
    EncoderConfig cfg;
    cfg.image_size = image_size;
    cfg.concepts = concepts;
    cfg.blocks = {{64, true}, {128, true}, {256, false}, {256, true}, {512, false}, {512, true}, {512, false}, {512, true}};
    cfg.global_pool = false;
    cfg.hidden = {4096, 4096};
    return cfg;
}

/// conv -> [bn] -> relu -> [pool] per block, flatten, linears, sigmoid.
/// With global_pool the last block's pool spans the whole feature map.
inline std::vector<LayerSpec> encoder_specs(const EncoderConfig& cfg)
{
    require(!cfg.blocks.empty() && cfg.concepts > 0, ErrorKind::invalid_argument, "empty encoder configuration");
    std::vector<LayerSpec> specs;
    std::size_t channels = cfg.in_channels, size = cfg.image_size;
    for (std::size_t i = 0; i < cfg.blocks.size(); ++i) {
        const auto& b = cfg.blocks[i];
        specs.push_back(Conv2d{channels, b.channels, 3, 1, 1, cfg.bias});
        if (cfg.batch_norm) specs.push_back(BatchNorm2d{b.channels});
        specs.push_back(ReLU{});
        if (cfg.global_pool && i + 1 == cfg.blocks.size()) {
            specs.push_back(MaxPool2d{size, size});
            size = 1;
        } else if (b.pool) {
            require(size >= 2, ErrorKind::invalid_argument, "too many pooling stages for the image size");
            specs.push_back(MaxPool2d{2, 2});
            size /= 2;
        }
        channels = b.channels;
    }
    specs.push_back(Flatten{});
    std::size_t width = channels * size * size;
    for (std::size_t h : cfg.hidden) {
        specs.push_back(Linear{width, h, cfg.bias});
        specs.push_back(ReLU{});
        width = h;
    }
    specs.push_back(Linear{width, cfg.concepts, cfg.bias});
    specs.push_back(Sigmoid{});
    return specs;
}

inline std::vector<LayerSpec> predictor_specs(const PredictorConfig& cfg)
{
    return {Linear{cfg.concepts, cfg.hidden, cfg.bias}, ReLU{}, Linear{cfg.hidden, cfg.classes, cfg.bias}};
}

template <typename T>
struct ConceptModel {
    Network<T> encoder;
    Network<T> predictor;
    Shape input_shape{1, 3, 96, 96}; ///< per-sample shape, batch dimension 1

    std::size_t concepts() const { return encoder_output_width(); }

    std::size_t encoder_output_width() const { return encoder.output_shape_for(input_shape)[1]; }

    /// Index of the bottleneck sigmoid (always the encoder's last layer).
    std::size_t bottleneck_index() const { return encoder.size() - 1; }

    /// Index of the layer producing the pre-sigmoid concept scores.
    std::size_t score_layer() const { return encoder.size() - 2; }

    /// Checks the g -> f composition contract.
    void validate() const
    {
        require(encoder.size() >= 2, ErrorKind::invalid_argument, "encoder too short");
        auto sig = encoder.sigmoid_index();
        require(sig.has_value() && *sig == encoder.size() - 1, ErrorKind::invalid_argument,
                "encoder must end with the sigmoid bottleneck");
        require(!predictor.sigmoid_index().has_value(), ErrorKind::invalid_argument,
                "only one sigmoid may sit at the bottleneck");
        const Shape enc_out = encoder.output_shape_for(input_shape);
        require(enc_out[2] == 1 && enc_out[3] == 1, ErrorKind::shape_mismatch, "encoder must output a vector");
        predictor.output_shape_for(enc_out);
    }

    std::size_t classes() const { return predictor.output_shape_for(encoder.output_shape_for(input_shape))[1]; }
};

template <typename T>
ConceptModel<T> make_model(const EncoderConfig& enc, const PredictorConfig& pred, std::uint64_t seed)
{
    ConceptModel<T> m{Network<T>(encoder_specs(enc), Role::encoder), Network<T>(predictor_specs(pred), Role::predictor),
                      Shape{1, enc.in_channels, enc.image_size, enc.image_size}};
    m.validate();
    m.encoder.initialize(stable_hash(seed, "encoder-init"));
    m.predictor.initialize(stable_hash(seed, "predictor-init"));
    return m;
}

} // namespace cbmaudit::core
