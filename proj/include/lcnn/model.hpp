#ifndef LCNN_MODEL_HPP
#define LCNN_MODEL_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "lcnn/errors.hpp"
#include "lcnn/fusion.hpp"
#include "lcnn/ops.hpp"
#include "lcnn/tensor.hpp"

namespace lcnn {

enum class LayerKind { conv_relu, maxpool, avgpool, residual_block, flatten, dense, dense_relu, dropout };

inline std::string_view to_string(LayerKind kind) {
    switch (kind) {
    case LayerKind::conv_relu: return "conv_relu";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::avgpool: return "avgpool";
    case LayerKind::residual_block: return "residual_block";
    case LayerKind::flatten: return "flatten";
    case LayerKind::dense: return "dense";
    case LayerKind::dense_relu: return "dense_relu";
    case LayerKind::dropout: return "dropout";
    }
    return "?";
}

inline LayerKind parse_layer_kind(std::string_view name) {
    for (auto k : {LayerKind::conv_relu, LayerKind::maxpool, LayerKind::avgpool, LayerKind::residual_block,
                   LayerKind::flatten, LayerKind::dense, LayerKind::dense_relu, LayerKind::dropout}) {
        if (to_string(k) == name) return k;
    }
    throw ConfigError("unknown layer kind '" + std::string(name) + "'");
}

/// One layer of a backbone. Only the fields relevant to `kind` are used.
struct LayerSpec {
    LayerKind kind = LayerKind::flatten;
    std::size_t filters = 0; // conv_relu, residual_block
    std::size_t kernel = 0;  // conv_relu, residual_block, pools (window)
    std::size_t stride = 1;  // conv_relu, pools
    std::size_t padding = 0; // conv_relu, residual_block
    std::size_t units = 0;   // dense, dense_relu
    double drop = 0.0;       // dropout

    static LayerSpec conv(std::size_t filters, std::size_t kernel, std::size_t stride = 1, std::size_t padding = 0) {
        return {LayerKind::conv_relu, filters, kernel, stride, padding, 0, 0.0};
    }
    static LayerSpec max_pool(std::size_t window, std::size_t stride) {
        return {LayerKind::maxpool, 0, window, stride, 0, 0, 0.0};
    }
    static LayerSpec avg_pool(std::size_t window, std::size_t stride) {
        return {LayerKind::avgpool, 0, window, stride, 0, 0, 0.0};
    }
    static LayerSpec residual(std::size_t channels, std::size_t kernel = 3) {
        return {LayerKind::residual_block, channels, kernel, 1, kernel / 2, 0, 0.0};
    }
    static LayerSpec flat() { return {}; }
    static LayerSpec linear(std::size_t units) { return {LayerKind::dense, 0, 0, 1, 0, units, 0.0}; }
    static LayerSpec linear_relu(std::size_t units) { return {LayerKind::dense_relu, 0, 0, 1, 0, units, 0.0}; }
    static LayerSpec dropout_layer(double p) { return {LayerKind::dropout, 0, 0, 1, 0, 0, p}; }

    /// conv_relu and residual blocks are where cross-fusion attaches.
    bool fusible() const { return kind == LayerKind::conv_relu || kind == LayerKind::residual_block; }

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

enum class Topology { single, multistream_late, multistream_lattice };

inline std::string_view to_string(Topology t) {
    switch (t) {
    case Topology::single: return "single";
    case Topology::multistream_late: return "multistream_late";
    case Topology::multistream_lattice: return "multistream_lattice";
    }
    return "?";
}

inline Topology parse_topology(std::string_view name) {
    if (name == "single") return Topology::single;
    if (name == "multistream_late" || name == "late") return Topology::multistream_late;
    if (name == "multistream_lattice" || name == "lattice") return Topology::multistream_lattice;
    throw ConfigError("unknown topology '" + std::string(name) + "'");
}

/// Declarative network: backbone layers plus how many streams run them and
/// how the streams meet. Layers before the first flatten form the trunk
/// (replicated per stream); the rest form the shared head.
struct ModelSpec {
    std::string name;
    Shape input_shape{3, 32, 32}; // per stream, [C, H, W]
    std::vector<LayerSpec> layers;
    Topology topology = Topology::single;
    FusionOp fusion_op{};
    std::size_t num_classes = 10;

    std::size_t stream_count() const { return topology == Topology::single ? 1 : 2; }

    /// Index of the first head layer.
    std::size_t trunk_end() const {
        auto it = std::find_if(layers.begin(), layers.end(), [](const LayerSpec& l) { return l.kind == LayerKind::flatten; });
        return static_cast<std::size_t>(it - layers.begin());
    }

    friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// One trainable tensor of a layer, as produced by shape propagation.
struct ParamSlot {
    std::string name;
    Shape shape;
    std::size_t fan_in = 0;
};

/// Result of symbolic shape propagation.
struct ShapeTrace {
    std::vector<Shape> trunk_shapes; // output of each trunk layer, per stream, without batch axis
    Shape feature_shape;             // fused feature width entering the head, [D]
    std::vector<Shape> head_shapes;
    std::vector<ParamSlot> params;   // in deterministic creation order
    std::size_t trunk_params = 0;    // per stream
    std::size_t head_params = 0;
    std::size_t fusion_points = 0;
};

namespace detail {

inline std::size_t scaled(std::size_t full, double width_scale) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(static_cast<double>(full) * width_scale - 1e-9)));
}

inline void add_conv_slots(std::vector<ParamSlot>& out, const std::string& prefix, std::size_t in_c, std::size_t filters,
                           std::size_t kernel) {
    const std::size_t fan_in = in_c * kernel * kernel;
    out.push_back({prefix + ".weight", Shape{filters, in_c, kernel, kernel}, fan_in});
    out.push_back({prefix + ".bias", Shape{filters}, fan_in});
}

inline std::string layer_prefix(std::string_view scope, std::size_t index, LayerKind kind) {
    return std::string(scope) + "." + std::to_string(index) + "." + std::string(to_string(kind));
}

} // namespace detail

/// Validates layer compatibility and enumerates parameters. Throws
/// ConfigError on the first incompatible layer.
inline ShapeTrace propagate_shapes(const ModelSpec& spec) {
    if (spec.input_shape.size() != 3) throw ConfigError("input_shape must be [C, H, W]");
    if (spec.num_classes == 0) throw ConfigError("num_classes must be positive");
    ShapeTrace trace;
    const std::size_t trunk_end = spec.trunk_end();
    if (trunk_end == spec.layers.size()) throw ConfigError(spec.name + ": no flatten layer separates trunk and head");
    const std::size_t streams = spec.stream_count();

    auto fail = [&](std::size_t i, const std::string& why) {
        return ConfigError(spec.name + " layer " + std::to_string(i) + " (" + std::string(to_string(spec.layers[i].kind)) +
                           "): " + why);
    };

    std::vector<ParamSlot> trunk_slots;
    Shape cur = spec.input_shape;
    for (std::size_t i = 0; i < trunk_end; ++i) {
        const auto& l = spec.layers[i];
        const auto prefix = detail::layer_prefix("trunk", i, l.kind);
        try {
            switch (l.kind) {
            case LayerKind::conv_relu: {
                if (l.filters == 0 || l.kernel == 0 || l.stride == 0) throw fail(i, "filters, kernel and stride must be positive");
                const auto h = detail::window_extent(cur[1], l.kernel, l.stride, l.padding, "conv_relu");
                const auto w = detail::window_extent(cur[2], l.kernel, l.stride, l.padding, "conv_relu");
                detail::add_conv_slots(trunk_slots, prefix, cur[0], l.filters, l.kernel);
                cur = {l.filters, h, w};
                ++trace.fusion_points;
                break;
            }
            case LayerKind::residual_block: {
                if (l.filters != cur[0]) {
                    throw fail(i, "identity shortcut needs equal channels, input has " + std::to_string(cur[0]) + ", block " +
                                      std::to_string(l.filters));
                }
                if (l.kernel == 0 || l.kernel != 2 * l.padding + 1) throw fail(i, "block convolutions must preserve extent");
                detail::add_conv_slots(trunk_slots, prefix + ".conv1", cur[0], l.filters, l.kernel);
                detail::add_conv_slots(trunk_slots, prefix + ".conv2", l.filters, l.filters, l.kernel);
                ++trace.fusion_points;
                break;
            }
            case LayerKind::maxpool:
            case LayerKind::avgpool: {
                if (l.kernel == 0 || l.stride == 0) throw fail(i, "window and stride must be positive");
                const auto h = detail::window_extent(cur[1], l.kernel, l.stride, 0, "pool");
                const auto w = detail::window_extent(cur[2], l.kernel, l.stride, 0, "pool");
                cur = {cur[0], h, w};
                break;
            }
            case LayerKind::dropout:
                if (!(l.drop >= 0.0 && l.drop < 1.0)) throw fail(i, "drop probability must lie in [0, 1)");
                break;
            default: throw fail(i, "not allowed in the convolutional trunk");
            }
        } catch (const ConfigError& e) {
            if (std::string_view(e.what()).starts_with(spec.name + " layer")) throw;
            throw fail(i, e.what());
        }
        trace.trunk_shapes.push_back(cur);
    }
    for (const auto& s : trunk_slots) trace.trunk_params += shape_numel(s.shape);

    if (spec.topology == Topology::multistream_lattice && trace.fusion_points == 0) {
        throw ConfigError(spec.name + ": lattice topology needs at least one conv_relu or residual_block layer");
    }

    if (streams == 1) {
        trace.params = trunk_slots;
    } else {
        for (const char* stream : {"a.", "b."}) {
            for (const auto& s : trunk_slots) trace.params.push_back({stream + s.name, s.shape, s.fan_in});
        }
    }

    std::size_t width = shape_numel(cur) * streams;
    trace.feature_shape = {width};
    for (std::size_t i = trunk_end; i < spec.layers.size(); ++i) {
        const auto& l = spec.layers[i];
        const auto prefix = detail::layer_prefix("head", i, l.kind);
        switch (l.kind) {
        case LayerKind::flatten:
            if (i != trunk_end) throw fail(i, "only one flatten layer is allowed");
            break;
        case LayerKind::dense:
        case LayerKind::dense_relu: {
            if (l.units == 0) throw fail(i, "units must be positive");
            trace.params.push_back({prefix + ".weight", Shape{width, l.units}, width});
            trace.params.push_back({prefix + ".bias", Shape{l.units}, width});
            trace.head_params += width * l.units + l.units;
            width = l.units;
            break;
        }
        case LayerKind::dropout:
            if (!(l.drop >= 0.0 && l.drop < 1.0)) throw fail(i, "drop probability must lie in [0, 1)");
            break;
        default: throw fail(i, "not allowed after flatten");
        }
        trace.head_shapes.push_back({width});
    }
    if (width != spec.num_classes) {
        throw ConfigError(spec.name + ": head produces " + std::to_string(width) + " outputs for " +
                          std::to_string(spec.num_classes) + " classes");
    }
    return trace;
}

/// Trainable scalar count (weights and biases) of the whole model.
inline std::size_t count_params(const ModelSpec& spec) {
    const auto trace = propagate_shapes(spec);
    return trace.trunk_params * spec.stream_count() + trace.head_params;
}

/// Trunk parameter count summed over all streams.
inline std::size_t count_trunk_params(const ModelSpec& spec) {
    return propagate_shapes(spec).trunk_params * spec.stream_count();
}

/// Number of cross-fusion blocks the model evaluates (zero unless lattice).
inline std::size_t count_l_blocks(const ModelSpec& spec) {
    return spec.topology == Topology::multistream_lattice ? propagate_shapes(spec).fusion_points : 0;
}

// ---------------------------------------------------------------------------
// Backbones. Spatial schedules are adapted so a 32x32 input propagates; the
// filter counts and layer counts follow the full-size networks.

/// Pool that roughly halves an extent: 2/2 on even extents, overlapping 3/2
/// on odd ones (AlexNet's own pooling).
inline LayerSpec halving_pool(std::size_t extent) {
    return extent % 2 == 0 ? LayerSpec::max_pool(2, 2) : LayerSpec::max_pool(3, 2);
}

/// Eight-layer AlexNet analogue: five conv-ReLU (max pools after 1, 2 and 5)
/// and a three-layer dense head with dropout after the first two.
///
/// The 11x11 first convolution takes the largest stride <= 4 that tiles the
/// input exactly, so a 32x32 image yields the 8/4/2/1 feature-map schedule,
/// AlexNet's 55/27/13/6 shrunk by the same factor as the input.
inline ModelSpec build_mini_alexnet(std::size_t num_classes, double width_scale = 0.25, Shape input = {3, 32, 32}) {
    if (!(width_scale > 0.0)) throw ConfigError("width_scale must be positive");
    if (input.size() != 3 || input[1] != input[2] || input[1] < 11) {
        throw ConfigError("mini-AlexNet needs a square input of at least 11x11");
    }
    using detail::scaled;
    std::size_t stride = 0, pad = 0;
    for (std::size_t s = 4; s >= 1 && stride == 0; --s) {
        for (std::size_t p = 0; p <= 5; ++p) {
            if ((input[1] + 2 * p - 11) % s == 0) {
                stride = s;
                pad = p;
                break;
            }
        }
    }
    std::size_t extent = (input[1] + 2 * pad - 11) / stride + 1;
    ModelSpec spec;
    spec.name = "alexnet";
    spec.input_shape = input;
    spec.num_classes = num_classes;
    spec.layers.push_back(LayerSpec::conv(scaled(96, width_scale), 11, stride, pad));
    auto pool = [&] {
        if (extent < 2) throw ConfigError("mini-AlexNet input too small for three pooling stages");
        spec.layers.push_back(halving_pool(extent));
        extent = extent % 2 == 0 ? extent / 2 : (extent - 1) / 2;
    };
    pool();
    spec.layers.push_back(LayerSpec::conv(scaled(256, width_scale), 5, 1, 2));
    pool();
    spec.layers.push_back(LayerSpec::conv(scaled(384, width_scale), 3, 1, 1));
    spec.layers.push_back(LayerSpec::conv(scaled(384, width_scale), 3, 1, 1));
    spec.layers.push_back(LayerSpec::conv(scaled(256, width_scale), 3, 1, 1));
    pool();
    spec.layers.push_back(LayerSpec::flat());
    spec.layers.push_back(LayerSpec::linear_relu(scaled(4096, width_scale)));
    spec.layers.push_back(LayerSpec::dropout_layer(0.5));
    spec.layers.push_back(LayerSpec::linear_relu(scaled(4096, width_scale)));
    spec.layers.push_back(LayerSpec::dropout_layer(0.5));
    spec.layers.push_back(LayerSpec::linear(num_classes));
    return spec;
}

/// VGG-16/19 layout: five 3x3 conv blocks (2-2-3-3-3 or 2-2-4-4-4), a 2x2
/// max pool after each, then the dense head.
inline ModelSpec build_mini_vgg(int depth_variant, std::size_t num_classes, double width_scale = 0.25,
                                Shape input = {3, 32, 32}) {
    if (depth_variant != 16 && depth_variant != 19) throw ConfigError("VGG depth must be 16 or 19");
    if (!(width_scale > 0.0)) throw ConfigError("width_scale must be positive");
    if (input.size() != 3 || input[1] % 32 != 0 || input[2] % 32 != 0) {
        throw ConfigError("mini-VGG needs spatial extents divisible by 32");
    }
    using detail::scaled;
    const std::size_t deep = depth_variant == 16 ? 3 : 4;
    const std::size_t per_block[5] = {2, 2, deep, deep, deep};
    const std::size_t channels[5] = {64, 128, 256, 512, 512};
    ModelSpec spec;
    spec.name = "vgg" + std::to_string(depth_variant);
    spec.input_shape = input;
    spec.num_classes = num_classes;
    for (int b = 0; b < 5; ++b) {
        for (std::size_t i = 0; i < per_block[b]; ++i) spec.layers.push_back(LayerSpec::conv(scaled(channels[b], width_scale), 3, 1, 1));
        spec.layers.push_back(LayerSpec::max_pool(2, 2));
    }
    spec.layers.push_back(LayerSpec::flat());
    spec.layers.push_back(LayerSpec::linear_relu(scaled(4096, width_scale)));
    spec.layers.push_back(LayerSpec::dropout_layer(0.5));
    spec.layers.push_back(LayerSpec::linear_relu(scaled(4096, width_scale)));
    spec.layers.push_back(LayerSpec::dropout_layer(0.5));
    spec.layers.push_back(LayerSpec::linear(num_classes));
    return spec;
}

/// ResNet-18/34 layout with plain residual blocks: a 3x3 stem, four stages
/// (2-2-2-2 or 3-4-6-3 blocks), a strided 2x2 conv projection between
/// stages, global average pooling and a single dense classifier.
inline ModelSpec build_mini_resnet(int depth_variant, std::size_t num_classes, double width_scale = 0.25,
                                   Shape input = {3, 32, 32}) {
    if (depth_variant != 18 && depth_variant != 34) throw ConfigError("ResNet depth must be 18 or 34");
    if (!(width_scale > 0.0)) throw ConfigError("width_scale must be positive");
    if (input.size() != 3 || input[1] % 8 != 0 || input[2] % 8 != 0) {
        throw ConfigError("mini-ResNet needs spatial extents divisible by 8");
    }
    using detail::scaled;
    const std::size_t blocks18[4] = {2, 2, 2, 2};
    const std::size_t blocks34[4] = {3, 4, 6, 3};
    const std::size_t* blocks = depth_variant == 18 ? blocks18 : blocks34;
    const std::size_t channels[4] = {64, 128, 256, 512};
    ModelSpec spec;
    spec.name = "resnet" + std::to_string(depth_variant);
    spec.input_shape = input;
    spec.num_classes = num_classes;
    spec.layers.push_back(LayerSpec::conv(scaled(channels[0], width_scale), 3, 1, 1));
    for (int s = 0; s < 4; ++s) {
        if (s > 0) spec.layers.push_back(LayerSpec::conv(scaled(channels[s], width_scale), 2, 2, 0));
        for (std::size_t b = 0; b < blocks[s]; ++b) spec.layers.push_back(LayerSpec::residual(scaled(channels[s], width_scale)));
    }
    spec.layers.push_back(LayerSpec::avg_pool(input[1] / 8, input[1] / 8));
    spec.layers.push_back(LayerSpec::flat());
    spec.layers.push_back(LayerSpec::linear(num_classes));
    return spec;
}

/// Builds one of the named backbones ("alexnet", "vgg16", "vgg19", "resnet18", "resnet34").
inline ModelSpec build_backbone(std::string_view name, std::size_t num_classes, double width_scale = 0.25,
                                Shape input = {3, 32, 32}) {
    if (name == "alexnet") return build_mini_alexnet(num_classes, width_scale, input);
    if (name == "vgg16") return build_mini_vgg(16, num_classes, width_scale, input);
    if (name == "vgg19") return build_mini_vgg(19, num_classes, width_scale, input);
    if (name == "resnet18") return build_mini_resnet(18, num_classes, width_scale, input);
    if (name == "resnet34") return build_mini_resnet(34, num_classes, width_scale, input);
    throw ConfigError("unknown backbone '" + std::string(name) + "'");
}

/// Wraps a single-stream backbone into a two-stream model. Both topologies
/// give each stream its own trunk weights and concatenate the flattened
/// features before the shared head; the lattice form also cross-fuses the
/// streams after every conv_relu / residual_block.
inline ModelSpec to_multistream(const ModelSpec& base, Topology topology, FusionOp fusion_op = {}) {
    if (base.topology != Topology::single) throw ConfigError("to_multistream expects a single-stream base model");
    ModelSpec out = base;
    out.topology = topology;
    out.fusion_op = fusion_op;
    if (topology != Topology::single) {
        const auto suffix = topology == Topology::multistream_late ? std::string("-late")
                                                                   : "-lattice-" + std::string(to_string(fusion_op.kind));
        out.name = base.name + suffix;
    }
    propagate_shapes(out);
    return out;
}

// ---------------------------------------------------------------------------
// Serialization: JSON with sorted keys (nlohmann's default object ordering).

inline nlohmann::json to_json(const LayerSpec& l) {
    nlohmann::json j{{"kind", to_string(l.kind)}};
    switch (l.kind) {
    case LayerKind::conv_relu:
        j["filters"] = l.filters;
        j["kernel"] = l.kernel;
        j["stride"] = l.stride;
        j["padding"] = l.padding;
        break;
    case LayerKind::residual_block:
        j["filters"] = l.filters;
        j["kernel"] = l.kernel;
        j["padding"] = l.padding;
        break;
    case LayerKind::maxpool:
    case LayerKind::avgpool:
        j["window"] = l.kernel;
        j["stride"] = l.stride;
        break;
    case LayerKind::dense:
    case LayerKind::dense_relu: j["units"] = l.units; break;
    case LayerKind::dropout: j["drop"] = l.drop; break;
    case LayerKind::flatten: break;
    }
    return j;
}

inline LayerSpec layer_from_json(const nlohmann::json& j) {
    LayerSpec l;
    l.kind = parse_layer_kind(j.at("kind").get<std::string>());
    switch (l.kind) {
    case LayerKind::conv_relu:
        l.filters = j.at("filters").get<std::size_t>();
        l.kernel = j.at("kernel").get<std::size_t>();
        l.stride = j.value("stride", std::size_t{1});
        l.padding = j.value("padding", std::size_t{0});
        break;
    case LayerKind::residual_block:
        l.filters = j.at("filters").get<std::size_t>();
        l.kernel = j.value("kernel", std::size_t{3});
        l.padding = j.value("padding", l.kernel / 2);
        break;
    case LayerKind::maxpool:
    case LayerKind::avgpool:
        l.kernel = j.at("window").get<std::size_t>();
        l.stride = j.value("stride", l.kernel);
        break;
    case LayerKind::dense:
    case LayerKind::dense_relu: l.units = j.at("units").get<std::size_t>(); break;
    case LayerKind::dropout: l.drop = j.at("drop").get<double>(); break;
    case LayerKind::flatten: break;
    }
    return l;
}

inline nlohmann::json to_json(const FusionOp& op) {
    return {{"kind", to_string(op.kind)}, {"clamp_epsilon", op.clamp_epsilon}};
}

inline FusionOp fusion_from_json(const nlohmann::json& j) {
    if (j.is_string()) return FusionOp(parse_fusion_kind(j.get<std::string>()));
    return FusionOp(parse_fusion_kind(j.at("kind").get<std::string>()), j.value("clamp_epsilon", 1e-6));
}

inline nlohmann::json to_json(const ModelSpec& spec) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : spec.layers) layers.push_back(to_json(l));
    return {{"name", spec.name},
            {"input_shape", spec.input_shape},
            {"layers", layers},
            {"topology", to_string(spec.topology)},
            {"fusion_op", to_json(spec.fusion_op)},
            {"num_classes", spec.num_classes}};
}

inline ModelSpec model_from_json(const nlohmann::json& j) {
    try {
        ModelSpec spec;
        spec.name = j.at("name").get<std::string>();
        spec.input_shape = j.at("input_shape").get<Shape>();
        for (const auto& l : j.at("layers")) spec.layers.push_back(layer_from_json(l));
        spec.topology = parse_topology(j.value("topology", std::string("single")));
        if (j.contains("fusion_op")) spec.fusion_op = fusion_from_json(j.at("fusion_op"));
        spec.num_classes = j.at("num_classes").get<std::size_t>();
        propagate_shapes(spec);
        return spec;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed model spec: ") + e.what());
    }
}

} // namespace lcnn

#endif // LCNN_MODEL_HPP
