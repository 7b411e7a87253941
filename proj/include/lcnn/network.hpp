#ifndef LCNN_NETWORK_HPP
#define LCNN_NETWORK_HPP

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lcnn/errors.hpp"
#include "lcnn/fusion.hpp"
#include "lcnn/model.hpp"
#include "lcnn/ops.hpp"
#include "lcnn/rng.hpp"
#include "lcnn/tensor.hpp"

namespace lcnn {

enum class Mode { train, eval };

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

/// How fresh parameters are drawn.
///   he_uniform: weights U(-sqrt(6/fan_in), sqrt(6/fan_in)), biases 0
///   fan_in_uniform: weights and biases U(-sqrt(1/fan_in), sqrt(1/fan_in))
enum class InitScheme { he_uniform, fan_in_uniform };

inline std::string_view to_string(InitScheme s) {
    return s == InitScheme::he_uniform ? "he_uniform" : "fan_in_uniform";
}

inline InitScheme parse_init_scheme(std::string_view name) {
    if (name == "he_uniform") return InitScheme::he_uniform;
    if (name == "fan_in_uniform") return InitScheme::fan_in_uniform;
    throw ConfigError("unknown init scheme '" + std::string(name) + "' (expected he_uniform or fan_in_uniform)");
}

/// A ModelSpec with materialized parameters, drawn in creation order from a
/// generator seeded by `seed`.
class ModelInstance {
public:
    ModelInstance(ModelSpec spec, std::uint64_t seed, InitScheme scheme = InitScheme::he_uniform)
        : spec_(std::move(spec)), seed_(seed), dropout_rng_(derive_seed(seed, 0xD50F)) {
        const auto trace = propagate_shapes(spec_);
        Rng init(derive_seed(seed, 0x1217));
        for (const auto& slot : trace.params) {
            const double fan_in = static_cast<double>(slot.fan_in);
            const bool bias = slot.shape.size() == 1;
            std::vector<double> v(shape_numel(slot.shape), 0.0);
            if (scheme == InitScheme::fan_in_uniform) {
                const double bound = std::sqrt(1.0 / fan_in);
                for (auto& x : v) x = init.uniform(-bound, bound);
            } else if (!bias) {
                const double bound = std::sqrt(6.0 / fan_in);
                for (auto& x : v) x = init.uniform(-bound, bound);
            }
            index_.emplace(slot.name, params_.size());
            params_.push_back({slot.name, Tensor(slot.shape, std::move(v), true)});
        }
    }

    const ModelSpec& spec() const { return spec_; }
    std::uint64_t seed() const { return seed_; }

    /// Parameters in creation order; names are unique and depend only on the spec.
    const std::vector<NamedTensor>& parameters() const { return params_; }

    Tensor& param(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw UsageError("no parameter named '" + name + "'");
        return params_[it->second].tensor;
    }
    const Tensor& param(const std::string& name) const { return const_cast<ModelInstance*>(this)->param(name); }

    bool has_param(const std::string& name) const { return index_.count(name) != 0; }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.tensor.numel();
        return n;
    }

    SaturationCounter& saturation() { return saturation_; }
    Rng& dropout_rng() { return dropout_rng_; }

private:
    ModelSpec spec_;
    std::uint64_t seed_;
    std::vector<NamedTensor> params_;
    std::map<std::string, std::size_t> index_;
    SaturationCounter saturation_;
    Rng dropout_rng_;
};

/// Copies every "a." trunk parameter over its "b." twin. Weights stay
/// separate tensors; only their starting values coincide.
inline void mirror_streams(ModelInstance& model) {
    if (model.spec().stream_count() != 2) throw UsageError("mirror_streams needs a two-stream model");
    for (const auto& p : model.parameters()) {
        if (p.name.rfind("a.", 0) != 0) continue;
        auto dst = model.param("b." + p.name.substr(2)).mutable_values();
        auto src = p.tensor.values();
        std::copy(src.begin(), src.end(), dst.begin());
    }
}

/// Multiplies every parameter by `gain` (used to provoke divergence).
inline void scale_parameters(ModelInstance& model, double gain) {
    if (gain == 1.0) return;
    for (const auto& p : model.parameters()) {
        Tensor t = p.tensor;
        for (auto& v : t.mutable_values()) v *= gain;
    }
}

namespace detail {

inline Tensor dropout(ModelInstance& model, const Tensor& x, double drop, Mode mode) {
    if (drop == 0.0) return x;
    const double keep = 1.0 - drop;
    if (mode == Mode::eval) return scale(x, keep);
    std::vector<double> mask(x.numel());
    for (auto& m : mask) m = model.dropout_rng().bernoulli(keep) ? 1.0 : 0.0;
    return mask_multiply(x, std::move(mask));
}

inline Tensor trunk_layer(ModelInstance& model, const LayerSpec& l, const std::string& prefix, const Tensor& x,
                          Mode mode) {
    switch (l.kind) {
    case LayerKind::conv_relu:
        return relu(conv2d(x, model.param(prefix + ".weight"), model.param(prefix + ".bias"), l.stride, l.padding));
    case LayerKind::residual_block:
        return residual_block(x, model.param(prefix + ".conv1.weight"), model.param(prefix + ".conv1.bias"),
                              model.param(prefix + ".conv2.weight"), model.param(prefix + ".conv2.bias"), l.padding);
    case LayerKind::maxpool: return maxpool2d(x, l.kernel, l.stride);
    case LayerKind::avgpool: return avgpool2d(x, l.kernel, l.stride);
    case LayerKind::dropout: return dropout(model, x, l.drop, mode);
    default: throw ConfigError("layer kind not valid in trunk");
    }
}

} // namespace detail

/// Runs the model on one input per stream, each [N, C, H, W].
///
/// When `trace` is given it receives the per-stream activation after every
/// trunk layer (after cross-fusion for fusible layers of lattice models).
/// For single-stream models the `b` member of each entry is undefined.
inline Tensor forward(ModelInstance& model, std::span<const Tensor> inputs, Mode mode = Mode::eval,
                      std::vector<StreamPair>* trace = nullptr) {
    const auto& spec = model.spec();
    const std::size_t streams = spec.stream_count();
    if (inputs.size() != streams) {
        throw InputError(spec.name + " expects " + std::to_string(streams) + " input stream(s), got " +
                         std::to_string(inputs.size()));
    }
    for (const auto& in : inputs) {
        if (in.rank() != 4 || Shape(in.shape().begin() + 1, in.shape().end()) != spec.input_shape) {
            throw InputError(spec.name + " expects inputs [N]" + to_string(spec.input_shape) + ", got " +
                             to_string(in.shape()));
        }
    }
    if (streams == 2 && inputs[0].dim(0) != inputs[1].dim(0)) throw InputError("stream batch extents differ");

    const std::size_t trunk_end = spec.trunk_end();
    std::vector<Tensor> acts(inputs.begin(), inputs.end());
    for (std::size_t i = 0; i < trunk_end; ++i) {
        const auto& l = spec.layers[i];
        const auto prefix = detail::layer_prefix("trunk", i, l.kind);
        if (streams == 1) {
            acts[0] = detail::trunk_layer(model, l, prefix, acts[0], mode);
        } else {
            acts[0] = detail::trunk_layer(model, l, "a." + prefix, acts[0], mode);
            acts[1] = detail::trunk_layer(model, l, "b." + prefix, acts[1], mode);
            if (spec.topology == Topology::multistream_lattice && l.fusible()) {
                auto fused = l_block(acts[0], acts[1], spec.fusion_op, &model.saturation());
                acts[0] = std::move(fused.a);
                acts[1] = std::move(fused.b);
            }
        }
        if (trace) trace->push_back({acts[0], streams == 2 ? acts[1] : Tensor{}});
    }

    Tensor h;
    if (streams == 1) {
        h = flatten(acts[0]);
    } else {
        h = late_fuse({flatten(acts[0]), flatten(acts[1])});
    }
    for (std::size_t i = trunk_end + 1; i < spec.layers.size(); ++i) {
        const auto& l = spec.layers[i];
        const auto prefix = detail::layer_prefix("head", i, l.kind);
        switch (l.kind) {
        case LayerKind::dense: h = dense(h, model.param(prefix + ".weight"), model.param(prefix + ".bias")); break;
        case LayerKind::dense_relu:
            h = relu(dense(h, model.param(prefix + ".weight"), model.param(prefix + ".bias")));
            break;
        case LayerKind::dropout: h = detail::dropout(model, h, l.drop, mode); break;
        default: throw ConfigError("layer kind not valid in head");
        }
    }
    return h;
}

inline Tensor forward(ModelInstance& model, std::initializer_list<Tensor> inputs, Mode mode = Mode::eval) {
    std::vector<Tensor> v(inputs);
    return forward(model, std::span<const Tensor>(v), mode);
}

} // namespace lcnn

#endif // LCNN_NETWORK_HPP
