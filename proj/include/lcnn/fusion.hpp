#ifndef LCNN_FUSION_HPP
#define LCNN_FUSION_HPP

#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lcnn/errors.hpp"
#include "lcnn/ops.hpp"
#include "lcnn/tensor.hpp"

namespace lcnn {

enum class FusionKind { average, addition, subtraction, log_compression };

/// Elementwise operator joining two activation streams.
struct FusionOp {
    FusionKind kind = FusionKind::average;
    /// Lower bound on 1 - s_bar inside the logarithm (log_compression only).
    double clamp_epsilon = 1e-6;

    FusionOp() = default;
    explicit FusionOp(FusionKind k, double eps = 1e-6) : kind(k), clamp_epsilon(eps) {
        if (!(eps > 0.0 && eps < 1.0)) throw ConfigError("fusion clamp_epsilon must lie in (0, 1)");
    }

    bool commutative() const { return kind == FusionKind::average || kind == FusionKind::addition; }

    friend bool operator==(const FusionOp&, const FusionOp&) = default;
};

inline std::string_view to_string(FusionKind kind) {
    switch (kind) {
    case FusionKind::average: return "average";
    case FusionKind::addition: return "addition";
    case FusionKind::subtraction: return "subtraction";
    case FusionKind::log_compression: return "log_compression";
    }
    return "?";
}

inline FusionKind parse_fusion_kind(std::string_view name) {
    if (name == "average") return FusionKind::average;
    if (name == "addition") return FusionKind::addition;
    if (name == "subtraction") return FusionKind::subtraction;
    if (name == "log_compression") return FusionKind::log_compression;
    throw ConfigError("unknown fusion operator '" + std::string(name) +
                      "' (expected average, addition, subtraction or log_compression)");
}

/// Counts elements where the log-compression clamp replaced 1 - s_bar.
struct SaturationCounter {
    std::size_t clamped = 0;
};

/// s - ln(max(1 - s_bar, epsilon)), elementwise. Where the clamp fires the
/// output no longer depends on s_bar, so its gradient there is zero.
inline Tensor log_compress(const Tensor& s, const Tensor& s_bar, double epsilon = 1e-6,
                           SaturationCounter* counter = nullptr) {
    detail::require_same_shape(s, s_bar, "log_compress");
    std::vector<double> out(s.numel());
    std::vector<double> slope(s.numel());
    std::size_t clamped = 0;
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double gap = 1.0 - s_bar[i];
        if (gap < epsilon) {
            out[i] = s[i] - std::log(epsilon);
            slope[i] = 0.0;
            ++clamped;
        } else {
            out[i] = s[i] - std::log(gap);
            slope[i] = 1.0 / gap;
        }
    }
    if (counter) counter->clamped += clamped;
    return detail::make_result("log_compress", s.shape(), std::move(out), {s, s_bar},
                               [slope = std::move(slope)](detail::Node& self) {
                                   if (auto* d = detail::parent_grad(self, 0)) {
                                       for (std::size_t i = 0; i < d->size(); ++i) (*d)[i] += self.grad[i];
                                   }
                                   if (auto* d = detail::parent_grad(self, 1)) {
                                       for (std::size_t i = 0; i < d->size(); ++i) (*d)[i] += self.grad[i] * slope[i];
                                   }
                               });
}

inline Tensor fuse(const Tensor& s, const Tensor& s_bar, const FusionOp& op, SaturationCounter* counter = nullptr) {
    detail::require_same_shape(s, s_bar, "fuse");
    switch (op.kind) {
    case FusionKind::average: return scale(add(s, s_bar), 0.5);
    case FusionKind::addition: return add(s, s_bar);
    case FusionKind::subtraction: return sub(s, s_bar);
    case FusionKind::log_compression: return log_compress(s, s_bar, op.clamp_epsilon, counter);
    }
    throw ConfigError("unhandled fusion operator");
}

struct StreamPair {
    Tensor a;
    Tensor b;
};

/// Cross-fusion block: each stream's next input is its own activation fused
/// with the other stream's, the receiving stream supplying the left operand.
inline StreamPair l_block(const Tensor& a_act, const Tensor& b_act, const FusionOp& op,
                          SaturationCounter* counter = nullptr) {
    detail::require_same_shape(a_act, b_act, "l_block");
    return {fuse(a_act, b_act, op, counter), fuse(b_act, a_act, op, counter)};
}

/// Terminal fusion: concatenate per-stream features [N, D_i] in stream order.
inline Tensor late_fuse(const std::vector<Tensor>& features) { return concat_features(features); }

} // namespace lcnn

#endif // LCNN_FUSION_HPP
