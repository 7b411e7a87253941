#ifndef LCNN_GRADSUITE_HPP
#define LCNN_GRADSUITE_HPP

#include <algorithm>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lcnn/fusion.hpp"
#include "lcnn/gradcheck.hpp"
#include "lcnn/ops.hpp"
#include "lcnn/rng.hpp"

namespace lcnn {

struct GradSuiteRow {
    std::string primitive;
    std::size_t points = 0;
    std::size_t resampled = 0;   // draws rejected because a kink lay within epsilon
    std::size_t coordinates = 0; // total checked coordinates
    double max_relative_error = 0.0;
};

namespace detail {

inline Tensor uniform_tensor(Rng& rng, Shape shape, double lo, double hi) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor(std::move(shape), std::move(v));
}

// Values whose pairwise gaps are at least 1e-2 (a shuffled grid plus jitter),
// so max-pooling has no near-ties.
inline Tensor spaced_tensor(Rng& rng, Shape shape) {
    const std::size_t n = shape_numel(shape);
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = -1.0 + 2.0 * (double(i) + 0.5) / double(n) + rng.uniform(-0.2, 0.2) / double(n);
    rng.shuffle(std::span<double>(v));
    return Tensor(std::move(shape), std::move(v));
}

// A draw: the inputs and a scalar function of them.
struct Case {
    std::vector<Tensor> inputs;
    std::function<Tensor(const std::vector<Tensor>&)> f;
};

// Projects an output onto fixed random weights so every element matters.
inline Tensor project(const Tensor& y, const Tensor& w) { return sum(mul(y, w)); }

inline bool check_case(const Case& c, double eps, GradSuiteRow& row) {
    std::vector<GradCheckResult> results;
    for (std::size_t k = 0; k < c.inputs.size(); ++k) {
        auto fk = [&](const Tensor& v) {
            auto args = c.inputs;
            args[k] = v;
            return c.f(args);
        };
        results.push_back(grad_check(fk, c.inputs[k], eps));
        if (!results.back().excluded.empty()) return false;
    }
    for (const auto& r : results) {
        row.coordinates += r.checked;
        row.max_relative_error = std::max(row.max_relative_error, r.max_relative_error);
    }
    return true;
}

} // namespace detail

/// Finite-difference check of every differentiable primitive at `points`
/// seeded random points each. Points where a kink lies within epsilon of the
/// draw are redrawn and counted.
inline std::vector<GradSuiteRow> run_gradient_suite(std::size_t points = 100, std::uint64_t seed = 1, double eps = 1e-5) {
    using detail::Case;
    using detail::project;
    using detail::uniform_tensor;
    using Make = std::function<Case(Rng&, std::size_t)>;
    const FusionOp ops[] = {FusionOp(FusionKind::average), FusionOp(FusionKind::addition), FusionOp(FusionKind::subtraction),
                            FusionOp(FusionKind::log_compression)};

    std::vector<std::pair<std::string, Make>> makers;
    makers.emplace_back("conv2d", [](Rng& r, std::size_t i) {
        const std::size_t stride = 1 + i % 2, pad = i % 3 == 0 ? 1 : 0;
        const std::size_t extent = stride == 2 ? 5 : 4;
        Tensor x = uniform_tensor(r, {2, 2, extent, extent}, -1, 1);
        Tensor k = uniform_tensor(r, {3, 2, 3, 3}, -1, 1), b = uniform_tensor(r, {3}, -1, 1);
        const std::size_t o = (extent + 2 * pad - 3) / stride + 1;
        Tensor w = uniform_tensor(r, {2, 3, o, o}, -1, 1);
        return Case{{x, k, b}, [=](const std::vector<Tensor>& a) { return project(conv2d(a[0], a[1], a[2], stride, pad), w); }};
    });
    makers.emplace_back("relu", [](Rng& r, std::size_t) {
        Tensor x = uniform_tensor(r, {3, 7}, -1, 1);
        Tensor w = uniform_tensor(r, {3, 7}, -1, 1);
        return Case{{x}, [=](const std::vector<Tensor>& a) { return project(relu(a[0]), w); }};
    });
    makers.emplace_back("maxpool2d", [](Rng& r, std::size_t i) {
        const std::size_t win = 2 + i % 2, stride = 2;
        const std::size_t extent = win == 2 ? 4 : 5;
        Tensor x = detail::spaced_tensor(r, {2, 2, extent, extent});
        Tensor w = uniform_tensor(r, {2, 2, 2, 2}, -1, 1);
        return Case{{x}, [=](const std::vector<Tensor>& a) { return project(maxpool2d(a[0], win, stride), w); }};
    });
    makers.emplace_back("avgpool2d", [](Rng& r, std::size_t i) {
        const std::size_t win = 2 + i % 2, stride = win == 2 ? 2 : 1;
        const std::size_t o = win == 2 ? 2 : 2;
        Tensor x = uniform_tensor(r, {2, 2, 4, 4}, -1, 1);
        Tensor w = uniform_tensor(r, {2, 2, o, o}, -1, 1);
        return Case{{x}, [=](const std::vector<Tensor>& a) { return project(avgpool2d(a[0], win, stride), w); }};
    });
    makers.emplace_back("dense", [](Rng& r, std::size_t) {
        Tensor x = uniform_tensor(r, {3, 5}, -1, 1), wt = uniform_tensor(r, {5, 4}, -1, 1), b = uniform_tensor(r, {4}, -1, 1);
        Tensor w = uniform_tensor(r, {3, 4}, -1, 1);
        return Case{{x, wt, b}, [=](const std::vector<Tensor>& a) { return project(dense(a[0], a[1], a[2]), w); }};
    });
    makers.emplace_back("softmax_cross_entropy", [](Rng& r, std::size_t) {
        Tensor logits = uniform_tensor(r, {3, 4}, -3, 3);
        std::vector<std::size_t> labels{r.index(4), r.index(4), r.index(4)};
        return Case{{logits}, [=](const std::vector<Tensor>& a) { return softmax_cross_entropy(a[0], labels); }};
    });
    for (const auto& op : ops) {
        makers.emplace_back("fuse/" + std::string(to_string(op.kind)), [op](Rng& r, std::size_t) {
            Tensor s = uniform_tensor(r, {2, 3, 3}, -1, 1);
            Tensor sb = uniform_tensor(r, {2, 3, 3}, -1, 0.9); // keeps 1 - s_bar >= 0.1
            Tensor w = uniform_tensor(r, {2, 3, 3}, -1, 1);
            return Case{{s, sb}, [=](const std::vector<Tensor>& a) { return project(fuse(a[0], a[1], op), w); }};
        });
    }
    makers.emplace_back("residual_block", [](Rng& r, std::size_t) {
        Tensor x = uniform_tensor(r, {1, 2, 4, 4}, -1, 1);
        Tensor k1 = uniform_tensor(r, {2, 2, 3, 3}, -0.5, 0.5), b1 = uniform_tensor(r, {2}, -0.5, 0.5);
        Tensor k2 = uniform_tensor(r, {2, 2, 3, 3}, -0.5, 0.5), b2 = uniform_tensor(r, {2}, -0.5, 0.5);
        Tensor w = uniform_tensor(r, {1, 2, 4, 4}, -1, 1);
        return Case{{x, k1, b1, k2, b2},
                    [=](const std::vector<Tensor>& a) { return project(residual_block(a[0], a[1], a[2], a[3], a[4], 1), w); }};
    });
    makers.emplace_back("l_block", [ops](Rng& r, std::size_t i) {
        const FusionOp op = ops[i % 4];
        Tensor a0 = uniform_tensor(r, {1, 2, 3, 3}, -1, 0.9), b0 = uniform_tensor(r, {1, 2, 3, 3}, -1, 0.9);
        Tensor wa = uniform_tensor(r, {1, 2, 3, 3}, -1, 1), wb = uniform_tensor(r, {1, 2, 3, 3}, -1, 1);
        return Case{{a0, b0}, [=](const std::vector<Tensor>& a) {
                        auto out = l_block(a[0], a[1], op);
                        return add(project(out.a, wa), project(out.b, wb));
                    }};
    });
    makers.emplace_back("late_fuse", [](Rng& r, std::size_t) {
        Tensor a0 = uniform_tensor(r, {2, 3}, -1, 1), b0 = uniform_tensor(r, {2, 4}, -1, 1);
        Tensor w = uniform_tensor(r, {2, 7}, -1, 1);
        return Case{{a0, b0}, [=](const std::vector<Tensor>& a) { return project(late_fuse({a[0], a[1]}), w); }};
    });

    std::vector<GradSuiteRow> rows;
    for (std::size_t m = 0; m < makers.size(); ++m) {
        GradSuiteRow row;
        row.primitive = makers[m].first;
        Rng rng(derive_seed(seed, m));
        while (row.points < points) {
            const auto c = makers[m].second(rng, row.points);
            if (detail::check_case(c, eps, row)) {
                ++row.points;
            } else if (++row.resampled > 20 * points) {
                throw UsageError("gradient suite: too many kinked draws for " + row.primitive);
            }
        }
        rows.push_back(row);
    }
    return rows;
}

} // namespace lcnn

#endif // LCNN_GRADSUITE_HPP
