#ifndef LCNN_GRADCHECK_HPP
#define LCNN_GRADCHECK_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "lcnn/errors.hpp"
#include "lcnn/tensor.hpp"

namespace lcnn {

struct GradCheckResult {
    /// max over checked coordinates of |analytic - central| / max(1, |central|)
    double max_relative_error = 0.0;
    std::size_t checked = 0;
    /// Coordinates where the one-sided slopes disagree (a kink lies within
    /// epsilon); these are left out of the error.
    std::vector<std::size_t> excluded;
};

/// Compares the tape gradient of a scalar function against central
/// differences at `point`.
inline GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point,
                                  double epsilon = 1e-5) {
    Tensor x = point.detach(true);
    Tensor y = f(x);
    if (y.numel() != 1) throw UsageError("grad_check needs a scalar-valued function");
    const double center = y.item();
    std::vector<double> analytic(x.numel(), 0.0);
    if (y.requires_grad()) {
        backward(y);
        if (x.has_grad()) analytic.assign(x.grad().begin(), x.grad().end());
    }

    auto eval_at = [&](std::size_t i, double delta) {
        std::vector<double> v(point.values().begin(), point.values().end());
        v[i] += delta;
        return f(Tensor(point.shape(), std::move(v))).item();
    };

    GradCheckResult result;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double plus = eval_at(i, epsilon);
        const double minus = eval_at(i, -epsilon);
        const double central = (plus - minus) / (2.0 * epsilon);
        const double right = (plus - center) / epsilon;
        const double left = (center - minus) / epsilon;
        if (std::abs(right - left) > 1e-2 * std::max(1.0, std::abs(central))) {
            result.excluded.push_back(i);
            continue;
        }
        const double err = std::abs(analytic[i] - central) / std::max(1.0, std::abs(central));
        result.max_relative_error = std::max(result.max_relative_error, err);
        ++result.checked;
    }
    return result;
}

} // namespace lcnn

#endif // LCNN_GRADCHECK_HPP
