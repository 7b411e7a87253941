#ifndef LCNN_OPS_HPP
#define LCNN_OPS_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

// Small products would otherwise take a coefficient-wise path whose
// packet/scalar split depends on buffer addresses; GEMM packs operands and
// sums in an order fixed by the shapes alone.
#ifndef EIGEN_GEMM_TO_COEFFBASED_THRESHOLD
#define EIGEN_GEMM_TO_COEFFBASED_THRESHOLD 0
#endif
#include <Eigen/Core>

#include "lcnn/errors.hpp"
#include "lcnn/tensor.hpp"

namespace lcnn {

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

// dst (+)= a * b. A 1x1 result would become an Eigen dot product, whose
// vectorized reduction is address dependent, so it is summed here instead.
template <class A, class B>
void gemm(MatrixMap dst, const A& a, const B& b, bool accumulate) {
    if (dst.rows() == 1 && dst.cols() == 1) {
        double acc = 0.0;
        for (Eigen::Index i = 0; i < a.cols(); ++i) acc += a(0, i) * b(i, 0);
        dst(0, 0) = accumulate ? dst(0, 0) + acc : acc;
    } else if (accumulate) {
        dst.noalias() += a * b;
    } else {
        dst.noalias() = a * b;
    }
}

inline void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* arg) {
    if (t.rank() != rank) {
        throw DimensionError(std::string(op) + ": " + arg + " must have rank " + std::to_string(rank) +
                             ", got shape " + to_string(t.shape()));
    }
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                             to_string(b.shape()));
    }
}

/// Output extent of a sliding window; throws unless it is a positive integer.
inline std::size_t window_extent(std::size_t in, std::size_t window, std::size_t stride, std::size_t pad,
                                 const char* op) {
    const std::size_t padded = in + 2 * pad;
    if (window > padded) {
        throw ConfigError(std::string(op) + ": window " + std::to_string(window) + " exceeds padded extent " +
                          std::to_string(padded));
    }
    if ((padded - window) % stride != 0) {
        throw ConfigError(std::string(op) + ": (" + std::to_string(in) + "+2*" + std::to_string(pad) + "-" +
                          std::to_string(window) + ")/" + std::to_string(stride) + " is not an integer");
    }
    return (padded - window) / stride + 1;
}

struct ConvGeometry {
    std::size_t n, c, h, w;
    std::size_t f, kh, kw;
    std::size_t stride, pad;
    std::size_t oh, ow;

    std::size_t patch() const { return c * kh * kw; }
    std::size_t positions() const { return oh * ow; }
};

// Patch matrix for samples [first, first + count): rows are (c, i, j) kernel
// taps, columns are (sample, oh, ow) output positions.
inline void im2col(const ConvGeometry& g, const double* x, std::size_t first, std::size_t count, double* cols) {
    const std::size_t width = count * g.positions();
    for (std::size_t c = 0; c < g.c; ++c) {
        for (std::size_t i = 0; i < g.kh; ++i) {
            for (std::size_t j = 0; j < g.kw; ++j) {
                double* row = cols + ((c * g.kh + i) * g.kw + j) * width;
                for (std::size_t s = 0; s < count; ++s) {
                    const double* plane = x + ((first + s) * g.c + c) * g.h * g.w;
                    double* out = row + s * g.positions();
                    for (std::size_t oy = 0; oy < g.oh; ++oy) {
                        const auto y = static_cast<std::ptrdiff_t>(oy * g.stride + i) - static_cast<std::ptrdiff_t>(g.pad);
                        if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.h)) {
                            std::fill(out + oy * g.ow, out + (oy + 1) * g.ow, 0.0);
                            continue;
                        }
                        for (std::size_t ox = 0; ox < g.ow; ++ox) {
                            const auto xx = static_cast<std::ptrdiff_t>(ox * g.stride + j) - static_cast<std::ptrdiff_t>(g.pad);
                            out[oy * g.ow + ox] = (xx < 0 || xx >= static_cast<std::ptrdiff_t>(g.w))
                                                      ? 0.0
                                                      : plane[y * static_cast<std::ptrdiff_t>(g.w) + xx];
                        }
                    }
                }
            }
        }
    }
}

inline void col2im_add(const ConvGeometry& g, const double* cols, std::size_t first, std::size_t count, double* dx) {
    const std::size_t width = count * g.positions();
    for (std::size_t c = 0; c < g.c; ++c) {
        for (std::size_t i = 0; i < g.kh; ++i) {
            for (std::size_t j = 0; j < g.kw; ++j) {
                const double* row = cols + ((c * g.kh + i) * g.kw + j) * width;
                for (std::size_t s = 0; s < count; ++s) {
                    double* plane = dx + ((first + s) * g.c + c) * g.h * g.w;
                    const double* in = row + s * g.positions();
                    for (std::size_t oy = 0; oy < g.oh; ++oy) {
                        const auto y = static_cast<std::ptrdiff_t>(oy * g.stride + i) - static_cast<std::ptrdiff_t>(g.pad);
                        if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.h)) continue;
                        for (std::size_t ox = 0; ox < g.ow; ++ox) {
                            const auto xx = static_cast<std::ptrdiff_t>(ox * g.stride + j) - static_cast<std::ptrdiff_t>(g.pad);
                            if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(g.w)) continue;
                            plane[y * static_cast<std::ptrdiff_t>(g.w) + xx] += in[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

// Samples per patch-matrix chunk; bounds the lowering buffer to ~32 MB.
inline std::size_t conv_chunk(const ConvGeometry& g) {
    constexpr std::size_t budget = std::size_t{1} << 22;
    const std::size_t per_sample = g.patch() * g.positions();
    return std::clamp<std::size_t>(budget / std::max<std::size_t>(per_sample, 1), 1, g.n);
}

} // namespace detail

/// 2-D cross-correlation of x[N,C,H,W] with kernel[F,C,kh,kw] plus bias[F].
inline Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias, std::size_t stride = 1,
                     std::size_t padding = 0) {
    detail::require_rank(x, 4, "conv2d", "input");
    detail::require_rank(kernel, 4, "conv2d", "kernel");
    detail::require_rank(bias, 1, "conv2d", "bias");
    if (stride == 0) throw ConfigError("conv2d: stride must be positive");
    if (x.dim(1) != kernel.dim(1)) {
        throw DimensionError("conv2d: input has " + std::to_string(x.dim(1)) + " channels but kernel expects " +
                             std::to_string(kernel.dim(1)));
    }
    if (bias.dim(0) != kernel.dim(0)) {
        throw DimensionError("conv2d: bias has " + std::to_string(bias.dim(0)) + " entries for " +
                             std::to_string(kernel.dim(0)) + " filters");
    }
    detail::ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), kernel.dim(0), kernel.dim(2), kernel.dim(3),
                           stride, padding, 0, 0};
    g.oh = detail::window_extent(g.h, g.kh, stride, padding, "conv2d");
    g.ow = detail::window_extent(g.w, g.kw, stride, padding, "conv2d");

    const std::size_t chunk = detail::conv_chunk(g);
    const std::size_t positions = g.positions();
    std::vector<double> out(g.n * g.f * positions);
    std::vector<double> cols(g.patch() * chunk * positions);
    std::vector<double> prod(g.f * chunk * positions);
    detail::ConstMatrixMap weights(kernel.values().data(), g.f, g.patch());
    const auto* xv = x.values().data();
    const auto* bv = bias.values().data();
    for (std::size_t first = 0; first < g.n; first += chunk) {
        const std::size_t count = std::min(chunk, g.n - first);
        const std::size_t width = count * positions;
        detail::im2col(g, xv, first, count, cols.data());
        detail::MatrixMap result(prod.data(), g.f, width);
        detail::gemm(result, weights, detail::ConstMatrixMap(cols.data(), g.patch(), width), false);
        for (std::size_t s = 0; s < count; ++s) {
            for (std::size_t f = 0; f < g.f; ++f) {
                const double* src = prod.data() + f * width + s * positions;
                double* dst = out.data() + ((first + s) * g.f + f) * positions;
                for (std::size_t p = 0; p < positions; ++p) dst[p] = src[p] + bv[f];
            }
        }
    }

    return detail::make_result(
        "conv2d", Shape{g.n, g.f, g.oh, g.ow}, std::move(out), {x, kernel, bias}, [g](detail::Node& self) {
            const auto& xn = *self.parents[0];
            const auto& kn = *self.parents[1];
            auto* dx = detail::parent_grad(self, 0);
            auto* dk = detail::parent_grad(self, 1);
            auto* db = detail::parent_grad(self, 2);
            const std::size_t chunk = detail::conv_chunk(g);
            const std::size_t positions = g.positions();
            std::vector<double> cols(g.patch() * chunk * positions);
            std::vector<double> upstream(g.f * chunk * positions);
            detail::ConstMatrixMap weights(kn.values.data(), g.f, g.patch());
            for (std::size_t first = 0; first < g.n; first += chunk) {
                const std::size_t count = std::min(chunk, g.n - first);
                const std::size_t width = count * positions;
                for (std::size_t s = 0; s < count; ++s) {
                    for (std::size_t f = 0; f < g.f; ++f) {
                        const double* src = self.grad.data() + ((first + s) * g.f + f) * positions;
                        std::copy(src, src + positions, upstream.data() + f * width + s * positions);
                    }
                }
                detail::ConstMatrixMap gmat(upstream.data(), g.f, width);
                if (db) {
                    for (std::size_t f = 0; f < g.f; ++f) {
                        const double* row = upstream.data() + f * width;
                        double acc = 0.0;
                        for (std::size_t p = 0; p < width; ++p) acc += row[p];
                        (*db)[f] += acc;
                    }
                }
                if (dk) {
                    detail::im2col(g, xn.values.data(), first, count, cols.data());
                    detail::gemm(detail::MatrixMap(dk->data(), g.f, g.patch()), gmat,
                                 detail::ConstMatrixMap(cols.data(), g.patch(), width).transpose(), true);
                }
                if (dx) {
                    detail::MatrixMap dcols(cols.data(), g.patch(), width);
                    detail::gemm(dcols, weights.transpose(), gmat, false);
                    detail::col2im_add(g, cols.data(), first, count, dx->data());
                }
            }
        });
}

/// Elementwise max(0, x).
inline Tensor relu(const Tensor& x) {
    std::vector<double> out(x.values().begin(), x.values().end());
    for (auto& v : out) v = v > 0.0 ? v : 0.0;
    return detail::make_result("relu", x.shape(), std::move(out), {x}, [](detail::Node& self) {
        auto* dx = detail::parent_grad(self, 0);
        if (!dx) return;
        const auto& in = self.parents[0]->values;
        for (std::size_t i = 0; i < in.size(); ++i) {
            if (in[i] > 0.0) (*dx)[i] += self.grad[i];
        }
    });
}

/// Max pooling over square windows; ties route the gradient to the first
/// row-major position of the window.
inline Tensor maxpool2d(const Tensor& x, std::size_t window, std::size_t stride) {
    detail::require_rank(x, 4, "maxpool2d", "input");
    if (window == 0 || stride == 0) throw ConfigError("maxpool2d: window and stride must be positive");
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = detail::window_extent(h, window, stride, 0, "maxpool2d");
    const std::size_t ow = detail::window_extent(w, window, stride, 0, "maxpool2d");
    std::vector<double> out(n * c * oh * ow);
    std::vector<std::size_t> argmax(out.size());
    const auto xv = x.values();
    for (std::size_t plane = 0; plane < n * c; ++plane) {
        const std::size_t base = plane * h * w;
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                std::size_t best = base + oy * stride * w + ox * stride;
                for (std::size_t i = 0; i < window; ++i) {
                    for (std::size_t j = 0; j < window; ++j) {
                        const std::size_t idx = base + (oy * stride + i) * w + ox * stride + j;
                        if (xv[idx] > xv[best]) best = idx;
                    }
                }
                const std::size_t o = (plane * oh + oy) * ow + ox;
                out[o] = xv[best];
                argmax[o] = best;
            }
        }
    }
    return detail::make_result("maxpool2d", Shape{n, c, oh, ow}, std::move(out), {x},
                               [argmax = std::move(argmax)](detail::Node& self) {
                                   auto* dx = detail::parent_grad(self, 0);
                                   if (!dx) return;
                                   for (std::size_t o = 0; o < argmax.size(); ++o) (*dx)[argmax[o]] += self.grad[o];
                               });
}

/// Mean pooling over square windows.
inline Tensor avgpool2d(const Tensor& x, std::size_t window, std::size_t stride) {
    detail::require_rank(x, 4, "avgpool2d", "input");
    if (window == 0 || stride == 0) throw ConfigError("avgpool2d: window and stride must be positive");
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = detail::window_extent(h, window, stride, 0, "avgpool2d");
    const std::size_t ow = detail::window_extent(w, window, stride, 0, "avgpool2d");
    const double scale = 1.0 / static_cast<double>(window * window);
    std::vector<double> out(n * c * oh * ow);
    const auto xv = x.values();
    for (std::size_t plane = 0; plane < n * c; ++plane) {
        const std::size_t base = plane * h * w;
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                double acc = 0.0;
                for (std::size_t i = 0; i < window; ++i) {
                    for (std::size_t j = 0; j < window; ++j) acc += xv[base + (oy * stride + i) * w + ox * stride + j];
                }
                out[(plane * oh + oy) * ow + ox] = acc * scale;
            }
        }
    }
    return detail::make_result(
        "avgpool2d", Shape{n, c, oh, ow}, std::move(out), {x}, [=](detail::Node& self) {
            auto* dx = detail::parent_grad(self, 0);
            if (!dx) return;
            for (std::size_t plane = 0; plane < n * c; ++plane) {
                const std::size_t base = plane * h * w;
                for (std::size_t oy = 0; oy < oh; ++oy) {
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                        const double g = self.grad[(plane * oh + oy) * ow + ox] * scale;
                        for (std::size_t i = 0; i < window; ++i) {
                            for (std::size_t j = 0; j < window; ++j) (*dx)[base + (oy * stride + i) * w + ox * stride + j] += g;
                        }
                    }
                }
            }
        });
}

/// Affine map x[N,D] * weight[D,K] + bias[K].
inline Tensor dense(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    detail::require_rank(x, 2, "dense", "input");
    detail::require_rank(weight, 2, "dense", "weight");
    detail::require_rank(bias, 1, "dense", "bias");
    const std::size_t n = x.dim(0), d = x.dim(1), k = weight.dim(1);
    if (weight.dim(0) != d) {
        throw DimensionError("dense: input width " + std::to_string(d) + " does not match weight " +
                             to_string(weight.shape()));
    }
    if (bias.dim(0) != k) {
        throw DimensionError("dense: bias " + to_string(bias.shape()) + " does not match " + std::to_string(k) + " units");
    }
    std::vector<double> out(n * k);
    detail::MatrixMap result(out.data(), n, k);
    detail::gemm(result, detail::ConstMatrixMap(x.values().data(), n, d), detail::ConstMatrixMap(weight.values().data(), d, k), false);
    const auto bv = bias.values();
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < k; ++j) out[r * k + j] += bv[j];
    return detail::make_result("dense", Shape{n, k}, std::move(out), {x, weight, bias}, [n, d, k](detail::Node& self) {
        detail::ConstMatrixMap g(self.grad.data(), n, k);
        if (auto* dx = detail::parent_grad(self, 0)) {
            detail::gemm(detail::MatrixMap(dx->data(), n, d), g,
                         detail::ConstMatrixMap(self.parents[1]->values.data(), d, k).transpose(), true);
        }
        if (auto* dw = detail::parent_grad(self, 1)) {
            detail::gemm(detail::MatrixMap(dw->data(), d, k),
                         detail::ConstMatrixMap(self.parents[0]->values.data(), n, d).transpose(), g, true);
        }
        if (auto* db = detail::parent_grad(self, 2)) {
            for (std::size_t j = 0; j < k; ++j) {
                double acc = 0.0;
                for (std::size_t r = 0; r < n; ++r) acc += self.grad[r * k + j];
                (*db)[j] += acc;
            }
        }
    });
}

/// Mean negative log-likelihood of the labelled classes under softmax(logits).
inline Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
    detail::require_rank(logits, 2, "softmax_cross_entropy", "logits");
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    if (labels.size() != n) {
        throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                             std::to_string(n) + " rows");
    }
    std::vector<double> probs(n * k);
    double total = 0.0;
    const auto lv = logits.values();
    for (std::size_t r = 0; r < n; ++r) {
        if (labels[r] >= k) {
            throw InputError("softmax_cross_entropy: label " + std::to_string(labels[r]) + " outside [0, " +
                             std::to_string(k) + ")");
        }
        const double* row = lv.data() + r * k;
        const double peak = *std::max_element(row, row + k);
        double denom = 0.0;
        for (std::size_t j = 0; j < k; ++j) denom += std::exp(row[j] - peak);
        const double log_denom = std::log(denom);
        for (std::size_t j = 0; j < k; ++j) probs[r * k + j] = std::exp(row[j] - peak - log_denom);
        total += log_denom - (row[labels[r]] - peak);
    }
    std::vector<std::size_t> targets(labels.begin(), labels.end());
    return detail::make_result("softmax_cross_entropy", Shape{1}, {total / static_cast<double>(n)}, {logits},
                               [n, k, probs = std::move(probs), targets = std::move(targets)](detail::Node& self) {
                                   auto* dl = detail::parent_grad(self, 0);
                                   if (!dl) return;
                                   const double scale = self.grad[0] / static_cast<double>(n);
                                   for (std::size_t r = 0; r < n; ++r) {
                                       for (std::size_t j = 0; j < k; ++j) {
                                           const double onehot = j == targets[r] ? 1.0 : 0.0;
                                           (*dl)[r * k + j] += scale * (probs[r * k + j] - onehot);
                                       }
                                   }
                               });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    return detail::make_result("add", a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
        for (std::size_t p = 0; p < 2; ++p) {
            if (auto* d = detail::parent_grad(self, p)) {
                for (std::size_t i = 0; i < d->size(); ++i) (*d)[i] += self.grad[i];
            }
        }
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "sub");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    return detail::make_result("sub", a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
        if (auto* d = detail::parent_grad(self, 0)) {
            for (std::size_t i = 0; i < d->size(); ++i) (*d)[i] += self.grad[i];
        }
        if (auto* d = detail::parent_grad(self, 1)) {
            for (std::size_t i = 0; i < d->size(); ++i) (*d)[i] -= self.grad[i];
        }
    });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "mul");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    return detail::make_result("mul", a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
        const auto& av = self.parents[0]->values;
        const auto& bv = self.parents[1]->values;
        if (auto* d = detail::parent_grad(self, 0)) {
            for (std::size_t i = 0; i < d->size(); ++i) (*d)[i] += self.grad[i] * bv[i];
        }
        if (auto* d = detail::parent_grad(self, 1)) {
            for (std::size_t i = 0; i < d->size(); ++i) (*d)[i] += self.grad[i] * av[i];
        }
    });
}

inline Tensor scale(const Tensor& x, double factor) {
    std::vector<double> out(x.values().begin(), x.values().end());
    for (auto& v : out) v *= factor;
    return detail::make_result("scale", x.shape(), std::move(out), {x}, [factor](detail::Node& self) {
        if (auto* d = detail::parent_grad(self, 0)) {
            for (std::size_t i = 0; i < d->size(); ++i) (*d)[i] += self.grad[i] * factor;
        }
    });
}

/// Multiplies by a fixed mask (no gradient w.r.t. the mask).
inline Tensor mask_multiply(const Tensor& x, std::vector<double> mask) {
    if (mask.size() != x.numel()) throw DimensionError("mask_multiply: mask size mismatch");
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * mask[i];
    return detail::make_result("mask_multiply", x.shape(), std::move(out), {x},
                               [mask = std::move(mask)](detail::Node& self) {
                                   if (auto* d = detail::parent_grad(self, 0)) {
                                       for (std::size_t i = 0; i < d->size(); ++i) (*d)[i] += self.grad[i] * mask[i];
                                   }
                               });
}

inline Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.values()) acc += v;
    return detail::make_result("sum", Shape{1}, {acc}, {x}, [](detail::Node& self) {
        if (auto* d = detail::parent_grad(self, 0)) {
            for (auto& v : *d) v += self.grad[0];
        }
    });
}

/// Same values under a new shape with equal element count.
inline Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw DimensionError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
    }
    return detail::make_result("reshape", std::move(shape), std::vector<double>(x.values().begin(), x.values().end()),
                               {x}, [](detail::Node& self) {
                                   if (auto* d = detail::parent_grad(self, 0)) {
                                       for (std::size_t i = 0; i < d->size(); ++i) (*d)[i] += self.grad[i];
                                   }
                               });
}

/// [N, ...] -> [N, prod(...)].
inline Tensor flatten(const Tensor& x) {
    if (x.rank() < 1) throw DimensionError("flatten: rank-0 tensor");
    return reshape(x, Shape{x.dim(0), x.numel() / x.dim(0)});
}

/// Concatenation of rank-2 tensors along the feature axis, in argument order.
inline Tensor concat_features(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DimensionError("concat_features: no inputs");
    const std::size_t n = parts.front().dim(0);
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const auto& p : parts) {
        detail::require_rank(p, 2, "concat_features", "feature tensor");
        if (p.dim(0) != n) {
            throw DimensionError("concat_features: batch extents differ (" + std::to_string(p.dim(0)) + " vs " +
                                 std::to_string(n) + ")");
        }
        widths.push_back(p.dim(1));
        total += p.dim(1);
    }
    std::vector<double> out(n * total);
    std::size_t offset = 0;
    for (std::size_t t = 0; t < parts.size(); ++t) {
        const auto v = parts[t].values();
        for (std::size_t r = 0; r < n; ++r) {
            std::copy_n(v.data() + r * widths[t], widths[t], out.data() + r * total + offset);
        }
        offset += widths[t];
    }
    return detail::make_result("concat_features", Shape{n, total}, std::move(out), parts,
                               [n, total, widths = std::move(widths)](detail::Node& self) {
                                   std::size_t offset = 0;
                                   for (std::size_t t = 0; t < widths.size(); ++t) {
                                       if (auto* d = detail::parent_grad(self, t)) {
                                           for (std::size_t r = 0; r < n; ++r) {
                                               for (std::size_t j = 0; j < widths[t]; ++j) {
                                                   (*d)[r * widths[t] + j] += self.grad[r * total + offset + j];
                                               }
                                           }
                                       }
                                       offset += widths[t];
                                   }
                               });
}

/// relu(conv(relu(conv(x))) + x): a plain residual block with identity shortcut.
inline Tensor residual_block(const Tensor& x, const Tensor& k1, const Tensor& b1, const Tensor& k2, const Tensor& b2,
                             std::size_t padding) {
    auto branch = conv2d(relu(conv2d(x, k1, b1, 1, padding)), k2, b2, 1, padding);
    if (branch.shape() != x.shape()) {
        throw DimensionError("residual_block: branch output " + to_string(branch.shape()) +
                             " does not match shortcut " + to_string(x.shape()));
    }
    return relu(add(branch, x));
}

} // namespace lcnn

#endif // LCNN_OPS_HPP
