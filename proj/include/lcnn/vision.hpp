#ifndef LCNN_VISION_HPP
#define LCNN_VISION_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "lcnn/dataset.hpp"
#include "lcnn/errors.hpp"
#include "lcnn/image.hpp"
#include "lcnn/tensor.hpp"

namespace lcnn {

struct CannyParams {
    double low = 50.0;
    double high = 100.0;
    double sigma = 1.0;
};

namespace detail {

// Mirror index without repeating the edge sample (…2 1 | 0 1 2 … n-1 | n-2 …).
inline std::size_t reflect101(std::ptrdiff_t i, std::size_t n) {
    if (n == 1) return 0;
    const auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
    i %= period;
    if (i < 0) i += period;
    if (i >= static_cast<std::ptrdiff_t>(n)) i = period - i;
    return static_cast<std::size_t>(i);
}

inline std::uint8_t to_byte(double v) {
    return static_cast<std::uint8_t>(std::clamp<long>(std::lround(v), 0, 255));
}

} // namespace detail

/// Luma = round(0.299 R + 0.587 G + 0.114 B), evaluated in integer arithmetic
/// so halves round up exactly.
inline Image to_grayscale(const Image& img) {
    if (img.channels != 3) throw InputError("to_grayscale needs a 3-channel image, got " + std::to_string(img.channels));
    Image out(img.height, img.width, 1);
    for (std::size_t p = 0; p < img.height * img.width; ++p) {
        const unsigned r = img.pixels[3 * p], g = img.pixels[3 * p + 1], b = img.pixels[3 * p + 2];
        out.pixels[p] = static_cast<std::uint8_t>((299 * r + 587 * g + 114 * b + 500) / 1000);
    }
    return out;
}

/// Normalized 1-D Gaussian of radius ceil(3 sigma), index 0 at offset -radius.
inline std::vector<double> gaussian_kernel(double sigma) {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ConfigError("gaussian sigma must be positive");
    const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double total = 0.0;
    for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
        k[static_cast<std::size_t>(i + radius)] = std::exp(-double(i * i) / (2.0 * sigma * sigma));
        total += k[static_cast<std::size_t>(i + radius)];
    }
    for (auto& w : k) w /= total;
    return k;
}

/// Separable Gaussian blur with reflect-101 borders; each channel independently.
inline Image gaussian_blur(const Image& img, double sigma) {
    const auto k = gaussian_kernel(sigma);
    const auto r = static_cast<std::ptrdiff_t>(k.size() / 2);
    const std::size_t h = img.height, w = img.width, c = img.channels;
    std::vector<double> tmp(h * w * c);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                for (std::ptrdiff_t i = -r; i <= r; ++i) {
                    const auto xx = detail::reflect101(static_cast<std::ptrdiff_t>(x) + i, w);
                    acc += k[static_cast<std::size_t>(i + r)] * img.at(y, xx, ch);
                }
                tmp[(y * w + x) * c + ch] = acc;
            }
    Image out(h, w, c);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                for (std::ptrdiff_t i = -r; i <= r; ++i) {
                    const auto yy = detail::reflect101(static_cast<std::ptrdiff_t>(y) + i, h);
                    acc += k[static_cast<std::size_t>(i + r)] * tmp[(yy * w + x) * c + ch];
                }
                out.at(y, x, ch) = detail::to_byte(acc);
            }
    return out;
}

/// Canny edge map: grayscale, blur, 3x3 Sobel (reflect-101), 4-bin
/// non-maximum suppression, 8-connected hysteresis. Output is 0 or 255.
///
/// NMS compares against the two neighbours along the gradient; off-image
/// neighbours count as 0. A pixel survives if it is >= the neighbour on the
/// negative side and > the one on the positive side, so a two-pixel plateau
/// yields a single edge pixel.
inline Image canny(const Image& img, const CannyParams& p = {}) {
    if (!(p.low >= 0.0) || !(p.high >= p.low)) throw ConfigError("canny needs 0 <= low <= high");
    const Image gray = gaussian_blur(img.channels == 3 ? to_grayscale(img) : img, p.sigma);
    const std::size_t h = gray.height, w = gray.width;
    auto px = [&](std::ptrdiff_t y, std::ptrdiff_t x) -> int {
        return gray.at(detail::reflect101(y, h), detail::reflect101(x, w));
    };

    std::vector<double> mag(h * w);
    std::vector<std::uint8_t> bin(h * w); // 0: horizontal, 1: 45°, 2: vertical, 3: 135°
    for (std::size_t yu = 0; yu < h; ++yu)
        for (std::size_t xu = 0; xu < w; ++xu) {
            const auto y = static_cast<std::ptrdiff_t>(yu), x = static_cast<std::ptrdiff_t>(xu);
            const int gx = (px(y - 1, x + 1) + 2 * px(y, x + 1) + px(y + 1, x + 1)) -
                           (px(y - 1, x - 1) + 2 * px(y, x - 1) + px(y + 1, x - 1));
            const int gy = (px(y + 1, x - 1) + 2 * px(y + 1, x) + px(y + 1, x + 1)) -
                           (px(y - 1, x - 1) + 2 * px(y - 1, x) + px(y - 1, x + 1));
            mag[yu * w + xu] = std::sqrt(double(gx) * gx + double(gy) * gy);
            double deg = std::atan2(double(gy), double(gx)) * 180.0 / std::numbers::pi;
            if (deg < 0.0) deg += 180.0;
            bin[yu * w + xu] = deg < 22.5 || deg >= 157.5 ? 0 : deg < 67.5 ? 1 : deg < 112.5 ? 2 : 3;
        }

    static constexpr int kDy[4] = {0, 1, 1, 1};
    static constexpr int kDx[4] = {1, 1, 0, -1};
    auto mag_at = [&](std::ptrdiff_t y, std::ptrdiff_t x) {
        if (y < 0 || x < 0 || y >= static_cast<std::ptrdiff_t>(h) || x >= static_cast<std::ptrdiff_t>(w)) return 0.0;
        return mag[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)];
    };

    // 0 none, 1 weak, 2 strong
    std::vector<std::uint8_t> cls(h * w, 0);
    std::vector<std::size_t> stack;
    for (std::size_t yu = 0; yu < h; ++yu)
        for (std::size_t xu = 0; xu < w; ++xu) {
            const std::size_t i = yu * w + xu;
            const double m = mag[i];
            if (m <= 0.0 || m < p.low) continue;
            const auto y = static_cast<std::ptrdiff_t>(yu), x = static_cast<std::ptrdiff_t>(xu);
            const int dy = kDy[bin[i]], dx = kDx[bin[i]];
            if (!(m >= mag_at(y - dy, x - dx) && m > mag_at(y + dy, x + dx))) continue;
            cls[i] = m >= p.high ? 2 : 1;
            if (cls[i] == 2) stack.push_back(i);
        }

    Image out(h, w, 1);
    for (auto i : stack) out.pixels[i] = 255;
    while (!stack.empty()) {
        const std::size_t i = stack.back();
        stack.pop_back();
        const auto y = static_cast<std::ptrdiff_t>(i / w), x = static_cast<std::ptrdiff_t>(i % w);
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                const auto ny = y + dy, nx = x + dx;
                if (ny < 0 || nx < 0 || ny >= static_cast<std::ptrdiff_t>(h) || nx >= static_cast<std::ptrdiff_t>(w)) continue;
                const std::size_t j = static_cast<std::size_t>(ny) * w + static_cast<std::size_t>(nx);
                if (cls[j] == 1 && out.pixels[j] == 0) {
                    out.pixels[j] = 255;
                    stack.push_back(j);
                }
            }
    }
    return out;
}

/// Corner-aligned bilinear resize; results rounded half away from zero.
inline Image resize(const Image& img, std::size_t out_h, std::size_t out_w) {
    if (out_h == 0 || out_w == 0) throw ConfigError("resize extents must be positive");
    Image out(out_h, out_w, img.channels);
    auto src = [](std::size_t i, std::size_t out_n, std::size_t in_n) {
        return out_n == 1 ? 0.0 : double(i) * double(in_n - 1) / double(out_n - 1);
    };
    for (std::size_t y = 0; y < out_h; ++y) {
        const double sy = src(y, out_h, img.height);
        const auto y0 = std::min(static_cast<std::size_t>(sy), img.height - 1);
        const auto y1 = std::min(y0 + 1, img.height - 1);
        const double fy = sy - double(y0);
        for (std::size_t x = 0; x < out_w; ++x) {
            const double sx = src(x, out_w, img.width);
            const auto x0 = std::min(static_cast<std::size_t>(sx), img.width - 1);
            const auto x1 = std::min(x0 + 1, img.width - 1);
            const double fx = sx - double(x0);
            for (std::size_t c = 0; c < img.channels; ++c) {
                const double top = img.at(y0, x0, c) * (1 - fx) + img.at(y0, x1, c) * fx;
                const double bot = img.at(y1, x0, c) * (1 - fx) + img.at(y1, x1, c) * fx;
                out.at(y, x, c) = detail::to_byte(top * (1 - fy) + bot * fy);
            }
        }
    }
    return out;
}

/// [C, H, W] tensor of pixel / 255.
inline Tensor normalize(const Image& img) {
    std::vector<double> v(img.pixels.size());
    const std::size_t plane = img.height * img.width;
    for (std::size_t p = 0; p < plane; ++p)
        for (std::size_t c = 0; c < img.channels; ++c) v[c * plane + p] = img.pixels[p * img.channels + c] / 255.0;
    return Tensor(Shape{img.channels, img.height, img.width}, std::move(v));
}

inline Image denormalize(const Tensor& t) {
    if (t.rank() != 3) throw DimensionError("denormalize needs a [C,H,W] tensor, got " + to_string(t.shape()));
    const std::size_t c = t.dim(0), h = t.dim(1), w = t.dim(2), plane = h * w;
    Image img(h, w, c);
    for (std::size_t p = 0; p < plane; ++p)
        for (std::size_t ch = 0; ch < c; ++ch) img.pixels[p * c + ch] = detail::to_byte(t[ch * plane + p] * 255.0);
    return img;
}

/// Binary P5 PGM; colour images are converted to grayscale first.
inline void write_pgm(const std::filesystem::path& path, const Image& img) {
    const Image& g = img.channels == 1 ? img : to_grayscale(img);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << "P5\n" << g.width << " " << g.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(g.pixels.data()), static_cast<std::streamsize>(g.pixels.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

inline Image replicate_channels(const Image& gray, std::size_t channels) {
    if (channels == 1) return gray;
    Image out(gray.height, gray.width, channels);
    for (std::size_t p = 0; p < gray.pixels.size(); ++p)
        for (std::size_t c = 0; c < channels; ++c) out.pixels[p * channels + c] = gray.pixels[p];
    return out;
}

/// Replaces each sample's secondary stream with the Canny map of its primary,
/// replicated to the primary's channel count.
inline Dataset make_second_stream(const Dataset& ds, const CannyParams& p = {}) {
    Dataset out = ds;
    for (auto& s : out.samples) s.secondary = replicate_channels(canny(s.primary, p), s.primary.channels);
    out.provenance["steps"].push_back({{"op", "edges"}, {"low", p.low}, {"high", p.high}, {"sigma", p.sigma}});
    return out;
}

} // namespace lcnn

#endif // LCNN_VISION_HPP
