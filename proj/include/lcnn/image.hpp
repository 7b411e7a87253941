#ifndef LCNN_IMAGE_HPP
#define LCNN_IMAGE_HPP

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "lcnn/errors.hpp"

namespace lcnn {

/// 8-bit image, row-major, channel-last (HWC).
struct Image {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 1;
    std::vector<std::uint8_t> pixels;

    Image() = default;
    Image(std::size_t h, std::size_t w, std::size_t c, std::uint8_t fill = 0)
        : height(h), width(w), channels(c), pixels(h * w * c, fill) {
        validate();
    }
    Image(std::size_t h, std::size_t w, std::size_t c, std::vector<std::uint8_t> px)
        : height(h), width(w), channels(c), pixels(std::move(px)) {
        validate();
    }

    std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c = 0) { return pixels[(y * width + x) * channels + c]; }
    std::uint8_t at(std::size_t y, std::size_t x, std::size_t c = 0) const {
        return pixels[(y * width + x) * channels + c];
    }

    void validate() const {
        if (height == 0 || width == 0) throw InputError("image extents must be positive");
        if (channels != 1 && channels != 3) throw InputError("image must have 1 or 3 channels");
        if (pixels.size() != height * width * channels) {
            throw InputError("image holds " + std::to_string(pixels.size()) + " bytes, expected " +
                             std::to_string(height * width * channels));
        }
    }

    friend bool operator==(const Image&, const Image&) = default;
};

} // namespace lcnn

#endif // LCNN_IMAGE_HPP
