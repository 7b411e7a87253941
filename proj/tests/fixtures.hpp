#ifndef LCNN_TESTS_FIXTURES_HPP
#define LCNN_TESTS_FIXTURES_HPP

// Hand-built byte fixtures for the dataset parsers.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <unistd.h>

#include "lcnn/dataset.hpp"

namespace fixture {

namespace fs = std::filesystem;

inline fs::path scratch_dir(const std::string& tag) {
    static int counter = 0;
    auto dir = fs::temp_directory_path() /
               ("lcnn_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

inline fs::path write(const fs::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    return path;
}

using PixelFn = std::function<std::uint8_t(std::size_t)>;

inline std::string cifar_planes(const PixelFn& px) {
    std::string out(3072, '\0');
    for (std::size_t i = 0; i < 3072; ++i) out[i] = static_cast<char>(px ? px(i) : std::uint8_t(i % 256));
    return out;
}

inline std::string cifar10_record(std::uint8_t label, const PixelFn& px = {}) {
    return std::string(1, static_cast<char>(label)) + cifar_planes(px);
}

inline std::string cifar100_record(std::uint8_t coarse, std::uint8_t fine, const PixelFn& px = {}) {
    return std::string{static_cast<char>(coarse), static_cast<char>(fine)} + cifar_planes(px);
}

inline void put_i32(std::string& s, std::int32_t v) {
    const auto u = static_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((u >> (8 * i)) & 0xFF));
}

inline std::uint8_t norb_pixel(std::size_t item, std::size_t cam, std::size_t p) {
    return static_cast<std::uint8_t>((item * 131 + cam * 71 + p * 7) % 256);
}

/// small-NORB style pair: dat [N,2,size,size] bytes, cat [N] int32 with the
/// 3-slot header padding of the published files.
inline std::pair<fs::path, fs::path> norb_files(const fs::path& dir, const std::vector<std::int32_t>& labels,
                                                std::size_t size, std::size_t cat_count = SIZE_MAX) {
    const std::size_t n = labels.size();
    if (cat_count == SIZE_MAX) cat_count = n;
    std::string dat, cat;
    put_i32(dat, 0x1E3D4C55);
    put_i32(dat, 4);
    for (auto d : {n, std::size_t{2}, size, size}) put_i32(dat, static_cast<std::int32_t>(d));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t cam = 0; cam < 2; ++cam)
            for (std::size_t p = 0; p < size * size; ++p) dat.push_back(static_cast<char>(norb_pixel(i, cam, p)));
    put_i32(cat, 0x1E3D4C54);
    put_i32(cat, 1);
    put_i32(cat, static_cast<std::int32_t>(cat_count));
    put_i32(cat, 1);
    put_i32(cat, 1);
    for (std::size_t i = 0; i < cat_count; ++i) put_i32(cat, labels[i % n]);
    return {write(dir / "norb-dat.mat", dat), write(dir / "norb-cat.mat", cat)};
}

/// In-memory dataset, class-major; source ids "syn:<index>".
inline lcnn::Dataset synthetic(std::size_t classes, std::size_t per_class, std::size_t extent) {
    lcnn::Dataset ds;
    ds.num_classes = classes;
    ds.provenance = {{"loader", "synthetic"}, {"steps", nlohmann::json::array()}};
    for (std::size_t c = 0; c < classes; ++c)
        for (std::size_t i = 0; i < per_class; ++i) {
            const std::size_t idx = c * per_class + i;
            lcnn::Image img(extent, extent, 1, static_cast<std::uint8_t>(idx % 256));
            ds.samples.push_back({img, std::nullopt, c, "syn:" + std::to_string(idx)});
        }
    return ds;
}

} // namespace fixture

#endif // LCNN_TESTS_FIXTURES_HPP
