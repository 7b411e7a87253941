#ifndef LCNN_DATASET_HPP
#define LCNN_DATASET_HPP

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "lcnn/errors.hpp"
#include "lcnn/image.hpp"
#include "lcnn/rng.hpp"

namespace lcnn {

struct Sample {
    Image primary;
    std::optional<Image> secondary;
    std::size_t label = 0;
    std::string source_id;

    friend bool operator==(const Sample&, const Sample&) = default;
};

enum class Split { train, test };

inline std::string_view to_string(Split s) { return s == Split::train ? "train" : "test"; }

inline Split parse_split(std::string_view s) {
    if (s == "train") return Split::train;
    if (s == "test") return Split::test;
    throw ConfigError("unknown split '" + std::string(s) + "'");
}

/// Labelled image collection. `provenance` records the source files (with
/// digests) and every transformation applied, enough to rebuild it.
struct Dataset {
    std::vector<Sample> samples;
    std::size_t num_classes = 0;
    Split split = Split::train;
    nlohmann::json provenance = nlohmann::json::object();

    std::size_t size() const { return samples.size(); }
    bool empty() const { return samples.empty(); }

    std::vector<std::size_t> class_counts() const {
        std::vector<std::size_t> counts(num_classes, 0);
        for (const auto& s : samples) ++counts.at(s.label);
        return counts;
    }
};

/// Per-sample validation-fold index for k-fold cross-validation.
struct FoldSplit {
    std::size_t fold_count = 0;
    std::vector<std::size_t> assignments;
    std::uint64_t seed = 0;

    std::vector<std::size_t> validation_indices(std::size_t fold) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < assignments.size(); ++i) {
            if (assignments[i] == fold) out.push_back(i);
        }
        return out;
    }

    std::vector<std::size_t> training_indices(std::size_t fold) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < assignments.size(); ++i) {
            if (assignments[i] != fold) out.push_back(i);
        }
        return out;
    }
};

namespace detail {

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline nlohmann::json source_record(const std::filesystem::path& path, std::string_view bytes) {
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(fnv1a64(bytes)));
    return {{"path", path.string()}, {"bytes", bytes.size()}, {"fnv1a64", hex}};
}

inline std::vector<std::filesystem::path> sorted_paths(std::vector<std::filesystem::path> paths) {
    std::sort(paths.begin(), paths.end());
    return paths;
}

// CIFAR stores each channel as a 32x32 plane; Image is channel-last.
inline Image cifar_image(const unsigned char* planes) {
    Image img(32, 32, 3);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t p = 0; p < 1024; ++p) img.pixels[p * 3 + c] = planes[c * 1024 + p];
    return img;
}

inline Dataset load_cifar(const std::vector<std::filesystem::path>& paths, Split split, bool hundred) {
    const std::size_t label_bytes = hundred ? 2 : 1;
    const std::size_t record = label_bytes + 3072;
    const std::size_t classes = hundred ? 100 : 10;
    Dataset ds;
    ds.num_classes = classes;
    ds.split = split;
    ds.provenance = {{"loader", hundred ? "cifar100" : "cifar10"}, {"split", to_string(split)},
                     {"sources", nlohmann::json::array()}, {"steps", nlohmann::json::array()}};
    for (const auto& path : sorted_paths(paths)) {
        const std::string bytes = read_file(path);
        if (bytes.size() % record != 0) {
            const std::size_t offset = bytes.size() - bytes.size() % record;
            throw FormatError(path.string() + ": truncated record at byte offset " + std::to_string(offset) + " (" +
                              std::to_string(bytes.size() % record) + " of " + std::to_string(record) + " bytes)");
        }
        const auto* data = reinterpret_cast<const unsigned char*>(bytes.data());
        const std::string stem = path.filename().string();
        for (std::size_t i = 0, off = 0; off < bytes.size(); ++i, off += record) {
            const std::size_t label = data[off + label_bytes - 1];
            if (label >= classes) {
                throw CorruptionError(path.string() + ": label " + std::to_string(label) + " >= " + std::to_string(classes) +
                                      " at byte offset " + std::to_string(off + label_bytes - 1));
            }
            ds.samples.push_back({cifar_image(data + off + label_bytes), std::nullopt, label, stem + ":" + std::to_string(i)});
        }
        ds.provenance["sources"].push_back(source_record(path, bytes));
    }
    return ds;
}

struct MatrixHeader {
    std::uint32_t magic = 0;
    std::vector<std::size_t> dims;
    std::size_t data_offset = 0;
};

inline std::uint32_t read_u32le(const std::string& bytes, std::size_t offset, const std::string& what) {
    if (offset + 4 > bytes.size()) {
        throw FormatError(what + ": truncated header at byte offset " + std::to_string(offset));
    }
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + offset);
    return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
           static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

// Binary matrix header: magic, ndim, then max(3, ndim) extents (unused
// trailing slots are present but ignored), all little-endian int32.
inline MatrixHeader read_matrix_header(const std::string& bytes, const std::string& what) {
    MatrixHeader h;
    h.magic = read_u32le(bytes, 0, what);
    const std::uint32_t ndim = read_u32le(bytes, 4, what);
    if (ndim == 0 || ndim > 16) throw FormatError(what + ": implausible rank " + std::to_string(ndim) + " at byte offset 4");
    const std::size_t slots = std::max<std::uint32_t>(3, ndim);
    for (std::size_t i = 0; i < slots; ++i) {
        const auto d = read_u32le(bytes, 8 + 4 * i, what);
        if (i < ndim) h.dims.push_back(d);
    }
    h.data_offset = 8 + 4 * slots;
    return h;
}

} // namespace detail

/// CIFAR-10 binary batches: 3073-byte records (label, R plane, G plane, B plane).
inline Dataset load_cifar10(const std::vector<std::filesystem::path>& paths, Split split = Split::train) {
    return detail::load_cifar(paths, split, false);
}

/// CIFAR-100 binary files: 3074-byte records (coarse label, fine label, planes).
/// Only the fine label is kept.
inline Dataset load_cifar100(const std::vector<std::filesystem::path>& paths, Split split = Split::train) {
    return detail::load_cifar(paths, split, true);
}

inline constexpr std::uint32_t kNorbByteMatrixMagic = 0x1E3D4C55;
inline constexpr std::uint32_t kNorbIntMatrixMagic = 0x1E3D4C54;
inline constexpr std::size_t kNorbClasses = 5;

/// small-NORB "dat" (uint8 [N, 2, H, W]) and "cat" (int32 [N]) files. The
/// left camera becomes the primary stream, the right camera the secondary.
inline Dataset load_norb(const std::filesystem::path& dat_path, const std::filesystem::path& cat_path,
                         Split split = Split::train) {
    const std::string dat = detail::read_file(dat_path);
    const std::string cat = detail::read_file(cat_path);
    const auto dh = detail::read_matrix_header(dat, dat_path.string());
    const auto ch = detail::read_matrix_header(cat, cat_path.string());
    if (dh.magic != kNorbByteMatrixMagic) {
        throw FormatError(dat_path.string() + ": expected byte-matrix magic 0x1E3D4C55 at byte offset 0");
    }
    if (ch.magic != kNorbIntMatrixMagic) {
        throw FormatError(cat_path.string() + ": expected int-matrix magic 0x1E3D4C54 at byte offset 0");
    }
    if (dh.dims.size() != 4 || dh.dims[1] != 2) {
        throw FormatError(dat_path.string() + ": expected an [N, 2, H, W] stereo matrix");
    }
    if (ch.dims.empty()) throw FormatError(cat_path.string() + ": category matrix has no extent");
    const std::size_t n = dh.dims[0], h = dh.dims[2], w = dh.dims[3];
    if (ch.dims[0] != n) {
        throw ConsistencyError("NORB item counts differ: " + std::to_string(n) + " images vs " + std::to_string(ch.dims[0]) +
                               " categories");
    }
    const std::size_t plane = h * w;
    if (dat.size() < dh.data_offset + n * 2 * plane) {
        throw FormatError(dat_path.string() + ": truncated image data at byte offset " + std::to_string(dat.size()));
    }
    if (cat.size() < ch.data_offset + n * 4) {
        throw FormatError(cat_path.string() + ": truncated category data at byte offset " + std::to_string(cat.size()));
    }
    Dataset ds;
    ds.num_classes = kNorbClasses;
    ds.split = split;
    ds.provenance = {{"loader", "norb"},
                     {"split", to_string(split)},
                     {"sources", {detail::source_record(dat_path, dat), detail::source_record(cat_path, cat)}},
                     {"steps", nlohmann::json::array()}};
    const auto* px = reinterpret_cast<const std::uint8_t*>(dat.data() + dh.data_offset);
    const std::string stem = dat_path.filename().string();
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t off = ch.data_offset + 4 * i;
        const auto label = static_cast<std::int32_t>(detail::read_u32le(cat, off, cat_path.string()));
        if (label < 0 || static_cast<std::size_t>(label) >= kNorbClasses) {
            throw CorruptionError(cat_path.string() + ": category " + std::to_string(label) + " outside 0..4 at byte offset " +
                                  std::to_string(off));
        }
        Image left(h, w, 1, std::vector<std::uint8_t>(px + (2 * i) * plane, px + (2 * i + 1) * plane));
        Image right(h, w, 1, std::vector<std::uint8_t>(px + (2 * i + 1) * plane, px + (2 * i + 2) * plane));
        ds.samples.push_back({std::move(left), std::move(right), static_cast<std::size_t>(label), stem + ":" + std::to_string(i)});
    }
    return ds;
}

namespace detail {

// Keeps samples whose label is in `classes` (ascending), remapping labels to
// their rank in that list.
inline Dataset keep_classes(const Dataset& src, const std::vector<std::size_t>& classes) {
    std::map<std::size_t, std::size_t> remap;
    for (std::size_t i = 0; i < classes.size(); ++i) remap[classes[i]] = i;
    Dataset out;
    out.num_classes = classes.size();
    out.split = src.split;
    out.provenance = src.provenance;
    for (const auto& s : src.samples) {
        auto it = remap.find(s.label);
        if (it == remap.end()) continue;
        Sample copy = s;
        copy.label = it->second;
        out.samples.push_back(std::move(copy));
    }
    return out;
}

} // namespace detail

/// Fifty CIFAR-100 classes chosen by a seeded shuffle of 0..99 (first 50,
/// sorted ascending); labels are remapped densely in that order.
inline Dataset make_cifar50(const Dataset& cifar100, std::uint64_t seed) {
    if (cifar100.num_classes != 100) throw ConfigError("make_cifar50 needs a 100-class source");
    std::vector<std::size_t> order(100);
    for (std::size_t i = 0; i < 100; ++i) order[i] = i;
    Rng rng(derive_seed(seed, 50));
    rng.shuffle(std::span<std::size_t>(order));
    std::vector<std::size_t> chosen(order.begin(), order.begin() + 50);
    std::sort(chosen.begin(), chosen.end());
    auto out = detail::keep_classes(cifar100, chosen);
    out.provenance["steps"].push_back({{"op", "cifar50"}, {"seed", seed}, {"classes", chosen}});
    return out;
}

/// Seeded stratified selection of `per_class` samples from each of the
/// `classes` lowest-numbered labels. Kept samples retain their source order.
inline Dataset subsample(const Dataset& src, std::size_t classes, std::size_t per_class, std::uint64_t seed) {
    if (classes == 0 || classes > src.num_classes) {
        throw ConfigError("subsample: cannot take " + std::to_string(classes) + " of " + std::to_string(src.num_classes) +
                          " classes");
    }
    std::vector<std::vector<std::size_t>> by_class(classes);
    for (std::size_t i = 0; i < src.samples.size(); ++i) {
        if (src.samples[i].label < classes) by_class[src.samples[i].label].push_back(i);
    }
    std::vector<char> keep(src.samples.size(), 0);
    Rng rng(derive_seed(seed, 0x5B));
    for (std::size_t c = 0; c < classes; ++c) {
        auto& idx = by_class[c];
        if (idx.size() < per_class) {
            throw ConfigError("subsample: class " + std::to_string(c) + " has " + std::to_string(idx.size()) +
                              " samples, " + std::to_string(per_class) + " requested");
        }
        rng.shuffle(std::span<std::size_t>(idx));
        for (std::size_t k = 0; k < per_class; ++k) keep[idx[k]] = 1;
    }
    Dataset out;
    out.num_classes = classes;
    out.split = src.split;
    out.provenance = src.provenance;
    for (std::size_t i = 0; i < src.samples.size(); ++i) {
        if (keep[i]) out.samples.push_back(src.samples[i]);
    }
    out.provenance["steps"].push_back({{"op", "subsample"}, {"classes", classes}, {"per_class", per_class}, {"seed", seed}});
    return out;
}

/// Stratified k-fold assignment: each class's samples are shuffled with the
/// seed and dealt round-robin, the dealing position carried across classes so
/// fold sizes differ by at most one overall.
inline FoldSplit kfold_split(const Dataset& ds, std::size_t k, std::uint64_t seed) {
    if (k < 2) throw ConfigError("kfold_split: need at least 2 folds");
    if (ds.empty()) throw ConfigError("kfold_split: empty dataset");
    std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
    for (std::size_t i = 0; i < ds.samples.size(); ++i) by_class.at(ds.samples[i].label).push_back(i);
    std::size_t smallest = SIZE_MAX;
    for (const auto& c : by_class) {
        if (!c.empty()) smallest = std::min(smallest, c.size());
    }
    if (k > smallest) {
        throw ConfigError("kfold_split: " + std::to_string(k) + " folds but the smallest class has " +
                          std::to_string(smallest) + " samples");
    }
    FoldSplit split{k, std::vector<std::size_t>(ds.samples.size(), 0), seed};
    Rng rng(derive_seed(seed, 0xF01D));
    std::size_t deal = 0;
    for (auto& members : by_class) {
        rng.shuffle(std::span<std::size_t>(members));
        for (auto idx : members) split.assignments[idx] = deal++ % k;
    }
    return split;
}

/// Copy of `ds` restricted to `indices`, in the given order.
inline Dataset select(const Dataset& ds, const std::vector<std::size_t>& indices) {
    Dataset out;
    out.num_classes = ds.num_classes;
    out.split = ds.split;
    out.provenance = ds.provenance;
    out.samples.reserve(indices.size());
    for (auto i : indices) out.samples.push_back(ds.samples.at(i));
    return out;
}

// ---------------------------------------------------------------------------
// Prepared-dataset container written by `prepare-data`:
//   "LCNNDS1\n", u64 LE header length, header JSON, then per sample:
//   u32 label, u32 id length, id bytes, u8 has_secondary, image(s) as
//   u32 height, u32 width, u32 channels, pixels.

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_image(std::string& out, const Image& img) {
    put_u32(out, static_cast<std::uint32_t>(img.height));
    put_u32(out, static_cast<std::uint32_t>(img.width));
    put_u32(out, static_cast<std::uint32_t>(img.channels));
    out.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
}

inline Image get_image(const std::string& bytes, std::size_t& off, const std::string& what) {
    const auto h = read_u32le(bytes, off, what);
    const auto w = read_u32le(bytes, off + 4, what);
    const auto c = read_u32le(bytes, off + 8, what);
    off += 12;
    const std::size_t n = std::size_t{h} * w * c;
    if (off + n > bytes.size()) throw FormatError(what + ": truncated pixels at byte offset " + std::to_string(off));
    Image img(h, w, c, std::vector<std::uint8_t>(bytes.begin() + static_cast<std::ptrdiff_t>(off),
                                                 bytes.begin() + static_cast<std::ptrdiff_t>(off + n)));
    off += n;
    return img;
}

} // namespace detail

inline constexpr std::string_view kPreparedMagic = "LCNNDS1\n";

inline std::string serialize_dataset(const Dataset& ds) {
    nlohmann::json header{{"num_classes", ds.num_classes},
                          {"split", to_string(ds.split)},
                          {"count", ds.samples.size()},
                          {"provenance", ds.provenance}};
    const std::string text = header.dump();
    std::string out(kPreparedMagic);
    const std::uint64_t len = text.size();
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((len >> (8 * i)) & 0xFF));
    out += text;
    for (const auto& s : ds.samples) {
        detail::put_u32(out, static_cast<std::uint32_t>(s.label));
        detail::put_u32(out, static_cast<std::uint32_t>(s.source_id.size()));
        out += s.source_id;
        out.push_back(s.secondary ? 1 : 0);
        detail::put_image(out, s.primary);
        if (s.secondary) detail::put_image(out, *s.secondary);
    }
    return out;
}

inline Dataset deserialize_dataset(const std::string& bytes, const std::string& what = "dataset") {
    if (bytes.compare(0, kPreparedMagic.size(), kPreparedMagic) != 0) {
        throw FormatError(what + ": missing prepared-dataset magic at byte offset 0");
    }
    std::size_t off = kPreparedMagic.size();
    if (off + 8 > bytes.size()) throw FormatError(what + ": truncated header at byte offset " + std::to_string(off));
    std::uint64_t len = 0;
    for (int i = 0; i < 8; ++i) len |= std::uint64_t(static_cast<unsigned char>(bytes[off + i])) << (8 * i);
    off += 8;
    if (off + len > bytes.size()) throw FormatError(what + ": truncated header at byte offset " + std::to_string(off));
    Dataset ds;
    std::size_t count = 0;
    try {
        const auto header = nlohmann::json::parse(bytes.substr(off, len));
        ds.num_classes = header.at("num_classes").get<std::size_t>();
        ds.split = parse_split(header.at("split").get<std::string>());
        ds.provenance = header.at("provenance");
        count = header.at("count").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(what + ": bad header: " + e.what());
    }
    off += len;
    for (std::size_t i = 0; i < count; ++i) {
        Sample s;
        s.label = detail::read_u32le(bytes, off, what);
        if (s.label >= ds.num_classes) {
            throw CorruptionError(what + ": label " + std::to_string(s.label) + " at byte offset " + std::to_string(off));
        }
        const auto id_len = detail::read_u32le(bytes, off + 4, what);
        off += 8;
        if (off + id_len + 1 > bytes.size()) throw FormatError(what + ": truncated sample at byte offset " + std::to_string(off));
        s.source_id = bytes.substr(off, id_len);
        off += id_len;
        const bool has_secondary = bytes[off++] != 0;
        s.primary = detail::get_image(bytes, off, what);
        if (has_secondary) s.secondary = detail::get_image(bytes, off, what);
        ds.samples.push_back(std::move(s));
    }
    if (off != bytes.size()) throw FormatError(what + ": trailing bytes at byte offset " + std::to_string(off));
    return ds;
}

inline Dataset load_prepared(const std::filesystem::path& path) {
    return deserialize_dataset(detail::read_file(path), path.string());
}

/// Writes via a temp file and rename so a reader never sees a partial file.
inline void save_prepared(const Dataset& ds, const std::filesystem::path& path) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        const auto bytes = serialize_dataset(ds);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out.flush()) throw IoError("write failed for " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename " + tmp.string() + ": " + ec.message());
}

} // namespace lcnn

#endif // LCNN_DATASET_HPP
