#ifndef LCNN_PIPELINE_HPP
#define LCNN_PIPELINE_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lcnn/dataset.hpp"
#include "lcnn/errors.hpp"
#include "lcnn/vision.hpp"

namespace lcnn {

enum class DatasetKind { cifar10, cifar50, cifar100, norb };

inline std::string to_string(DatasetKind k) {
    switch (k) {
    case DatasetKind::cifar10: return "cifar10";
    case DatasetKind::cifar50: return "cifar50";
    case DatasetKind::cifar100: return "cifar100";
    case DatasetKind::norb: return "norb";
    }
    return "?";
}

inline DatasetKind parse_dataset_kind(std::string_view s) {
    if (s == "cifar10") return DatasetKind::cifar10;
    if (s == "cifar50") return DatasetKind::cifar50;
    if (s == "cifar100") return DatasetKind::cifar100;
    if (s == "norb") return DatasetKind::norb;
    throw ConfigError("unknown dataset '" + std::string(s) + "'");
}

/// Standard file names inside a dataset directory.
inline std::vector<std::filesystem::path> source_files(DatasetKind kind, const std::filesystem::path& dir, Split split) {
    const bool train = split == Split::train;
    switch (kind) {
    case DatasetKind::cifar10: {
        if (!train) return {dir / "test_batch.bin"};
        std::vector<std::filesystem::path> out;
        for (int i = 1; i <= 5; ++i) out.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
        return out;
    }
    case DatasetKind::cifar50:
    case DatasetKind::cifar100: return {dir / (train ? "train.bin" : "test.bin")};
    case DatasetKind::norb: {
        const std::string stem = std::string("smallnorb-5x") + (train ? "46789" : "01235") + "x9x18x6x2x96x96-" +
                                 (train ? "training" : "testing");
        return {dir / (stem + "-dat.mat"), dir / (stem + "-cat.mat")};
    }
    }
    return {};
}

/// What `prepare-data` builds.
struct PrepareRequest {
    DatasetKind kind = DatasetKind::cifar10;
    Split split = Split::train;
    bool edges = false;
    std::uint64_t seed = 0;
    std::optional<std::size_t> classes;
    std::optional<std::size_t> per_class;
    CannyParams canny;
};

inline Dataset load_raw(DatasetKind kind, const std::vector<std::filesystem::path>& files, Split split) {
    switch (kind) {
    case DatasetKind::cifar10: return load_cifar10(files, split);
    case DatasetKind::cifar50:
    case DatasetKind::cifar100: return load_cifar100(files, split);
    case DatasetKind::norb:
        if (files.size() != 2) throw ConfigError("norb needs exactly a dat and a cat file");
        return load_norb(files[0], files[1], split);
    }
    throw ConfigError("unknown dataset kind");
}

/// Loads source files and applies the requested transformations in a fixed
/// order: cifar50 selection, subsample, edge stream.
inline Dataset prepare(const PrepareRequest& req, const std::vector<std::filesystem::path>& files) {
    Dataset ds = load_raw(req.kind, files, req.split);
    if (req.kind == DatasetKind::cifar50) ds = make_cifar50(ds, req.seed);
    if (req.classes || req.per_class) {
        if (!req.classes || !req.per_class) throw ConfigError("--classes and --per-class go together");
        ds = subsample(ds, *req.classes, *req.per_class, req.seed);
    }
    if (req.edges) ds = make_second_stream(ds, req.canny);
    return ds;
}

/// Rebuilds a dataset from its provenance record, checking every source
/// digest first.
inline Dataset replay_provenance(const nlohmann::json& prov) {
    std::vector<std::filesystem::path> files;
    for (const auto& src : prov.at("sources")) {
        const std::filesystem::path path = src.at("path").get<std::string>();
        const std::string bytes = detail::read_file(path);
        if (detail::source_record(path, bytes) != src) {
            throw ConsistencyError("source " + path.string() + " no longer matches its recorded digest");
        }
        files.push_back(path);
    }
    const auto loader = prov.at("loader").get<std::string>();
    const Split split = parse_split(prov.at("split").get<std::string>());
    Dataset ds = load_raw(parse_dataset_kind(loader), files, split);
    for (const auto& step : prov.at("steps")) {
        const auto op = step.at("op").get<std::string>();
        if (op == "cifar50") {
            ds = make_cifar50(ds, step.at("seed").get<std::uint64_t>());
        } else if (op == "subsample") {
            ds = subsample(ds, step.at("classes").get<std::size_t>(), step.at("per_class").get<std::size_t>(),
                           step.at("seed").get<std::uint64_t>());
        } else if (op == "edges") {
            ds = make_second_stream(ds, {step.at("low").get<double>(), step.at("high").get<double>(),
                                         step.at("sigma").get<double>()});
        } else {
            throw ConfigError("unknown provenance step '" + op + "'");
        }
    }
    return ds;
}

} // namespace lcnn

#endif // LCNN_PIPELINE_HPP
