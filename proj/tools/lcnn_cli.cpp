// lcnn command-line front end.
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "lcnn/gradsuite.hpp"
#include "lcnn/model.hpp"
#include "lcnn/pipeline.hpp"
#include "lcnn/report.hpp"
#include "lcnn/train.hpp"
#include "lcnn/vision.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kFailure = 1, kUsage = 2, kDiverged = 3 };

int cmd_train(const fs::path& config_path, const fs::path& out_dir) {
    std::ifstream in(config_path);
    if (!in) throw lcnn::IoError("cannot open config " + config_path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw lcnn::ConfigError(config_path.string() + ": " + e.what());
    }
    const auto cfg = lcnn::config_from_json(j);
    if (cfg.dataset.train.empty()) throw lcnn::ConfigError("config has no dataset.train");
    const fs::path base = config_path.parent_path();
    auto resolve = [&](const std::string& p) { return fs::path(p).is_relative() ? base / p : fs::path(p); };

    const auto train = lcnn::load_prepared(resolve(cfg.dataset.train));
    std::optional<lcnn::Dataset> test;
    if (cfg.dataset.test) test = lcnn::load_prepared(resolve(*cfg.dataset.test));

    std::printf("config %s  hash %s\n", config_path.string().c_str(), lcnn::config_hash(cfg).c_str());
    std::printf("train set: %zu samples, %zu classes\n", train.size(), train.num_classes);
    std::fflush(stdout);
    const auto t0 = std::chrono::steady_clock::now();
    try {
        const auto m = lcnn::run_experiment(cfg, train, test ? &*test : nullptr, out_dir, base);
        for (const auto& f : m.folds) {
            std::printf("fold %zu  val %.4f", f.fold, f.validation_accuracy);
            if (f.test_accuracy) std::printf("  test %.4f", *f.test_accuracy);
            if (f.fallback_used) std::printf("  (lr_fallback %g)", f.learning_rate);
            std::printf("\n");
        }
        std::printf("mean val %.4f", m.mean_validation_accuracy());
        if (const auto t = m.mean_test_accuracy()) std::printf("  mean test %.4f", *t);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("\nreport written to %s (%.1f s)\n", out_dir.string().c_str(), secs);
    } catch (const lcnn::DivergenceError& e) {
        std::fprintf(stderr, "lcnn: diverged: %s\npartial report written to %s\n", e.what(), out_dir.string().c_str());
        return kDiverged;
    }
    return kOk;
}

struct PrepareArgs {
    std::string dataset;
    std::string source = ".";
    std::string out;
    std::string split = "train";
    bool edges = false;
    std::uint64_t seed = 0;
    std::optional<std::size_t> classes;
    std::optional<std::size_t> per_class;
    lcnn::CannyParams canny;
    std::string dump_edges;
};

int cmd_prepare(const PrepareArgs& a) {
    lcnn::PrepareRequest req;
    req.kind = lcnn::parse_dataset_kind(a.dataset);
    req.split = lcnn::parse_split(a.split);
    req.edges = a.edges;
    req.seed = a.seed;
    req.classes = a.classes;
    req.per_class = a.per_class;
    req.canny = a.canny;
    const auto files = lcnn::source_files(req.kind, a.source, req.split);
    const auto ds = lcnn::prepare(req, files);
    lcnn::save_prepared(ds, a.out);
    std::printf("%s: %zu samples, %zu classes, split %s%s\n", a.out.c_str(), ds.size(), ds.num_classes,
                std::string(lcnn::to_string(ds.split)).c_str(), a.edges ? ", with edge stream" : "");
    const auto counts = ds.class_counts();
    std::printf("per class:");
    for (std::size_t c = 0; c < counts.size(); ++c) std::printf(" %zu", counts[c]);
    std::printf("\n");
    if (!a.dump_edges.empty()) {
        fs::create_directories(a.dump_edges);
        std::size_t n = 0;
        for (std::size_t i = 0; i < ds.samples.size(); ++i) {
            const auto& s = ds.samples[i];
            if (!s.secondary) continue;
            char name[64];
            std::snprintf(name, sizeof name, "%06zu_label%zu.pgm", i, s.label);
            lcnn::write_pgm(fs::path(a.dump_edges) / name, *s.secondary);
            ++n;
        }
        std::printf("wrote %zu edge maps to %s\n", n, a.dump_edges.c_str());
    }
    return kOk;
}

int cmd_compare(const std::vector<std::string>& reports, bool as_json) {
    std::vector<fs::path> paths(reports.begin(), reports.end());
    const auto cmp = lcnn::compare_runs(paths);
    if (as_json) {
        std::printf("%s\n", lcnn::to_json(cmp).dump(2).c_str());
    } else {
        std::printf("%s", lcnn::format_table(cmp).c_str());
    }
    return kOk;
}

int cmd_param_count(const std::string& model, const std::string& topology, double width_scale, std::size_t classes,
                    const std::string& fusion, bool as_json) {
    auto spec = lcnn::build_backbone(model, classes, width_scale);
    const auto topo = lcnn::parse_topology(topology);
    if (topo != lcnn::Topology::single) {
        spec = lcnn::to_multistream(spec, topo, lcnn::FusionOp(lcnn::parse_fusion_kind(fusion)));
    }
    const auto trace = lcnn::propagate_shapes(spec);
    const std::size_t total = lcnn::count_params(spec);
    const std::size_t trunk = lcnn::count_trunk_params(spec);
    const std::size_t lblocks = lcnn::count_l_blocks(spec);
    if (as_json) {
        json j{{"model", spec.name},
               {"topology", lcnn::to_string(spec.topology)},
               {"width_scale", width_scale},
               {"classes", classes},
               {"total", total},
               {"trunk", trunk},
               {"trunk_per_stream", trace.trunk_params},
               {"head", trace.head_params},
               {"l_blocks", lblocks}};
        std::printf("%s\n", j.dump(2).c_str());
        return kOk;
    }
    std::printf("model      %s\n", spec.name.c_str());
    std::printf("topology   %s\n", std::string(lcnn::to_string(spec.topology)).c_str());
    std::printf("streams    %zu\n", spec.stream_count());
    std::printf("trunk      %zu (%zu per stream)\n", trunk, trace.trunk_params);
    std::printf("head       %zu\n", trace.head_params);
    std::printf("l_blocks   %zu\n", lblocks);
    std::printf("total      %zu\n", total);
    return kOk;
}

int cmd_gradcheck(std::size_t points, std::uint64_t seed) {
    constexpr double kTolerance = 1e-4;
    const auto t0 = std::chrono::steady_clock::now();
    const auto rows = lcnn::run_gradient_suite(points, seed, 1e-5);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    bool ok = true;
    std::printf("%-26s %7s %9s %8s %12s\n", "primitive", "points", "redrawn", "coords", "max rel err");
    for (const auto& r : rows) {
        const bool pass = r.max_relative_error < kTolerance && r.points == points;
        ok = ok && pass;
        std::printf("%-26s %7zu %9zu %8zu %12.3e  %s\n", r.primitive.c_str(), r.points, r.resampled, r.coordinates,
                    r.max_relative_error, pass ? "ok" : "FAIL");
    }
    std::printf("%s: %zu primitives, tolerance %.0e, %.1f s\n", ok ? "PASS" : "FAIL", rows.size(), kTolerance, secs);
    return ok ? kOk : kFailure;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"lcnn: multistream CNNs with lattice cross-fusion"};
    app.require_subcommand(1);

    std::string config_path, out_dir;
    auto* train = app.add_subcommand("train", "Run a k-fold training experiment");
    train->add_option("--config", config_path, "JSON training config")->required()->check(CLI::ExistingFile);
    train->add_option("--out", out_dir, "Report directory")->required();

    PrepareArgs prep;
    std::size_t classes_opt = 0, per_class_opt = 0;
    auto* prepare = app.add_subcommand("prepare-data", "Parse, subsample and augment a dataset into a prepared file");
    prepare->add_option("--dataset", prep.dataset, "Source dataset")
        ->required()
        ->check(CLI::IsMember({"cifar10", "cifar50", "cifar100", "norb"}));
    prepare->add_option("--source", prep.source, "Directory holding the original binary files")->capture_default_str();
    prepare->add_option("--out", prep.out, "Output file")->required();
    prepare->add_option("--split", prep.split, "train or test")->check(CLI::IsMember({"train", "test"}))->capture_default_str();
    prepare->add_flag("--edges", prep.edges, "Attach a Canny edge map as the second stream");
    prepare->add_option("--seed", prep.seed, "Seed for CIFAR-50 selection and subsampling")->capture_default_str();
    auto* classes_flag = prepare->add_option("--classes", classes_opt, "Keep this many classes")->check(CLI::PositiveNumber);
    auto* per_class_flag = prepare->add_option("--per-class", per_class_opt, "Samples kept per class")->check(CLI::PositiveNumber);
    classes_flag->needs(per_class_flag);
    per_class_flag->needs(classes_flag);
    prepare->add_option("--canny-low", prep.canny.low, "Hysteresis low threshold")->capture_default_str();
    prepare->add_option("--canny-high", prep.canny.high, "Hysteresis high threshold")->capture_default_str();
    prepare->add_option("--canny-sigma", prep.canny.sigma, "Gaussian sigma")->capture_default_str();
    prepare->add_option("--dump-edges", prep.dump_edges, "Write every edge map as PGM into this directory");

    std::vector<std::string> reports;
    bool compare_json = false;
    auto* compare = app.add_subcommand("compare", "Compare mean accuracies of finished runs");
    compare->add_option("reports", reports, "Report directories or summary.json files")->required()->expected(2, -1);
    compare->add_flag("--json", compare_json, "Emit JSON instead of a table");

    std::string model, topology, fusion = "average";
    double width_scale = 0.25;
    std::size_t num_classes = 10;
    bool count_json = false;
    auto* pcount = app.add_subcommand("param-count", "Count trainable parameters of a built-in model");
    pcount->add_option("--model", model, "alexnet, vgg16, vgg19, resnet18 or resnet34")->required();
    pcount->add_option("--topology", topology, "single, multistream_late or multistream_lattice")->required();
    pcount->add_option("--width-scale", width_scale, "Channel width multiplier")->capture_default_str();
    pcount->add_option("--classes", num_classes, "Output classes")->check(CLI::PositiveNumber)->capture_default_str();
    pcount->add_option("--fusion", fusion, "Fusion operator (lattice only)")->capture_default_str();
    pcount->add_flag("--json", count_json, "Emit JSON");

    std::size_t points = 100;
    std::uint64_t grad_seed = 1;
    auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable primitive");
    grad->add_option("--points", points, "Random points per primitive")->check(CLI::PositiveNumber)->capture_default_str();
    grad->add_option("--seed", grad_seed, "Seed")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }

    try {
        if (*train) return cmd_train(config_path, out_dir);
        if (*prepare) {
            if (*classes_flag) prep.classes = classes_opt;
            if (*per_class_flag) prep.per_class = per_class_opt;
            return cmd_prepare(prep);
        }
        if (*compare) return cmd_compare(reports, compare_json);
        if (*pcount) return cmd_param_count(model, topology, width_scale, num_classes, fusion, count_json);
        if (*grad) return cmd_gradcheck(points, grad_seed);
    } catch (const lcnn::ConfigError& e) {
        std::fprintf(stderr, "lcnn: config error: %s\n", e.what());
        return kUsage;
    } catch (const lcnn::UsageError& e) {
        std::fprintf(stderr, "lcnn: usage error: %s\n", e.what());
        return kUsage;
    } catch (const lcnn::DivergenceError& e) {
        std::fprintf(stderr, "lcnn: diverged: %s\n", e.what());
        return kDiverged;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "lcnn: error: %s\n", e.what());
        return kFailure;
    }
    return kUsage;
}
