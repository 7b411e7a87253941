#ifndef LCNN_TRAIN_HPP
#define LCNN_TRAIN_HPP

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lcnn/dataset.hpp"
#include "lcnn/errors.hpp"
#include "lcnn/model.hpp"
#include "lcnn/network.hpp"
#include "lcnn/rng.hpp"
#include "lcnn/vision.hpp"

namespace lcnn {

// ---------------------------------------------------------------------------
// Configuration

struct ModelRef {
    std::string builtin = "alexnet";
    double width_scale = 0.25;
    Topology topology = Topology::single;
    std::optional<std::string> spec_file; // JSON ModelSpec; overrides builtin
};

struct DatasetRef {
    std::string train;               // prepared dataset file
    std::optional<std::string> test; // optional held-out split
};

struct TrainConfig {
    std::string name; // report label; defaults to the model name
    ModelRef model;
    DatasetRef dataset;
    double learning_rate = 0.01;
    std::size_t epochs = 30;
    std::size_t batch_size = 64;
    std::size_t folds = 5;
    std::uint64_t seed = 1;
    FusionOp fusion_op;
    std::optional<double> lr_fallback;
    InitScheme init = InitScheme::he_uniform;
    double init_gain = 1.0;      // multiplies every initial parameter
    bool mirror_streams = false; // stream b starts as a copy of stream a
    std::size_t eval_batch_size = 250;

    void validate() const {
        if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be > 0");
        if (lr_fallback && (!(*lr_fallback > 0.0) || !std::isfinite(*lr_fallback))) {
            throw ConfigError("lr_fallback must be > 0");
        }
        if (epochs == 0) throw ConfigError("epochs must be >= 1");
        if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
        if (eval_batch_size == 0) throw ConfigError("eval_batch_size must be >= 1");
        if (folds < 2) throw ConfigError("folds must be >= 2");
        if (!(init_gain > 0.0) || !std::isfinite(init_gain)) throw ConfigError("init_gain must be > 0");
        if (!(model.width_scale > 0.0)) throw ConfigError("model.width_scale must be > 0");
    }
};

inline nlohmann::json to_json(const TrainConfig& c) {
    nlohmann::json model{{"builtin", c.model.builtin},
                         {"width_scale", c.model.width_scale},
                         {"topology", to_string(c.model.topology)}};
    if (c.model.spec_file) model["spec_file"] = *c.model.spec_file;
    nlohmann::json dataset{{"train", c.dataset.train}};
    dataset["test"] = c.dataset.test ? nlohmann::json(*c.dataset.test) : nlohmann::json(nullptr);
    return {{"name", c.name},
            {"model", model},
            {"dataset", dataset},
            {"learning_rate", c.learning_rate},
            {"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"folds", c.folds},
            {"seed", c.seed},
            {"fusion_op", to_json(c.fusion_op)},
            {"lr_fallback", c.lr_fallback ? nlohmann::json(*c.lr_fallback) : nlohmann::json(nullptr)},
            {"init", to_string(c.init)},
            {"init_gain", c.init_gain},
            {"mirror_streams", c.mirror_streams},
            {"eval_batch_size", c.eval_batch_size}};
}

namespace detail {

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<std::string_view> known, const std::string& where) {
    for (const auto& [key, _] : j.items()) {
        if (std::find(known.begin(), known.end(), key) == known.end()) {
            throw ConfigError("unknown key '" + key + "' in " + where);
        }
    }
}

} // namespace detail

/// Missing keys take their defaults; unknown keys are rejected.
inline TrainConfig config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config must be an object");
    detail::reject_unknown(j,
                           {"name", "model", "dataset", "learning_rate", "epochs", "batch_size", "folds", "seed",
                            "fusion_op", "lr_fallback", "init", "init_gain", "mirror_streams", "eval_batch_size"},
                           "config");
    TrainConfig c;
    try {
        c.name = j.value("name", "");
        if (j.contains("model")) {
            const auto& m = j.at("model");
            detail::reject_unknown(m, {"builtin", "width_scale", "topology", "spec_file"}, "model");
            c.model.builtin = m.value("builtin", c.model.builtin);
            c.model.width_scale = m.value("width_scale", c.model.width_scale);
            c.model.topology = parse_topology(m.value("topology", std::string("single")));
            if (m.contains("spec_file") && !m.at("spec_file").is_null()) c.model.spec_file = m.at("spec_file").get<std::string>();
        }
        if (j.contains("dataset")) {
            const auto& d = j.at("dataset");
            detail::reject_unknown(d, {"train", "test"}, "dataset");
            c.dataset.train = d.value("train", "");
            if (d.contains("test") && !d.at("test").is_null()) c.dataset.test = d.at("test").get<std::string>();
        }
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.epochs = j.value("epochs", c.epochs);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.folds = j.value("folds", c.folds);
        c.seed = j.value("seed", c.seed);
        if (j.contains("fusion_op")) c.fusion_op = fusion_from_json(j.at("fusion_op"));
        if (j.contains("lr_fallback") && !j.at("lr_fallback").is_null()) c.lr_fallback = j.at("lr_fallback").get<double>();
        if (j.contains("init")) c.init = parse_init_scheme(j.at("init").get<std::string>());
        c.init_gain = j.value("init_gain", c.init_gain);
        c.mirror_streams = j.value("mirror_streams", c.mirror_streams);
        c.eval_batch_size = j.value("eval_batch_size", c.eval_batch_size);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }
    c.validate();
    return c;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

/// Digest of the canonical (sorted-key) serialization.
inline std::string config_hash(const TrainConfig& c) { return hex64(fnv1a64(to_json(c).dump())); }

/// Model for a dataset whose images are [C, H, W] with `num_classes` labels.
inline ModelSpec resolve_model(const TrainConfig& c, const Shape& input, std::size_t num_classes,
                               const std::filesystem::path& base_dir = {}) {
    if (c.model.spec_file) {
        std::filesystem::path p = *c.model.spec_file;
        if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
        std::ifstream in(p);
        if (!in) throw IoError("cannot open model spec " + p.string());
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("model spec " + p.string() + ": " + e.what());
        }
        auto spec = model_from_json(j);
        if (spec.input_shape != input || spec.num_classes != num_classes) {
            throw ConfigError("model spec " + spec.name + " expects " + to_string(spec.input_shape) + " / " +
                              std::to_string(spec.num_classes) + " classes, dataset has " + to_string(input) + " / " +
                              std::to_string(num_classes));
        }
        return spec;
    }
    auto base = build_backbone(c.model.builtin, num_classes, c.model.width_scale, input);
    if (c.model.topology == Topology::single) return base;
    return to_multistream(base, c.model.topology, c.fusion_op);
}

// ---------------------------------------------------------------------------
// Tensors for training

/// Dataset converted once to normalized channel-first doubles, one buffer per stream.
struct TrainingData {
    Shape sample_shape; // [C, H, W]
    std::size_t num_classes = 0;
    std::vector<std::vector<double>> streams;
    std::vector<std::size_t> labels;

    std::size_t size() const { return labels.size(); }
    std::size_t stream_count() const { return streams.size(); }
};

inline TrainingData to_training_data(const Dataset& ds, std::size_t streams) {
    if (streams != 1 && streams != 2) throw UsageError("stream count must be 1 or 2");
    TrainingData td;
    td.num_classes = ds.num_classes;
    td.streams.resize(streams);
    if (ds.empty()) return td;
    const Image& first = ds.samples.front().primary;
    td.sample_shape = {first.channels, first.height, first.width};
    const std::size_t numel = shape_numel(td.sample_shape);
    for (auto& s : td.streams) s.reserve(ds.size() * numel);
    for (const auto& s : ds.samples) {
        for (std::size_t k = 0; k < streams; ++k) {
            if (k == 1 && !s.secondary) throw InputError("sample " + s.source_id + " has no secondary stream");
            const Image& img = k == 0 ? s.primary : *s.secondary;
            if (Shape{img.channels, img.height, img.width} != td.sample_shape) {
                throw InputError("sample " + s.source_id + " has extents differing from the first sample");
            }
            const auto t = normalize(img);
            td.streams[k].insert(td.streams[k].end(), t.values().begin(), t.values().end());
        }
        td.labels.push_back(s.label);
    }
    return td;
}

/// One [N, C, H, W] tensor per stream for the given sample indices.
inline std::vector<Tensor> make_batch(const TrainingData& td, std::span<const std::size_t> idx) {
    const std::size_t numel = shape_numel(td.sample_shape);
    Shape shape{idx.size()};
    shape.insert(shape.end(), td.sample_shape.begin(), td.sample_shape.end());
    std::vector<Tensor> out;
    for (const auto& buf : td.streams) {
        std::vector<double> v(idx.size() * numel);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            std::copy_n(buf.begin() + static_cast<std::ptrdiff_t>(idx[i] * numel), numel,
                        v.begin() + static_cast<std::ptrdiff_t>(i * numel));
        }
        out.emplace_back(shape, std::move(v));
    }
    return out;
}

/// Index of the largest logit per row; ties go to the lowest index.
inline std::vector<std::size_t> argmax_rows(const Tensor& logits) {
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    std::vector<std::size_t> out(n, 0);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 1; j < k; ++j)
            if (logits[r * k + j] > logits[r * k + out[r]]) out[r] = j;
    return out;
}

/// Eval-mode accuracy over the selected samples.
inline double evaluate(ModelInstance& model, const TrainingData& td, std::span<const std::size_t> idx,
                       std::size_t batch = 250) {
    if (idx.empty()) throw UsageError("evaluate on an empty dataset");
    std::size_t correct = 0;
    for (std::size_t start = 0; start < idx.size(); start += batch) {
        auto part = idx.subspan(start, std::min(batch, idx.size() - start));
        const auto inputs = make_batch(td, part);
        const auto pred = argmax_rows(forward(model, inputs, Mode::eval));
        for (std::size_t i = 0; i < part.size(); ++i) correct += pred[i] == td.labels[part[i]];
    }
    return static_cast<double>(correct) / static_cast<double>(idx.size());
}

inline double evaluate(ModelInstance& model, const TrainingData& td, std::size_t batch = 250) {
    std::vector<std::size_t> all(td.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return evaluate(model, td, all, batch);
}

/// Plain SGD: w -= lr * grad, then grads are zeroed.
inline void sgd_step(std::span<Tensor> params, double lr) {
    for (auto& p : params) {
        if (!p.has_grad()) throw UsageError("sgd_step: parameter has no gradient");
    }
    for (auto& p : params) {
        auto w = p.mutable_values();
        auto g = p.grad();
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * g[i];
        p.zero_grad();
    }
}

inline void sgd_step(ModelInstance& model, double lr) {
    std::vector<Tensor> params;
    for (const auto& p : model.parameters()) params.push_back(p.tensor);
    sgd_step(params, lr);
}

// ---------------------------------------------------------------------------
// Metrics

struct EpochMetrics {
    std::size_t epoch = 0; // 1-based
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double validation_accuracy = 0.0;
};

enum class FoldStatus { complete, diverged };

struct FoldMetrics {
    std::size_t fold = 0;
    FoldStatus status = FoldStatus::complete;
    double learning_rate = 0.0;
    bool fallback_used = false;
    std::vector<EpochMetrics> epochs;
    double validation_accuracy = 0.0;
    std::optional<double> test_accuracy;
    std::uint64_t saturation_count = 0;
    double wall_seconds = 0.0;
    std::string diagnosis; // divergence message, if any
};

struct RunMetrics {
    std::vector<FoldMetrics> folds;
    bool partial = false;

    double mean_validation_accuracy() const {
        double s = 0.0;
        for (const auto& f : folds) s += f.validation_accuracy;
        return folds.empty() ? 0.0 : s / static_cast<double>(folds.size());
    }

    std::optional<double> mean_test_accuracy() const {
        double s = 0.0;
        for (const auto& f : folds) {
            if (!f.test_accuracy) return std::nullopt;
            s += *f.test_accuracy;
        }
        if (folds.empty()) return std::nullopt;
        return s / static_cast<double>(folds.size());
    }
};

// ---------------------------------------------------------------------------
// Training

inline ModelInstance make_model(const TrainConfig& c, const ModelSpec& spec, std::size_t fold) {
    ModelInstance model(spec, derive_seed(c.seed, 0x0DE1, fold), c.init);
    scale_parameters(model, c.init_gain);
    if (c.mirror_streams) mirror_streams(model);
    return model;
}

/// Trains a fresh model (seeded by `fold`) on `train_idx`, recording per-epoch
/// metrics into `out` in place so partial epochs survive a divergence. With an
/// empty `val_idx` the validation accuracies are NaN.
inline ModelInstance fit(const TrainConfig& c, const ModelSpec& spec, const TrainingData& data,
                         const std::vector<std::size_t>& train_idx, const std::vector<std::size_t>& val_idx,
                         std::size_t fold, double lr, FoldMetrics& out, const TrainingData* test = nullptr) {
    if (train_idx.empty()) throw ConfigError("fold " + std::to_string(fold) + " has no training samples");
    const auto start = std::chrono::steady_clock::now();
    out = FoldMetrics{};
    out.fold = fold;
    out.learning_rate = lr;
    ModelInstance model = make_model(c, spec, fold);

    auto finish = [&] {
        out.saturation_count = model.saturation().clamped;
        out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    };
    const double nan = std::numeric_limits<double>::quiet_NaN();

    for (std::size_t epoch = 1; epoch <= c.epochs; ++epoch) {
        std::vector<std::size_t> order = train_idx;
        Rng shuffle(derive_seed(c.seed, fold, epoch));
        shuffle.shuffle(std::span<std::size_t>(order));
        double loss_sum = 0.0;
        std::size_t batch_no = 0;
        for (std::size_t b = 0; b < order.size(); b += c.batch_size, ++batch_no) {
            std::span<const std::size_t> part(order.data() + b, std::min(c.batch_size, order.size() - b));
            const auto inputs = make_batch(data, part);
            std::vector<std::size_t> labels;
            for (auto i : part) labels.push_back(data.labels[i]);
            const Tensor loss = softmax_cross_entropy(forward(model, inputs, Mode::train), labels);
            if (!std::isfinite(loss.item())) {
                out.status = FoldStatus::diverged;
                out.diagnosis = "non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_no);
                finish();
                throw DivergenceError(out.diagnosis, static_cast<int>(epoch), static_cast<int>(batch_no));
            }
            loss_sum += loss.item() * static_cast<double>(part.size());
            backward(loss);
            sgd_step(model, lr);
        }
        EpochMetrics m;
        m.epoch = epoch;
        m.train_loss = loss_sum / static_cast<double>(order.size());
        m.train_accuracy = evaluate(model, data, train_idx, c.eval_batch_size);
        m.validation_accuracy = val_idx.empty() ? nan : evaluate(model, data, val_idx, c.eval_batch_size);
        out.epochs.push_back(m);
    }
    out.validation_accuracy = out.epochs.back().validation_accuracy;
    if (test && test->size()) out.test_accuracy = evaluate(model, *test, c.eval_batch_size);
    finish();
    return model;
}

/// One cross-validation fold: train on every other fold, validate on this one.
inline ModelInstance train_fold(const TrainConfig& c, const ModelSpec& spec, const TrainingData& data,
                                const FoldSplit& split, std::size_t fold, double lr, FoldMetrics& out,
                                const TrainingData* test = nullptr) {
    if (fold >= split.fold_count) throw UsageError("fold index out of range");
    const auto val_idx = split.validation_indices(fold);
    if (val_idx.empty()) throw ConfigError("fold " + std::to_string(fold) + " is empty");
    return fit(c, spec, data, split.training_indices(fold), val_idx, fold, lr, out, test);
}

// ---------------------------------------------------------------------------
// Reports

inline std::string to_string(FoldStatus s) { return s == FoldStatus::complete ? "complete" : "diverged"; }

namespace detail {

inline std::string fmt_real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// Write to a sibling temp file, then rename over the target.
inline void write_atomic(const std::filesystem::path& path, const std::string& text) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out << text;
        out.flush();
        if (!out) throw IoError("write failed for " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename " + tmp.string() + ": " + ec.message());
}

} // namespace detail

struct ReportContext {
    TrainConfig config;
    std::string model_name;
    std::size_t num_classes = 0;
    std::size_t parameter_count = 0;
    nlohmann::json provenance;                   // training dataset
    nlohmann::json test_provenance;              // null when no test split
    bool identical_streams = false;              // both streams carry the same images
    CannyParams canny;                           // recorded for reproducibility
};

inline std::string run_label(const ReportContext& ctx) {
    return ctx.config.name.empty() ? ctx.model_name : ctx.config.name;
}

inline nlohmann::json summary_json(const RunMetrics& m, const ReportContext& ctx) {
    const double chance = ctx.num_classes ? 1.0 / static_cast<double>(ctx.num_classes) : 0.0;
    const double mean = m.mean_validation_accuracy();
    nlohmann::json folds = nlohmann::json::array();
    for (const auto& f : m.folds) {
        folds.push_back({{"fold", f.fold},
                         {"status", to_string(f.status)},
                         {"epochs_completed", f.epochs.size()},
                         {"learning_rate", f.learning_rate},
                         {"fallback_used", f.fallback_used},
                         {"validation_accuracy", f.validation_accuracy},
                         {"test_accuracy", f.test_accuracy ? nlohmann::json(*f.test_accuracy) : nlohmann::json(nullptr)},
                         {"final_train_loss", f.epochs.empty() ? nlohmann::json(nullptr) : nlohmann::json(f.epochs.back().train_loss)},
                         {"saturation_count", f.saturation_count},
                         {"diagnosis", f.diagnosis}});
    }
    const auto mt = m.mean_test_accuracy();
    nlohmann::json flags = nlohmann::json::array();
    if (!m.folds.empty() && mean < 1.5 * chance) flags.push_back("near_chance");
    const auto& c = ctx.config;
    if (ctx.identical_streams && c.model.topology == Topology::multistream_lattice &&
        c.fusion_op.kind == FusionKind::subtraction) {
        flags.push_back("subtraction_annihilation_risk");
    }
    if (m.partial) flags.push_back("partial");
    return {{"format", "lcnn-report-1"},
            {"label", run_label(ctx)},
            {"model", ctx.model_name},
            {"parameter_count", ctx.parameter_count},
            {"num_classes", ctx.num_classes},
            {"config", to_json(c)},
            {"config_hash", config_hash(c)},
            {"provenance", ctx.provenance},
            {"test_provenance", ctx.test_provenance},
            {"canny", {{"low", ctx.canny.low}, {"high", ctx.canny.high}, {"sigma", ctx.canny.sigma}}},
            {"folds", folds},
            {"mean", {{"validation_accuracy", mean}, {"test_accuracy", mt ? nlohmann::json(*mt) : nlohmann::json(nullptr)}}},
            {"chance", chance},
            {"flags", flags},
            {"partial", m.partial}};
}

inline std::string curves_csv(const RunMetrics& m) {
    std::string out = "fold,epoch,train_loss,train_accuracy,validation_accuracy\n";
    for (const auto& f : m.folds)
        for (const auto& e : f.epochs) {
            out += std::to_string(f.fold) + "," + std::to_string(e.epoch) + "," + detail::fmt_real(e.train_loss) + "," +
                   detail::fmt_real(e.train_accuracy) + "," + detail::fmt_real(e.validation_accuracy) + "\n";
        }
    return out;
}

/// summary.json and curves.csv are pure functions of (metrics, context);
/// wall-clock times go to timing.json so the others stay byte-stable.
inline void emit_report(const RunMetrics& m, const ReportContext& ctx, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
    detail::write_atomic(dir / "summary.json", summary_json(m, ctx).dump(2) + "\n");
    detail::write_atomic(dir / "curves.csv", curves_csv(m));
    nlohmann::json timing = nlohmann::json::array();
    for (const auto& f : m.folds) timing.push_back({{"fold", f.fold}, {"wall_seconds", f.wall_seconds}});
    detail::write_atomic(dir / "timing.json", nlohmann::json{{"folds", timing}}.dump(2) + "\n");
}

inline bool streams_identical(const Dataset& ds) {
    for (const auto& s : ds.samples)
        if (!s.secondary || !(*s.secondary == s.primary)) return false;
    return !ds.empty();
}

inline CannyParams recorded_canny(const Dataset& ds) {
    CannyParams p;
    if (ds.provenance.contains("steps")) {
        for (const auto& st : ds.provenance["steps"]) {
            if (st.value("op", "") == "edges") p = {st.at("low").get<double>(), st.at("high").get<double>(), st.at("sigma").get<double>()};
        }
    }
    return p;
}

/// Trains every fold, evaluates on `test` when given, writes the report to
/// `out_dir` (also after a failure, marked partial) and returns the metrics.
/// A diverging fold is retried once with lr_fallback when configured; if it
/// still diverges the DivergenceError propagates after the partial report is
/// written.
inline RunMetrics run_experiment(const TrainConfig& c, const Dataset& train, const Dataset* test,
                                 const std::filesystem::path& out_dir, const std::filesystem::path& base_dir = {}) {
    c.validate();
    if (train.empty()) throw ConfigError("training dataset is empty");
    const auto& first = train.samples.front().primary;
    const Shape input{first.channels, first.height, first.width};
    const ModelSpec spec = resolve_model(c, input, train.num_classes, base_dir);
    const TrainingData data = to_training_data(train, spec.stream_count());
    std::optional<TrainingData> test_data;
    if (test && !test->empty()) {
        if (test->num_classes != train.num_classes) throw ConsistencyError("train and test class counts differ");
        test_data = to_training_data(*test, spec.stream_count());
        if (test_data->sample_shape != data.sample_shape) throw ConsistencyError("train and test image extents differ");
    }
    const FoldSplit split = kfold_split(train, c.folds, c.seed);

    ReportContext ctx{c, spec.name, train.num_classes, count_params(spec), train.provenance,
                      test ? test->provenance : nlohmann::json(nullptr),
                      spec.stream_count() == 2 && streams_identical(train), recorded_canny(train)};

    RunMetrics metrics;
    for (std::size_t fold = 0; fold < c.folds; ++fold) {
        FoldMetrics fm;
        try {
            try {
                train_fold(c, spec, data, split, fold, c.learning_rate, fm, test_data ? &*test_data : nullptr);
            } catch (const DivergenceError&) {
                if (!c.lr_fallback) throw;
                const std::string first_diag = fm.diagnosis;
                train_fold(c, spec, data, split, fold, *c.lr_fallback, fm, test_data ? &*test_data : nullptr);
                fm.fallback_used = true;
                fm.diagnosis = "retried with lr_fallback after " + first_diag;
            }
        } catch (const DivergenceError&) {
            fm.fallback_used = c.lr_fallback.has_value();
            metrics.folds.push_back(std::move(fm));
            metrics.partial = true;
            emit_report(metrics, ctx, out_dir);
            throw;
        }
        metrics.folds.push_back(std::move(fm));
        // persist progress so an interrupted run still leaves complete files
        if (fold + 1 < c.folds) {
            metrics.partial = true;
            emit_report(metrics, ctx, out_dir);
            metrics.partial = false;
        }
    }
    emit_report(metrics, ctx, out_dir);
    return metrics;
}

} // namespace lcnn

#endif // LCNN_TRAIN_HPP
