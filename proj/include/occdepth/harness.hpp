#pragma once

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "occdepth/config.hpp"
#include "occdepth/dataset_io.hpp"
#include "occdepth/eval.hpp"
#include "occdepth/nn.hpp"
#include "occdepth/pipeline.hpp"

// Run directory layout:
//
//   config.json          resolved training config
//   run.json             dataset path, training sample ids, creation time
//   loss_log.jsonl       one LossReport record per step
//   checkpoint.odck      final parameters
//   checkpoints/         periodic checkpoints (step_XXXXXX.odck) when enabled
//   metrics_<split>.json written by evaluation

namespace occdepth {

inline constexpr const char* kRunFormat = "occdepth-run";

inline nlohmann::json to_json(const LossReport& r) {
    return {{"l_occ", r.l_occ},           {"l_sem", r.l_sem},           {"l_depth", r.l_depth},
            {"l_scal_sem", r.l_scal_sem}, {"l_scal_geo", r.l_scal_geo}, {"gamma", r.gamma},
            {"l_total", r.l_total}};
}

struct StepRecord {
    long long step = 0;
    std::string sample_id;
    double lr = 0.0;
    LossReport loss;
};

inline nlohmann::json to_json(const StepRecord& s) {
    nlohmann::json j{{"step", s.step}, {"sample_id", s.sample_id}, {"lr", s.lr}};
    j.update(to_json(s.loss));
    return j;
}

inline StepRecord step_record_from_json(const nlohmann::json& j) {
    StepRecord s;
    s.step = j.at("step");
    s.sample_id = j.at("sample_id");
    s.lr = j.at("lr");
    s.loss = {j.at("l_occ"), j.at("l_sem"), j.at("l_depth"), j.at("l_scal_sem"),
              j.at("l_scal_geo"), j.at("gamma"), j.at("l_total")};
    return s;
}

/// Learning rate at `step`: base rate, scaled once by lr_drop_factor after
/// lr_drop_at * steps.
inline double learning_rate(const TrainConfig& c, long long step) {
    const auto drop = static_cast<long long>(std::llround(c.lr_drop_at * static_cast<double>(c.steps)));
    return step >= drop ? c.lr * c.lr_drop_factor : c.lr;
}

template <typename T>
struct TrainOutcome {
    Pipeline<T> pipeline;
    std::vector<StepRecord> log;
};

template <typename T>
struct TrainHooks {
    std::function<void(const StepRecord&)> on_step;
    /// Called after the optimizer update of every `checkpoint_every`-th step
    /// with the number of completed steps.
    std::function<void(long long, const Model<T>&)> on_checkpoint;
    /// Directory for the diagnostic dump when a step goes non-finite.
    std::filesystem::path failure_dump;
};

namespace detail {

template <typename T>
bool gradients_finite(const nn::ParamStore<T>& params) {
    for (const auto& p : params.all())
        if (!all_finite(p.grad) || !all_finite(p.value)) return false;
    return true;
}

template <typename T>
void dump_failure(const std::filesystem::path& dir, const Pipeline<T>& pipeline, const SceneSample& sample,
                  const TrainConfig& config, long long step, const std::string& what) {
    if (dir.empty()) return;
    std::filesystem::create_directories(dir);
    write_sample(dir / "sample", sample);
    save_checkpoint(dir / "parameters.odck", pipeline.model());
    const nlohmann::json info{{"step", step}, {"sample_id", sample.sample_id}, {"error", what},
                              {"config", to_json(config)}};
    io::write_file_atomic(dir / "failure.json", info.dump(2) + "\n");
}

}  // namespace detail

template <typename T>
Pipeline<T> make_pipeline(const TrainConfig& config, int n_classes) {
    config.validate();
    return Pipeline<T>(Model<T>(config.model_config(n_classes)), PipelineOptions::from_config(config));
}

/// Runs `config.steps` optimizer steps over `samples` in order (step s uses
/// sample s mod K). Throws NumericError after dumping the offending batch if
/// a loss or gradient becomes non-finite.
template <typename T>
TrainOutcome<T> train_pipeline(const TrainConfig& config, const std::vector<SceneSample>& samples,
                               const TrainHooks<T>& hooks = {}) {
    config.validate();
    if (config.steps > 0 && samples.empty()) throw DataError("train: no training samples");
    const int n_classes = samples.empty() ? 1 : samples.front().labels.n_classes;
    TrainOutcome<T> outcome{make_pipeline<T>(config, n_classes), {}};
    Pipeline<T>& pipe = outcome.pipeline;
    nn::AdamWOptions adam;
    adam.learning_rate = config.lr;
    adam.weight_decay = config.weight_decay;
    nn::AdamW<T> optimizer(pipe.model().params(), adam);
    AugmentParams augment_params;
    augment_params.probability = config.augment_probability;

    for (long long step = 0; step < config.steps; ++step) {
        const SceneSample& base = samples[static_cast<std::size_t>(step) % samples.size()];
        const SceneSample sample = config.augment ? augment(base, derive_seed(config.seed, "augment", step), augment_params)
                                                  : base;
        const std::array<Tensor<float>, 2> teacher{
            teacher_depth(sample.left_depth, config.teacher_noise, derive_seed(config.seed, "teacher", 2 * step)),
            teacher_depth(sample.right_depth, config.teacher_noise, derive_seed(config.seed, "teacher", 2 * step + 1))};
        StepRecord record{step, sample.sample_id, learning_rate(config, step), {}};
        try {
            const auto out = pipe.forward(sample);
            const auto loss = pipe.loss(out, sample, {&teacher[0], &teacher[1]}, step, config.steps);
            record.loss = loss.report;
            if (!std::isfinite(loss.report.l_total)) throw NumericError("non-finite total loss");
            pipe.model().params().zero_grad();
            pipe.backward(out, loss);
            if (!detail::gradients_finite(pipe.model().params())) throw NumericError("non-finite gradient");
        } catch (const NumericError& e) {
            detail::dump_failure(hooks.failure_dump, pipe, sample, config, step, e.what());
            throw NumericError("train: step " + std::to_string(step) + " (" + sample.sample_id + "): " + e.what() +
                               (hooks.failure_dump.empty() ? "" : "; dump in " + hooks.failure_dump.string()));
        }
        optimizer.step(pipe.model().params(), record.lr);
        outcome.log.push_back(record);
        if (hooks.on_step) hooks.on_step(record);
        if (hooks.on_checkpoint && config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0)
            hooks.on_checkpoint(step + 1, pipe.model());
    }
    return outcome;
}

template <typename T>
MetricReport evaluate_sample(Pipeline<T>& pipe, const SceneSample& sample) {
    const auto out = pipe.forward(sample);
    return compute_metrics(predict_labels(out.logits_nclass), sample.labels);
}

template <typename T>
MetricStream evaluate_pipeline(Pipeline<T>& pipe, const std::vector<SceneSample>& samples, const std::string& split,
                               std::uint64_t seed) {
    MetricStream stream{split, seed, {}, {}};
    std::vector<MetricReport> reports;
    for (const auto& s : samples) {
        reports.push_back(evaluate_sample(pipe, s));
        stream.samples.emplace_back(s.sample_id, reports.back());
    }
    stream.aggregate = aggregate_metrics(reports);
    return stream;
}

inline std::vector<SceneSample> load_training_samples(const Dataset& data, const TrainConfig& config) {
    std::vector<std::string> ids = data.split("train");
    if (config.train_scenes > 0) {
        if (static_cast<std::size_t>(config.train_scenes) > ids.size())
            throw DataError("train: config asks for " + std::to_string(config.train_scenes) + " training scenes, dataset has " +
                            std::to_string(ids.size()));
        ids.resize(static_cast<std::size_t>(config.train_scenes));
    }
    std::vector<SceneSample> samples;
    for (const auto& id : ids) samples.push_back(data.load(id));
    return samples;
}

inline std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

struct RunOptions {
    bool overwrite = false;
    std::function<void(const StepRecord&)> on_step;
};

struct RunSummary {
    std::filesystem::path run_dir;
    std::vector<StepRecord> log;
};

namespace detail {

template <typename T>
RunSummary train_run_impl(const TrainConfig& config, const std::filesystem::path& data_dir,
                          const std::filesystem::path& run_dir, const RunOptions& options) {
    const Dataset data(data_dir);
    const std::vector<SceneSample> samples = load_training_samples(data, config);
    if (std::filesystem::exists(run_dir) && !options.overwrite)
        throw DataError("run directory already exists: " + run_dir.string());
    std::filesystem::path tmp = run_dir;
    tmp += ".partial";
    std::filesystem::remove_all(tmp);
    std::filesystem::create_directories(tmp);

    std::string log_text;
    TrainHooks<T> hooks;
    hooks.on_step = [&](const StepRecord& r) {
        log_text += to_json(r).dump() + "\n";
        if (options.on_step) options.on_step(r);
    };
    hooks.failure_dump = tmp / "failure";
    const nlohmann::json ck_meta{{"config", to_json(config)}};
    hooks.on_checkpoint = [&](long long step, const Model<T>& model) {
        char name[48];
        std::snprintf(name, sizeof name, "step_%06lld.odck", step);
        std::filesystem::create_directories(tmp / "checkpoints");
        nlohmann::json meta = ck_meta;
        meta["step"] = step;
        save_checkpoint(tmp / "checkpoints" / name, model, meta);
    };
    std::optional<TrainOutcome<T>> outcome;
    try {
        outcome.emplace(train_pipeline<T>(config, samples, hooks));
    } catch (const NumericError& e) {
        io::write_file_atomic(tmp / "loss_log.jsonl", log_text);
        std::filesystem::path failed = run_dir;
        failed += ".failed";
        std::filesystem::remove_all(failed);
        std::filesystem::rename(tmp, failed);
        std::string message = e.what();
        if (const auto at = message.find(tmp.string()); at != std::string::npos)
            message.replace(at, tmp.string().size(), failed.string());
        throw NumericError(message);
    }
    nlohmann::json meta = ck_meta;
    meta["step"] = config.steps;
    save_checkpoint(tmp / "checkpoint.odck", outcome->pipeline.model(), meta);
    io::write_file_atomic(tmp / "loss_log.jsonl", log_text);
    io::write_file_atomic(tmp / "config.json", to_json(config).dump(2) + "\n");
    std::vector<std::string> ids;
    for (const auto& s : samples) ids.push_back(s.sample_id);
    const nlohmann::json run{{"format", kRunFormat},
                             {"format_version", 1},
                             {"dataset", std::filesystem::absolute(data_dir).lexically_normal().string()},
                             {"train_samples", ids},
                             {"steps", config.steps},
                             {"created", utc_timestamp()}};
    io::write_file_atomic(tmp / "run.json", run.dump(2) + "\n");
    if (std::filesystem::exists(run_dir)) std::filesystem::remove_all(run_dir);
    std::filesystem::rename(tmp, run_dir);
    return {run_dir, std::move(outcome->log)};
}

}  // namespace detail
/// Trains on the dataset's training split and writes a complete run
/// directory (built beside `run_dir` and renamed into place).
inline RunSummary train_run(const TrainConfig& config, const std::filesystem::path& data_dir,
                            const std::filesystem::path& run_dir, const RunOptions& options = {}) {
    return config.double_precision ? detail::train_run_impl<double>(config, data_dir, run_dir, options)
                                   : detail::train_run_impl<float>(config, data_dir, run_dir, options);
}

inline std::vector<StepRecord> read_loss_log(const std::filesystem::path& path) {
    std::vector<StepRecord> out;
    const std::string text = io::read_file(path);
    std::size_t begin = 0;
    while (begin < text.size()) {
        std::size_t end = text.find('\n', begin);
        if (end == std::string::npos) end = text.size();
        if (end > begin) {
            try {
                out.push_back(step_record_from_json(nlohmann::json::parse(text.substr(begin, end - begin))));
            } catch (const nlohmann::json::exception& e) {
                throw DataError(path.string() + ": " + e.what());
            }
        }
        begin = end + 1;
    }
    return out;
}

/// Training config stored in a checkpoint, checked against the model shapes.
inline TrainConfig checkpoint_config(const CheckpointContents& ck) {
    if (!ck.metadata.contains("config")) throw DataError("checkpoint: no training config in metadata");
    TrainConfig config;
    try {
        config = apply_config(TrainConfig{}, ck.metadata.at("config"));
    } catch (const ContractError& e) {
        throw DataError(std::string("checkpoint: ") + e.what());
    }
    if (config.model_config(ck.config.n_classes) != ck.config)
        throw DataError("checkpoint: stored config does not match the model shapes");
    return config;
}

template <typename T>
Pipeline<T> pipeline_from_checkpoint(const CheckpointContents& ck, const TrainConfig& config) {
    if (config.model_config(ck.config.n_classes) != ck.config)
        throw DataError("checkpoint: model shapes do not match the config (channels, depth bins or widths differ)");
    return Pipeline<T>(model_from_checkpoint<T>(ck), PipelineOptions::from_config(config));
}

struct RunInfo {
    std::filesystem::path run_dir;
    std::filesystem::path dataset;
    TrainConfig config;
    CheckpointContents checkpoint;
};

inline RunInfo load_run(const std::filesystem::path& run_dir) {
    if (!std::filesystem::is_directory(run_dir)) throw DataError("missing run directory: " + run_dir.string());
    RunInfo info;
    info.run_dir = run_dir;
    info.checkpoint = load_checkpoint(run_dir / "checkpoint.odck");
    info.config = checkpoint_config(info.checkpoint);
    try {
        const auto run = nlohmann::json::parse(io::read_file(run_dir / "run.json"));
        info.dataset = run.at("dataset").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(run_dir.string() + "/run.json: " + e.what());
    }
    return info;
}

template <typename T>
MetricStream evaluate_checkpoint(const CheckpointContents& ck, const TrainConfig& config, const Dataset& data,
                                 const std::string& split) {
    Pipeline<T> pipe = pipeline_from_checkpoint<T>(ck, config);
    if (data.manifest().params.n_classes != ck.config.n_classes)
        throw DataError("evaluate: dataset class count differs from the checkpoint");
    return evaluate_pipeline(pipe, data.load_split(split), split, config.seed);
}

/// Evaluates a run's final checkpoint on `split` and writes metrics_<split>.json.
inline MetricStream evaluate_run(const std::filesystem::path& run_dir, const std::string& split,
                                 const std::filesystem::path& data_override = {}) {
    const RunInfo info = load_run(run_dir);
    const Dataset data(data_override.empty() ? info.dataset : data_override);
    MetricStream stream = info.config.double_precision
                              ? evaluate_checkpoint<double>(info.checkpoint, info.config, data, split)
                              : evaluate_checkpoint<float>(info.checkpoint, info.config, data, split);
    io::write_file_atomic(run_dir / ("metrics_" + split + ".json"), to_json(stream).dump(2) + "\n");
    return stream;
}

// ---------------------------------------------------------------------------
// Ablations

/// Training toggles that can be switched off one at a time.
inline const std::vector<std::string>& ablation_toggles() {
    static const std::vector<std::string> names{"stereo_sfa", "oad", "distill"};
    return names;
}

inline TrainConfig with_toggle_off(TrainConfig c, const std::string& toggle) {
    if (toggle == "stereo_sfa") c.stereo_sfa = false;
    else if (toggle == "oad") c.oad = false;
    else if (toggle == "distill") c.distill = false;
    else throw ContractError("unknown ablation toggle '" + toggle + "' (expected stereo_sfa, oad or distill)");
    return c;
}

struct VariantResult {
    std::string name;
    TrainConfig config;
    std::vector<MetricStream> streams;  ///< one per seed

    [[nodiscard]] double mean(const std::string& metric) const {
        double sum = 0.0;
        for (const auto& s : streams) sum += metric == "sc_iou" ? s.aggregate.sc_iou : s.aggregate.ssc_miou;
        return streams.empty() ? 0.0 : sum / static_cast<double>(streams.size());
    }
};

struct AblationResult {
    std::vector<VariantResult> variants;         ///< variants[0] is the reference
    std::vector<AblationComparison> comparisons;  ///< reference vs each other variant
};

struct AblationProgress {
    std::function<void(const std::string& variant, std::uint64_t seed)> on_variant;
};

/// Trains and evaluates every variant with seeds base, base + 1, ... and
/// compares each against the first.
inline AblationResult run_variants(const std::vector<std::pair<std::string, TrainConfig>>& variants,
                                   const Dataset& data, int seeds, const AblationProgress& progress = {}) {
    require(seeds >= 1, "ablate: need at least one seed");
    require(!variants.empty(), "ablate: no variants");
    const TrainConfig& first = variants.front().second;
    const std::vector<SceneSample> train = load_training_samples(data, first);
    const std::vector<SceneSample> eval = data.load_split(first.eval_split);
    if (eval.empty()) throw DataError("ablate: evaluation split '" + first.eval_split + "' is empty");
    AblationResult result;
    for (const auto& [name, base] : variants) {
        VariantResult v{name, base, {}};
        for (int s = 0; s < seeds; ++s) {
            TrainConfig c = base;
            c.seed = base.seed + static_cast<std::uint64_t>(s);
            if (progress.on_variant) progress.on_variant(name, c.seed);
            if (c.double_precision) {
                auto outcome = train_pipeline<double>(c, train);
                v.streams.push_back(evaluate_pipeline(outcome.pipeline, eval, c.eval_split, c.seed));
            } else {
                auto outcome = train_pipeline<float>(c, train);
                v.streams.push_back(evaluate_pipeline(outcome.pipeline, eval, c.eval_split, c.seed));
            }
        }
        result.variants.push_back(std::move(v));
    }
    for (std::size_t i = 1; i < result.variants.size(); ++i)
        result.comparisons.push_back(ablation_compare(result.variants[0].streams, result.variants[i].streams,
                                                      result.variants[0].name, result.variants[i].name));
    return result;
}

/// Full model against one variant per disabled toggle.
inline AblationResult ablate(const TrainConfig& config, const Dataset& data, const std::vector<std::string>& toggles,
                             int seeds, const AblationProgress& progress = {}) {
    std::vector<std::pair<std::string, TrainConfig>> variants{{"full", config}};
    for (const auto& t : toggles) variants.emplace_back("no_" + t, with_toggle_off(config, t));
    return run_variants(variants, data, seeds, progress);
}

/// One variant per depth discretization mode; the first mode is the reference.
inline AblationResult discretization_sweep(const TrainConfig& config, const Dataset& data,
                                           const std::vector<std::string>& modes, int seeds,
                                           const AblationProgress& progress = {}) {
    std::vector<std::pair<std::string, TrainConfig>> variants;
    for (const auto& m : modes) {
        TrainConfig c = config;
        c.depth_mode = to_string(parse_depth_binning(m));
        variants.emplace_back(c.depth_mode, c);
    }
    return run_variants(variants, data, seeds, progress);
}

inline nlohmann::json to_json(const AblationResult& r) {
    nlohmann::json variants = nlohmann::json::array();
    for (const auto& v : r.variants) {
        nlohmann::json streams = nlohmann::json::array();
        for (const auto& s : v.streams) streams.push_back(to_json(s));
        variants.push_back({{"name", v.name},
                            {"config", to_json(v.config)},
                            {"mean_sc_iou", v.mean("sc_iou")},
                            {"mean_ssc_miou", v.mean("ssc_miou")},
                            {"streams", streams}});
    }
    nlohmann::json comparisons = nlohmann::json::array();
    for (const auto& c : r.comparisons) comparisons.push_back(to_json(c));
    return {{"variants", variants}, {"comparisons", comparisons}};
}

/// Tab-separated summary: one row per variant with mean and per-seed metrics.
inline std::string variant_table(const AblationResult& r) {
    std::string out = "variant\tmean_sc_iou\tmean_ssc_miou";
    if (!r.variants.empty())
        for (const auto& s : r.variants.front().streams) out += "\tssc_miou_seed_" + std::to_string(s.seed);
    out += '\n';
    char buf[64];
    for (const auto& v : r.variants) {
        out += v.name;
        std::snprintf(buf, sizeof buf, "\t%.6f\t%.6f", v.mean("sc_iou"), v.mean("ssc_miou"));
        out += buf;
        for (const auto& s : v.streams) {
            std::snprintf(buf, sizeof buf, "\t%.6f", s.aggregate.ssc_miou);
            out += buf;
        }
        out += '\n';
    }
    return out;
}

}  // namespace occdepth
