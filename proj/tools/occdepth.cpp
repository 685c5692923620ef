#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "occdepth/occdepth.hpp"

namespace fs = std::filesystem;
using namespace occdepth;

namespace {

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

std::array<int, 3> parse_triple(const std::string& text, const char* what) {
    const auto parts = split_list(text);
    if (parts.size() != 3) throw ContractError(std::string(what) + " must look like X,Y,Z");
    std::array<int, 3> out{};
    for (int i = 0; i < 3; ++i) {
        try {
            std::size_t used = 0;
            out[i] = std::stoi(parts[i], &used);
            if (used != parts[i].size()) throw std::invalid_argument(parts[i]);
        } catch (const std::exception&) {
            throw ContractError(std::string(what) + ": not an integer: " + parts[i]);
        }
    }
    return out;
}

/// Config file, then explicit flags, then --set overrides.
struct ConfigFlags {
    std::string file;
    std::vector<std::string> sets;
    long long steps = -1;
    long long seed = -1;

    void add(CLI::App* app, bool file_required) {
        auto* opt = app->add_option("--config", file, "training config (flat JSON with a version key)");
        if (file_required) opt->required();
        app->add_option("--steps", steps, "override the number of optimizer steps (-1 = keep config)");
        app->add_option("--seed", seed, "override the master seed (-1 = keep config)");
        app->add_option("--set", sets, "override any config key, e.g. --set lr=0.003 (repeatable)");
    }

    [[nodiscard]] TrainConfig resolve() const {
        TrainConfig c = file.empty() ? TrainConfig{} : load_config(file);
        if (steps >= 0) c.steps = steps;
        if (seed >= 0) c.seed = static_cast<std::uint64_t>(seed);
        for (const auto& s : sets) c = apply_config(c, parse_override(s));
        c.validate();
        return c;
    }
};

int cmd_gen(const fs::path& out, std::uint64_t seed, long long scenes, const std::string& grid, int classes,
            int objects_max, double noise, unsigned workers) {
    if (scenes < 0) throw ContractError("--scenes must be nonnegative");
    GenerateOptions options;
    options.master_seed = seed;
    options.scenes = static_cast<std::size_t>(scenes);
    options.params.grid_dims = parse_triple(grid, "--grid");
    options.params.n_classes = classes;
    options.params.max_objects = objects_max;
    options.params.min_objects = std::min(options.params.min_objects, objects_max);
    options.params.color_noise = noise;
    options.workers = workers;
    const auto m = generate_dataset(out, options);
    std::printf("wrote %zu scenes to %s (train %zu, val %zu, test %zu)\n", m.splits.total(), out.string().c_str(),
                m.splits.train.size(), m.splits.val.size(), m.splits.test.size());
    return 0;
}

int cmd_train(const fs::path& data, const ConfigFlags& flags, const fs::path& out, bool force, bool quiet) {
    const TrainConfig config = flags.resolve();
    RunOptions options;
    options.overwrite = force;
    const long long every = std::max(1LL, config.steps / 20);
    options.on_step = [&](const StepRecord& r) {
        if (!quiet && (r.step % every == 0 || r.step + 1 == config.steps))
            std::fprintf(stderr, "step %6lld  l_total %.5f  lr %.2e\n", r.step, r.loss.l_total, r.lr);
    };
    const auto summary = train_run(config, data, out, options);
    std::printf("trained %zu steps; run written to %s\n", summary.log.size(), out.string().c_str());
    return 0;
}

int cmd_eval(const fs::path& run, const std::string& split, const fs::path& data) {
    const MetricStream s = evaluate_run(run, split, data);
    std::printf("split %s, %zu scenes: SC IoU %.4f, SSC mIoU %.4f\n", split.c_str(), s.samples.size(),
                s.aggregate.sc_iou, s.aggregate.ssc_miou);
    for (const auto& [c, iou] : s.aggregate.per_class_iou) std::printf("  class %d IoU %.4f\n", c, iou);
    std::printf("metrics written to %s\n", (run / ("metrics_" + split + ".json")).string().c_str());
    return 0;
}

int cmd_ablate(const fs::path& data_dir, const ConfigFlags& flags, const std::string& toggles, int seeds,
               const std::string& discretization, const fs::path& out) {
    const TrainConfig config = flags.resolve();
    const Dataset data(data_dir);
    AblationProgress progress;
    progress.on_variant = [](const std::string& name, std::uint64_t seed) {
        std::fprintf(stderr, "training %s (seed %llu)\n", name.c_str(), static_cast<unsigned long long>(seed));
    };
    std::vector<std::pair<std::string, AblationResult>> results;
    const auto toggle_list = split_list(toggles);
    for (const auto& t : toggle_list) (void)with_toggle_off(config, t);
    const auto modes = split_list(discretization);
    for (const auto& m : modes) (void)parse_depth_binning(m);
    if (!toggle_list.empty()) results.emplace_back("toggles", ablate(config, data, toggle_list, seeds, progress));
    if (!modes.empty())
        results.emplace_back("discretization", discretization_sweep(config, data, modes, seeds, progress));
    if (results.empty()) throw ContractError("nothing to do: give --toggles and/or --discretization");
    nlohmann::json all = nlohmann::json::object();
    std::string text;
    for (const auto& [kind, r] : results) {
        text += "# " + kind + "\n" + variant_table(r);
        for (const auto& c : r.comparisons) text += "# " + c.label_b + " - " + c.label_a + "\n" + comparison_table(c);
        all[kind] = to_json(r);
    }
    std::fputs(text.c_str(), stdout);
    if (!out.empty()) {
        fs::path tmp = out;
        tmp += ".partial";
        fs::remove_all(tmp);
        fs::create_directories(tmp);
        io::write_file_atomic(tmp / "ablation.json", all.dump(2) + "\n");
        io::write_file_atomic(tmp / "ablation.tsv", text);
        if (fs::exists(out)) fs::remove_all(out);
        fs::rename(tmp, out);
    }
    return 0;
}

int cmd_gradcheck(const std::string& module, std::uint64_t seed) {
    bool ok = true;
    for (const auto& r : run_gradcheck(module, seed)) {
        std::printf("%-4s %-8s %-50s max_rel_err %.3e (%zu entries)\n", r.passed ? "PASS" : "FAIL", r.module.c_str(),
                    r.operation.c_str(), r.max_rel_error, r.entries);
        ok = ok && r.passed;
    }
    if (!ok) throw NumericError("gradient check failed (tolerance " + std::to_string(kGradcheckTolerance) + ")");
    return 0;
}

int cmd_report(const fs::path& run, const fs::path& out) {
    write_report(run, out);
    std::printf("report written to %s\n", out.string().c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Stereo semantic scene completion on synthetic rooms: data generation, training, evaluation, "
                 "ablations, gradient checks and reports.",
                 "occdepth"};
    app.option_defaults()->always_capture_default();
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "help for every subcommand");

    auto* gen = app.add_subcommand("gen", "generate a synthetic dataset directory");
    std::string gen_out, gen_grid = "32,16,32";
    std::uint64_t gen_seed = 0;
    long long gen_scenes = 96;
    int gen_classes = 8, gen_objects = 5;
    double gen_noise = 0.0;
    unsigned gen_workers = 0;
    gen->add_option("--out", gen_out, "output dataset directory (must not exist)")->required();
    gen->add_option("--seed", gen_seed, "master seed");
    gen->add_option("--scenes", gen_scenes, "number of scenes; the last K/6 are test, the K/6 before them val");
    gen->add_option("--grid", gen_grid, "voxel grid dimensions X,Y,Z");
    gen->add_option("--classes", gen_classes, "semantic classes N (1 floor, 2 ceiling, 3 wall, 4..N objects)");
    gen->add_option("--max-objects", gen_objects, "maximum boxes per room");
    gen->add_option("--noise", gen_noise, "per-pixel Gaussian color noise std");
    gen->add_option("--workers", gen_workers, "generation threads (0 = hardware concurrency)");

    auto* train = app.add_subcommand("train", "train a model and write a run directory");
    std::string train_data, train_out;
    bool train_force = false, train_quiet = false;
    ConfigFlags train_flags;
    train->add_option("--data", train_data, "dataset directory")->required();
    train_flags.add(train, true);
    train->add_option("--out", train_out, "run directory to create")->required();
    train->add_flag("--force", train_force, "replace an existing run directory");
    train->add_flag("--quiet", train_quiet, "no progress output");

    auto* eval = app.add_subcommand("eval", "evaluate a run's final checkpoint");
    std::string eval_run, eval_split = "test", eval_data;
    eval->add_option("--run", eval_run, "run directory")->required();
    eval->add_option("--split", eval_split, "split to evaluate")->check(CLI::IsMember({"train", "val", "test"}));
    eval->add_option("--data", eval_data, "dataset directory (default: the one the run was trained on)");

    auto* abl = app.add_subcommand("ablate", "train and compare ablation variants over several seeds");
    std::string abl_data, abl_toggles = "stereo_sfa,oad,distill", abl_disc, abl_out;
    int abl_seeds = 3;
    ConfigFlags abl_flags;
    abl->add_option("--data", abl_data, "dataset directory")->required();
    abl_flags.add(abl, true);
    abl->add_option("--toggles", abl_toggles, "components to switch off one at a time (stereo_sfa,oad,distill)");
    abl->add_option("--seeds", abl_seeds, "seeds per variant (config seed, +1, ...)")->check(CLI::PositiveNumber);
    abl->add_option("--discretization", abl_disc, "also sweep depth discretization modes, e.g. UD,LID,SID");
    abl->add_option("--out", abl_out, "directory for ablation.json and ablation.tsv");

    auto* grad = app.add_subcommand("gradcheck", "compare analytic gradients with central finite differences");
    std::string grad_module = "all";
    std::uint64_t grad_seed = 1;
    grad->add_option("--module", grad_module, "all, lifting, oad, losses or pipeline")
        ->check(CLI::IsMember({"all", "lifting", "oad", "losses", "pipeline"}));
    grad->add_option("--seed", grad_seed, "seed for the random instances");

    auto* rep = app.add_subcommand("report", "write a static HTML report for a run");
    std::string rep_run, rep_out;
    rep->add_option("--run", rep_run, "run directory")->required();
    rep->add_option("--out", rep_out, "output HTML file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::fprintf(stderr, "occdepth: error: %s\n", e.what());
        return 2;
    }

    try {
        if (*gen) return cmd_gen(gen_out, gen_seed, gen_scenes, gen_grid, gen_classes, gen_objects, gen_noise, gen_workers);
        if (*train) return cmd_train(train_data, train_flags, train_out, train_force, train_quiet);
        if (*eval) return cmd_eval(eval_run, eval_split, eval_data);
        if (*abl) return cmd_ablate(abl_data, abl_flags, abl_toggles, abl_seeds, abl_disc, abl_out);
        if (*grad) return cmd_gradcheck(grad_module, grad_seed);
        if (*rep) return cmd_report(rep_run, rep_out);
    } catch (const Error& e) {
        std::fprintf(stderr, "occdepth: error: %s\n", e.what());
        return e.exit_code();
    } catch (const fs::filesystem_error& e) {
        std::fprintf(stderr, "occdepth: error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "occdepth: error: %s\n", e.what());
        return 2;
    }
    return 2;
}
