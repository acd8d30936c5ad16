#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "vicon/config_json.hpp"
#include "vicon/dataio.hpp"
#include "vicon/metrics.hpp"
#include "vicon/rollout.hpp"
#include "vicon/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace vicon;

namespace {

// exit codes: 0 ok, 2 config error, 3 runtime error
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Collects validation failures so a bad config is reported in one message.
class Validator {
public:
    void require(bool ok, const std::string& what) {
        if (!ok) problems_.push_back(what);
    }
    void finish(const std::string& command) const {
        if (problems_.empty()) return;
        std::ostringstream os;
        os << command << ": invalid configuration:";
        for (const auto& p : problems_) os << "\n  - " << p;
        throw ConfigError(os.str());
    }

private:
    std::vector<std::string> problems_;
};

/// Removes everything this run created unless it finished cleanly.
class OutputGuard {
public:
    ~OutputGuard() {
        if (armed_) {
            for (auto it = created_.rbegin(); it != created_.rend(); ++it) {
                std::error_code ec;
                fs::remove(*it, ec);
            }
        }
    }
    fs::path track(fs::path path) {
        created_.push_back(path);
        return path;
    }
    void dismiss() { armed_ = false; }

private:
    std::vector<fs::path> created_;
    bool armed_ = true;
};

json load_config_file(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
    }
    return j;
}

void write_resolved_config(const json& resolved, const fs::path& out_dir, OutputGuard& guard) {
    std::ofstream out(guard.track(out_dir / "resolved_config.json"), std::ios::trunc);
    out << resolved.dump(2) << "\n";
}

std::vector<fs::path> trajectory_manifests(const std::vector<std::string>& data_dirs) {
    std::vector<fs::path> files;
    for (const auto& dir : data_dirs) {
        if (!fs::is_directory(dir)) throw ConfigError("data dir '" + dir + "' does not exist");
        for (const auto& entry : fs::directory_iterator(dir)) {
            if (entry.path().extension() == ".json" && entry.path().filename() != "manifest.json" &&
                entry.path().filename() != "resolved_config.json") {
                files.push_back(entry.path());
            }
        }
    }
    std::sort(files.begin(), files.end());
    return files;
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

struct FamilySpec {
    std::string pde;
    int64_t count = 0;
    int64_t nx = 16, ny = 16, nt = 24;
    double dt = 0.1;
    double nu_min = 0.02, nu_max = 0.2;     // heat
    int64_t cells_min = -2, cells_max = 2;  // advection, cells per recorded step
};

int cmd_gen_data(const json& cfg) {
    Validator check;
    check.require(cfg.contains("out_dir"), "out_dir missing");
    check.require(cfg.contains("families") && cfg["families"].is_array() && !cfg["families"].empty(),
                  "families must be a non-empty array");
    const uint64_t seed = cfg.value("seed", uint64_t{0});

    std::vector<FamilySpec> families;
    if (cfg.contains("families") && cfg["families"].is_array()) {
        for (size_t i = 0; i < cfg["families"].size(); ++i) {
            const json& f = cfg["families"][i];
            FamilySpec spec;
            spec.pde = f.value("pde", "");
            spec.count = f.value("count", int64_t{0});
            spec.nx = f.value("nx", int64_t{16});
            spec.ny = f.value("ny", int64_t{16});
            spec.nt = f.value("nt", int64_t{24});
            spec.dt = f.value("dt", 0.1);
            spec.nu_min = f.value("nu_min", 0.02);
            spec.nu_max = f.value("nu_max", 0.2);
            spec.cells_min = f.value("cells_min", int64_t{-2});
            spec.cells_max = f.value("cells_max", int64_t{2});
            const std::string at = "families[" + std::to_string(i) + "]";
            check.require(spec.pde == "heat" || spec.pde == "advection", at + ".pde must be heat or advection");
            check.require(spec.count > 0, at + ".count must be positive");
            check.require(spec.nx > 0 && spec.ny > 0 && spec.nt > 1, at + ": nx, ny > 0 and nt > 1");
            check.require(spec.dt > 0, at + ".dt must be positive");
            if (spec.pde == "heat") {
                check.require(spec.nu_min > 0 && spec.nu_max >= spec.nu_min, at + ": need 0 < nu_min <= nu_max");
            }
            if (spec.pde == "advection") {
                check.require(spec.cells_max >= spec.cells_min, at + ": need cells_min <= cells_max");
            }
            families.push_back(spec);
        }
    }
    check.finish("gen-data");

    const fs::path out_dir = cfg.at("out_dir").get<std::string>();
    fs::create_directories(out_dir);
    OutputGuard guard;

    Rng rng(seed);
    json listing;
    listing["trajectories"] = json::array();
    int64_t file_index = 0;
    for (const FamilySpec& spec : families) {
        for (int64_t k = 0; k < spec.count; ++k) {
            const uint64_t traj_seed = rng.next_u64();
            Trajectory traj;
            if (spec.pde == "heat") {
                const double nu = rng.uniform(spec.nu_min, spec.nu_max);
                traj = gen_heat(spec.nx, spec.ny, nu, spec.dt, spec.nt, traj_seed);
            } else {
                const double vx = static_cast<double>(rng.randint(spec.cells_min, spec.cells_max)) /
                                  (spec.dt * static_cast<double>(spec.nx));
                const double vy = static_cast<double>(rng.randint(spec.cells_min, spec.cells_max)) /
                                  (spec.dt * static_cast<double>(spec.ny));
                traj = gen_advection(spec.nx, spec.ny, vx, vy, spec.dt, spec.nt, traj_seed);
            }
            char name[32];
            std::snprintf(name, sizeof(name), "traj_%04lld.json", static_cast<long long>(file_index++));
            const fs::path manifest = out_dir / name;
            guard.track(manifest);
            guard.track(out_dir / (manifest.stem().string() + ".bin"));
            save_trajectory(traj, manifest);
            listing["trajectories"].push_back({{"file", std::string(name)},
                                               {"pde", spec.pde},
                                               {"params", traj.pde_params}});
        }
    }
    listing["count"] = file_index;
    listing["config"] = cfg;
    std::ofstream out(guard.track(out_dir / "manifest.json"), std::ios::trunc);
    out << listing.dump(2) << "\n";
    write_resolved_config(cfg, out_dir, guard);
    guard.dismiss();
    std::cout << "gen-data: wrote " << file_index << " trajectories to " << out_dir << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

ModelConfig resolve_model_config(const json& cfg, Validator& check) {
    ModelConfig mcfg = ModelConfig::desk();
    if (cfg.contains("model")) {
        const json& m = cfg["model"];
        const std::string preset = m.value("preset", "desk");
        if (preset == "full_scale") {
            mcfg = ModelConfig::full_scale();
        } else if (preset != "desk") {
            check.require(false, "model.preset must be desk or full_scale");
        }
        json merged = model_config_to_json(mcfg);
        for (const auto& [key, value] : m.items()) {
            if (key == "preset") continue;
            if (!merged.contains(key)) {
                check.require(false, "model." + key + " is not a recognized field");
                continue;
            }
            merged[key] = value;
        }
        mcfg = model_config_from_json(merged);
    }
    try {
        mcfg.validate();
    } catch (const std::exception& e) {
        check.require(false, std::string("model: ") + e.what());
    }
    return mcfg;
}

TrainConfig resolve_train_config(const json& cfg, Validator& check) {
    TrainConfig tcfg = TrainConfig::desk();
    if (cfg.contains("train")) {
        const json& t = cfg["train"];
        const std::string preset = t.value("preset", "desk");
        if (preset == "full_scale") {
            tcfg = TrainConfig::full_scale();
        } else if (preset != "desk") {
            check.require(false, "train.preset must be desk or full_scale");
        }
        json merged = train_config_to_json(tcfg);
        for (const auto& [key, value] : t.items()) {
            if (key == "preset") continue;
            if (!merged.contains(key)) {
                check.require(false, "train." + key + " is not a recognized field");
                continue;
            }
            merged[key] = value;
        }
        tcfg = train_config_from_json(merged);
    }
    try {
        tcfg.validate();
    } catch (const std::exception& e) {
        check.require(false, std::string("train: ") + e.what());
    }
    return tcfg;
}

int cmd_train(const json& cfg) {
    Validator check;
    check.require(cfg.contains("out_dir"), "out_dir missing");
    check.require(cfg.contains("data_dirs") && cfg["data_dirs"].is_array() && !cfg["data_dirs"].empty(),
                  "data_dirs must be a non-empty array");
    ModelConfig mcfg = resolve_model_config(cfg, check);
    TrainConfig tcfg = resolve_train_config(cfg, check);
    check.finish("train");

    std::vector<Trajectory> data;
    for (const fs::path& manifest : trajectory_manifests(cfg.at("data_dirs").get<std::vector<std::string>>())) {
        data.push_back(load_trajectory(manifest));
    }
    if (data.empty()) throw ConfigError("train: no trajectories found in data_dirs");

    const fs::path out_dir = cfg.at("out_dir").get<std::string>();
    fs::create_directories(out_dir);
    OutputGuard guard;
    const fs::path log_path = guard.track(out_dir / "train_log.jsonl");
    std::error_code ec;
    fs::remove(log_path, ec);

    TrainRunResult result = run_training(data, mcfg, tcfg, [&](int64_t step, const StepStats& stats) {
        if (step % tcfg.log_every == 0 || step + 1 == tcfg.total_steps) {
            append_train_log(log_path, step, stats);
            std::cout << "step " << step << " loss " << stats.loss << " lr " << stats.lr << "\n";
        }
    });

    save_model_checkpoint(result.params, guard.track(out_dir / "model.ckpt"));
    save_train_checkpoint(result.params, result.state, tcfg.total_steps, guard.track(out_dir / "train.ckpt"));
    json resolved = cfg;
    resolved["model"] = model_config_to_json(mcfg);
    resolved["train"] = train_config_to_json(tcfg);
    write_resolved_config(resolved, out_dir, guard);
    guard.dismiss();
    std::cout << "train: final loss " << result.final_stats.loss << ", checkpoint " << (out_dir / "model.ckpt")
              << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// rollout
// ---------------------------------------------------------------------------

std::vector<int64_t> apply_drops(const std::string& spec, int64_t initial_frames, uint64_t drops_seed,
                                 Validator& check) {
    std::vector<int64_t> available;
    for (int64_t i = 0; i < initial_frames; ++i) available.push_back(i);
    if (spec.empty() || spec == "none") return available;
    if (spec == "half-rate") {
        std::vector<int64_t> kept;
        for (int64_t i = 0; i < initial_frames; i += 2) kept.push_back(i);
        return kept;
    }
    if (spec.rfind("random-", 0) == 0) {
        int64_t k = 0;
        try {
            k = std::stoll(spec.substr(7));
        } catch (...) {
            check.require(false, "drops: cannot parse '" + spec + "'");
            return available;
        }
        check.require(k >= 0 && k < initial_frames, "drops: random-k must drop fewer than the initial frames");
        Rng rng(drops_seed);
        std::vector<int64_t> pool = available;
        rng.shuffle(pool);
        pool.resize(static_cast<size_t>(k));
        std::vector<int64_t> kept;
        for (int64_t i : available) {
            if (std::find(pool.begin(), pool.end(), i) == pool.end()) kept.push_back(i);
        }
        return kept;
    }
    if (spec.rfind("list:", 0) == 0) {
        std::vector<int64_t> dropped;
        std::stringstream ss(spec.substr(5));
        std::string token;
        while (std::getline(ss, token, ',')) {
            try {
                dropped.push_back(std::stoll(token));
            } catch (...) {
                check.require(false, "drops: cannot parse index '" + token + "'");
            }
        }
        std::vector<int64_t> kept;
        for (int64_t i : available) {
            if (std::find(dropped.begin(), dropped.end(), i) == dropped.end()) kept.push_back(i);
        }
        check.require(!kept.empty(), "drops: every initial frame was dropped");
        return kept;
    }
    check.require(false, "drops must be none, half-rate, random-<k> or list:<i,j,...>");
    return available;
}

int cmd_rollout(const json& cfg) {
    Validator check;
    check.require(cfg.contains("checkpoint"), "checkpoint missing");
    check.require(cfg.contains("trajectory"), "trajectory missing");
    check.require(cfg.contains("out_dir"), "out_dir missing");
    const std::string strategy = cfg.value("strategy", "single");
    check.require(strategy == "single" || strategy == "flexible", "strategy must be single or flexible");
    const int64_t s_max = cfg.value("s_max", int64_t{3});
    const int64_t stride = cfg.value("stride", int64_t{1});
    const int64_t num_examples = cfg.value("num_examples", int64_t{0});  // 0: context length - 1
    const int64_t initial_frames = cfg.value("initial_frames", int64_t{10});
    check.require(s_max >= 1 && stride >= 1 && num_examples >= 0 && initial_frames >= 2,
                  "s_max, stride, num_examples must be >= 1 and initial_frames >= 2");
    const std::string drops = cfg.value("drops", "none");
    const uint64_t drops_seed = cfg.value("drops_seed", uint64_t{0});
    std::vector<int64_t> available = apply_drops(drops, initial_frames, drops_seed, check);
    check.finish("rollout");

    ModelParams<float> params = load_model_checkpoint(cfg.at("checkpoint").get<std::string>());
    Trajectory traj = load_trajectory(cfg.at("trajectory").get<std::string>());
    if (initial_frames >= traj.nt()) {
        throw ConfigError("rollout: initial_frames must leave at least one frame to predict");
    }
    const int64_t examples =
        num_examples > 0 ? num_examples : std::min(params.config.max_pairs - 1, initial_frames - 1);

    const bool perfect = static_cast<int64_t>(available.size()) == initial_frames;
    RolloutPlan plan;
    if (strategy == "single") {
        plan = perfect ? gen_single_step(examples, initial_frames, traj.nt())
                       : gen_single_step_with_drops(examples, stride, traj.nt(), available);
    } else {
        plan = perfect ? gen_flexible_step(examples, initial_frames, s_max, traj.nt())
                       : gen_flexible_with_drops(examples, s_max, traj.nt(), available);
    }
    // pair pools list every available pair at a stride, which can exceed the
    // model's context window when it is smaller than the pool; keep the sorted
    // prefix so the executed prompt fits
    const int64_t capacity = params.config.max_pairs - 1;
    for (PlanStep& step : plan.steps) {
        if (static_cast<int64_t>(step.example_pairs.size()) > capacity) {
            step.example_pairs.resize(static_cast<size_t>(capacity));
        }
    }

    std::map<int64_t, Frame> initial;
    for (int64_t i : available) initial[i] = traj.frames[static_cast<size_t>(i)];
    RolloutResult result = execute(plan, initial, params);

    const fs::path out_dir = cfg.at("out_dir").get<std::string>();
    fs::create_directories(out_dir);
    OutputGuard guard;
    save_plan(plan, guard.track(out_dir / "plan.txt"));
    if (!result.predictions.empty()) {
        guard.track(out_dir / "predictions.bin");
        save_predictions(result.predictions, traj.dt_record, guard.track(out_dir / "predictions.json"));
    }
    json records = json::array();
    for (const StepRecord& rec : result.records) {
        records.push_back({{"step", rec.step_index},
                           {"question_in", rec.question_in},
                           {"question_out", rec.question_out},
                           {"stride", rec.stride},
                           {"low_context", rec.low_context},
                           {"mu", rec.stats.mu},
                           {"sigma", rec.stats.sigma}});
    }
    {
        std::ofstream out(guard.track(out_dir / "records.json"), std::ios::trunc);
        out << records.dump(2) << "\n";
    }
    json resolved = cfg;
    resolved["available_frames"] = available;
    write_resolved_config(resolved, out_dir, guard);
    guard.dismiss();
    std::cout << "rollout: " << result.predictions.size() << " frames predicted, " << plan.gaps.size()
              << " gaps, plan " << (out_dir / "plan.txt") << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval and plot
// ---------------------------------------------------------------------------

int cmd_eval(const json& cfg) {
    Validator check;
    check.require(cfg.contains("predictions"), "predictions missing");
    check.require(cfg.contains("trajectory"), "trajectory missing");
    check.require(cfg.contains("out_dir"), "out_dir missing");
    const int64_t first_pred_index = cfg.value("first_pred_index", int64_t{10});
    check.require(first_pred_index >= 0, "first_pred_index must be non-negative");
    check.finish("eval");

    const auto predictions = load_predictions(cfg.at("predictions").get<std::string>());
    const Trajectory traj = load_trajectory(cfg.at("trajectory").get<std::string>());
    MetricsReport report = evaluate_rollout(predictions, traj, first_pred_index);

    const fs::path out_dir = cfg.at("out_dir").get<std::string>();
    fs::create_directories(out_dir);
    OutputGuard guard;
    save_report(report, guard.track(out_dir / "report.json"));
    write_resolved_config(cfg, out_dir, guard);
    guard.dismiss();
    std::cout << "eval: all-average rel L2 " << (report.all_avg ? std::to_string(*report.all_avg) : "n/a")
              << ", report " << (out_dir / "report.json") << "\n";
    return 0;
}

int cmd_plot(const json& cfg) {
    Validator check;
    check.require(cfg.contains("report"), "report missing");
    check.require(cfg.contains("out_dir"), "out_dir missing");
    check.finish("plot");

    MetricsReport report = load_report(cfg.at("report").get<std::string>());
    const fs::path out_dir = cfg.at("out_dir").get<std::string>();
    fs::create_directories(out_dir);
    OutputGuard guard;
    plot_report(report, guard.track(out_dir / "error_curves.bmp"));
    write_resolved_config(cfg, out_dir, guard);
    guard.dismiss();
    std::cout << "plot: wrote " << (out_dir / "error_curves.bmp") << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"VICON: in-context operator learning for 2D PDE time evolution"};
    app.require_subcommand(1);

    std::string config_path;
    json overrides = json::object();

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON config file");
        sub->add_option_function<std::string>(
            "--out-dir", [&](const std::string& v) { overrides["out_dir"] = v; }, "output directory");
        sub->add_option_function<uint64_t>(
            "--seed", [&](uint64_t v) { overrides["seed"] = v; }, "random seed");
    };

    CLI::App* gen = app.add_subcommand("gen-data", "generate analytic trajectory families");
    add_common(gen);

    CLI::App* train = app.add_subcommand("train", "train a model on trajectory directories");
    add_common(train);
    train->add_option_function<std::string>(
        "--data-dir", [&](const std::string& v) { overrides["data_dirs"] = json::array({v}); },
        "trajectory directory (overrides data_dirs)");
    train->add_option_function<int64_t>(
        "--steps", [&](int64_t v) { overrides["train"]["total_steps"] = v; }, "total optimization steps");

    CLI::App* rollout = app.add_subcommand("rollout", "autoregressive prediction over a trajectory");
    add_common(rollout);
    rollout->add_option_function<std::string>(
        "--checkpoint", [&](const std::string& v) { overrides["checkpoint"] = v; }, "model checkpoint");
    rollout->add_option_function<std::string>(
        "--trajectory", [&](const std::string& v) { overrides["trajectory"] = v; }, "trajectory manifest");
    rollout->add_option_function<std::string>(
        "--strategy", [&](const std::string& v) { overrides["strategy"] = v; }, "single or flexible");
    rollout->add_option_function<int64_t>(
        "--s-max", [&](int64_t v) { overrides["s_max"] = v; }, "maximum stride for flexible rollout");
    rollout->add_option_function<std::string>(
        "--drops", [&](const std::string& v) { overrides["drops"] = v; },
        "none, half-rate, random-<k>, or list:<i,j,...>");

    CLI::App* eval = app.add_subcommand("eval", "score predictions against ground truth");
    add_common(eval);
    eval->add_option_function<std::string>(
        "--predictions", [&](const std::string& v) { overrides["predictions"] = v; }, "predictions manifest");
    eval->add_option_function<std::string>(
        "--trajectory", [&](const std::string& v) { overrides["trajectory"] = v; }, "trajectory manifest");

    CLI::App* plot = app.add_subcommand("plot", "render error curves from a report");
    add_common(plot);
    plot->add_option_function<std::string>(
        "--report", [&](const std::string& v) { overrides["report"] = v; }, "metrics report file");

    CLI11_PARSE(app, argc, argv);

    try {
        json cfg = load_config_file(config_path);
        cfg.merge_patch(overrides);
        if (gen->parsed()) return cmd_gen_data(cfg);
        if (train->parsed()) return cmd_train(cfg);
        if (rollout->parsed()) return cmd_rollout(cfg);
        if (eval->parsed()) return cmd_eval(cfg);
        if (plot->parsed()) return cmd_plot(cfg);
    } catch (const ConfigError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
