#include "vicon/train.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <thread>

#include "vicon/config_json.hpp"
#include "vicon/serialize.hpp"

namespace vicon {

void TrainConfig::validate() const {
    if (warmup_steps < 0 || total_steps < 1 || warmup_steps >= total_steps) {
        throw std::invalid_argument("train config: need 0 <= warmup_steps < total_steps");
    }
    if (clip_norm <= 0.0) throw std::invalid_argument("train config: clip_norm must be positive");
    if (peak_lr <= 0.0 || final_lr < 0.0 || final_lr > peak_lr) {
        throw std::invalid_argument("train config: need 0 <= final_lr <= peak_lr, peak_lr > 0");
    }
    if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be positive");
    if (s_max < 1 || prompts_per_traj < 1) {
        throw std::invalid_argument("train config: s_max and prompts_per_traj must be positive");
    }
}

double lr_at(int64_t step, const TrainConfig& cfg) {
    if (step < 0 || step > cfg.total_steps) {
        throw std::invalid_argument("lr_at: step " + std::to_string(step) + " outside [0," +
                                    std::to_string(cfg.total_steps) + "]");
    }
    if (step < cfg.warmup_steps) {
        return cfg.peak_lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
    }
    const double progress = static_cast<double>(step - cfg.warmup_steps) /
                            static_cast<double>(cfg.total_steps - cfg.warmup_steps);
    return cfg.final_lr + 0.5 * (cfg.peak_lr - cfg.final_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename T>
Tensor<T> loss_weights(const ModelConfig& cfg, const ChannelMask& mask) {
    Tensor<T> w({cfg.nc, cfg.patch_len()});
    for (int64_t k = 0; k < cfg.nc; ++k) {
        for (int64_t cell = 0; cell < cfg.rx * cfg.ry; ++cell) {
            for (int64_t c = 0; c < cfg.c_union; ++c) {
                const bool valid = c < kUnionChannels && mask[static_cast<size_t>(c)] && c != kNodeType;
                w.at2(k, cell * cfg.c_union + c) = valid ? T(1) : T(0);
            }
        }
    }
    return w;
}

template <typename T>
Var<T> masked_icl_loss(Tape<T>& tape, const std::vector<Var<T>>& predictions,
                       const std::vector<Var<T>>& targets, int64_t min_context,
                       const Tensor<T>& channel_weights) {
    const int64_t pairs = static_cast<int64_t>(predictions.size());
    if (pairs != static_cast<int64_t>(targets.size())) {
        throw std::invalid_argument("masked_icl_loss: prediction/target count mismatch");
    }
    if (pairs <= min_context) {
        throw std::invalid_argument("masked_icl_loss: need more pairs than the " +
                                    std::to_string(min_context) + " exempt from the loss");
    }
    Var<T> total;
    int64_t contributing = 0;
    for (int64_t i = min_context; i < pairs; ++i) {
        Var<T> term = weighted_mse(predictions[static_cast<size_t>(i)], targets[static_cast<size_t>(i)],
                                   channel_weights);
        total = contributing == 0 ? term : add(total, term);
        ++contributing;
    }
    (void)tape;
    return scale(total, T(1) / static_cast<T>(contributing));
}

AdamState AdamState::init(const ModelParams<float>& params) {
    AdamState state;
    for (const auto& [name, tensor] : params.tensors) {
        state.m.emplace(name, Tensor<float>(tensor.shape));
        state.v.emplace(name, Tensor<float>(tensor.shape));
    }
    return state;
}

namespace {

struct RowResult {
    double loss = 0.0;
    std::map<std::string, Tensor<float>> grads;
    std::string error;
};

RowResult run_row(const PromptSequence& prompt, const ModelParams<float>& params, uint64_t dropout_seed) {
    RowResult result;
    try {
        const ModelConfig& cfg = params.config;
        Tape<float> tape;
        ParamVars<float> vars = push_params(tape, params, true);
        PromptPatches<float> patches = patchify_prompt(prompt, cfg);
        PromptVars<float> prompt_vars = push_prompt(tape, patches, false);
        Rng dropout_rng(dropout_seed);
        std::vector<Var<float>> preds =
            forward_patch_predictions(tape, prompt_vars, vars, cfg, cfg.dropout > 0.0 ? &dropout_rng : nullptr);
        std::vector<Var<float>> targets = prompt_vars.qoi;
        const Tensor<float> weights = loss_weights<float>(cfg, prompt.channel_mask);
        Var<float> loss = masked_icl_loss(tape, preds, targets, cfg.min_context, weights);
        result.loss = loss.value().data[0];
        result.grads = grad(loss, vars);
    } catch (const std::exception& e) {
        result.error = e.what();
    }
    return result;
}

}  // namespace

StepStats train_step(const std::vector<PromptSequence>& batch, ModelParams<float>& params, AdamState& state,
                     const TrainConfig& cfg, int64_t step_index) {
    const auto t0 = std::chrono::steady_clock::now();
    if (batch.empty()) throw std::invalid_argument("train_step: empty batch");

    const int64_t rows = static_cast<int64_t>(batch.size());
    int64_t threads = cfg.n_threads > 0 ? cfg.n_threads
                                        : static_cast<int64_t>(std::thread::hardware_concurrency());
    threads = std::max<int64_t>(1, std::min(threads, rows));

    // per-row forward+backward, independent tapes; deterministic because each
    // result lands in its own slot and accumulation below runs in row order
    auto row_seed = [&](int64_t r) {
        return cfg.seed ^ (0x9e3779b97f4a7c15ull * static_cast<uint64_t>(step_index + 1)) ^
               (0xbf58476d1ce4e5b9ull * static_cast<uint64_t>(r + 1));
    };
    std::vector<RowResult> results(static_cast<size_t>(rows));
    if (threads == 1) {
        for (int64_t r = 0; r < rows; ++r) {
            results[static_cast<size_t>(r)] = run_row(batch[static_cast<size_t>(r)], params, row_seed(r));
        }
    } else {
        std::vector<std::thread> workers;
        for (int64_t w = 0; w < threads; ++w) {
            workers.emplace_back([&, w] {
                for (int64_t r = w; r < rows; r += threads) {
                    results[static_cast<size_t>(r)] = run_row(batch[static_cast<size_t>(r)], params, row_seed(r));
                }
            });
        }
        for (auto& worker : workers) worker.join();
    }

    for (int64_t r = 0; r < rows; ++r) {
        if (!results[static_cast<size_t>(r)].error.empty()) {
            throw std::runtime_error("training aborted: prompt row " + std::to_string(r) + " (stride " +
                                     std::to_string(batch[static_cast<size_t>(r)].stride) +
                                     "): " + results[static_cast<size_t>(r)].error);
        }
    }

    StepStats stats;
    stats.lr = lr_at(step_index, cfg);

    std::map<std::string, Tensor<float>> grads;
    const float inv_rows = 1.0f / static_cast<float>(rows);
    for (int64_t r = 0; r < rows; ++r) {
        stats.loss += results[static_cast<size_t>(r)].loss / static_cast<double>(rows);
        for (auto& [name, g] : results[static_cast<size_t>(r)].grads) {
            auto it = grads.find(name);
            if (it == grads.end()) {
                Tensor<float> scaled = g;
                for (auto& x : scaled.data) x *= inv_rows;
                grads.emplace(name, std::move(scaled));
            } else {
                for (size_t i = 0; i < g.data.size(); ++i) it->second.data[i] += g.data[i] * inv_rows;
            }
        }
    }
    if (!std::isfinite(stats.loss)) {
        throw std::runtime_error("training aborted: non-finite batch loss at step " + std::to_string(step_index));
    }

    double norm_sq = 0.0;
    for (const auto& [name, g] : grads) {
        for (float x : g.data) norm_sq += static_cast<double>(x) * static_cast<double>(x);
    }
    stats.grad_norm = std::sqrt(norm_sq);
    double clip_scale = 1.0;
    if (stats.grad_norm > cfg.clip_norm) clip_scale = cfg.clip_norm / stats.grad_norm;
    stats.post_clip_norm = stats.grad_norm * clip_scale;

    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double bias1 = 1.0 - std::pow(cfg.beta1, t);
    const double bias2 = 1.0 - std::pow(cfg.beta2, t);
    for (auto& [name, tensor] : params.tensors) {
        auto git = grads.find(name);
        if (git == grads.end()) continue;
        Tensor<float>& m = state.m.at(name);
        Tensor<float>& v = state.v.at(name);
        for (size_t i = 0; i < tensor.data.size(); ++i) {
            const double g = static_cast<double>(git->second.data[i]) * clip_scale;
            const double mi = cfg.beta1 * m.data[i] + (1.0 - cfg.beta1) * g;
            const double vi = cfg.beta2 * v.data[i] + (1.0 - cfg.beta2) * g * g;
            m.data[i] = static_cast<float>(mi);
            v.data[i] = static_cast<float>(vi);
            const double update = (mi / bias1) / (std::sqrt(vi / bias2) + cfg.eps) +
                                  cfg.weight_decay * tensor.data[i];
            tensor.data[i] = static_cast<float>(tensor.data[i] - stats.lr * update);
        }
        require_finite(tensor, "optimizer update");
    }

    stats.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return stats;
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr int64_t kCheckpointVersion = 1;

void validate_params_against_config(const std::map<std::string, Tensor<float>>& tensors,
                                    const ModelConfig& cfg, const std::string& prefix) {
    const auto expected = ModelParams<float>::param_shapes(cfg);
    if (tensors.size() != expected.size()) {
        throw std::runtime_error("checkpoint: " + std::to_string(tensors.size()) + " tensors under '" + prefix +
                                 "', config expects " + std::to_string(expected.size()));
    }
    for (const auto& [name, shape] : expected) {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw std::runtime_error("checkpoint: missing tensor '" + prefix + name + "'");
        if (it->second.shape != shape) {
            throw std::runtime_error("checkpoint: tensor '" + prefix + name + "' has shape " +
                                     shape_str(it->second.shape) + ", config expects " + shape_str(shape));
        }
    }
}

nlohmann::json checkpoint_header(const char* kind, const ModelConfig& cfg) {
    nlohmann::json header;
    header["kind"] = kind;
    header["checkpoint_version"] = kCheckpointVersion;
    header["model_config"] = model_config_to_json(cfg);
    return header;
}

void check_header(const nlohmann::json& header, const char* kind) {
    if (header.at("kind").get<std::string>() != kind) {
        throw std::runtime_error("checkpoint kind '" + header.at("kind").get<std::string>() +
                                 "' does not match expected '" + kind + "'");
    }
    const int64_t version = header.at("checkpoint_version").get<int64_t>();
    if (version != kCheckpointVersion) {
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
    }
}

}  // namespace

void save_model_checkpoint(const ModelParams<float>& params, const std::filesystem::path& path) {
    TensorFile file;
    file.header = checkpoint_header("model", params.config);
    file.tensors = params.tensors;
    write_tensor_file(path, file);
}

ModelParams<float> load_model_checkpoint(const std::filesystem::path& path) {
    TensorFile file = read_tensor_file(path);
    check_header(file.header, "model");
    ModelParams<float> params;
    params.config = model_config_from_json(file.header.at("model_config"));
    params.config.validate();
    validate_params_against_config(file.tensors, params.config, "");
    params.tensors = std::move(file.tensors);
    return params;
}

void save_train_checkpoint(const ModelParams<float>& params, const AdamState& state, int64_t next_step,
                           const std::filesystem::path& path) {
    TensorFile file;
    file.header = checkpoint_header("train", params.config);
    file.header["opt_step"] = state.step;
    file.header["next_step"] = next_step;
    file.tensors = params.tensors;
    for (const auto& [name, m] : state.m) file.tensors.emplace("opt.m." + name, m);
    for (const auto& [name, v] : state.v) file.tensors.emplace("opt.v." + name, v);
    write_tensor_file(path, file);
}

TrainCheckpoint load_train_checkpoint(const std::filesystem::path& path) {
    TensorFile file = read_tensor_file(path);
    check_header(file.header, "train");

    TrainCheckpoint ckpt;
    ckpt.params.config = model_config_from_json(file.header.at("model_config"));
    ckpt.params.config.validate();
    ckpt.state.step = file.header.at("opt_step").get<int64_t>();
    ckpt.next_step = file.header.at("next_step").get<int64_t>();

    for (auto& [name, tensor] : file.tensors) {
        if (name.starts_with("opt.m.")) {
            ckpt.state.m.emplace(name.substr(6), std::move(tensor));
        } else if (name.starts_with("opt.v.")) {
            ckpt.state.v.emplace(name.substr(6), std::move(tensor));
        } else {
            ckpt.params.tensors.emplace(name, std::move(tensor));
        }
    }
    validate_params_against_config(ckpt.params.tensors, ckpt.params.config, "");
    validate_params_against_config(ckpt.state.m, ckpt.params.config, "opt.m.");
    validate_params_against_config(ckpt.state.v, ckpt.params.config, "opt.v.");
    return ckpt;
}

// ---------------------------------------------------------------------------
// data assembly and the loop
// ---------------------------------------------------------------------------

PromptSampler::PromptSampler(const std::vector<Trajectory>* trajectories, int64_t num_pairs, int64_t s_max,
                             int64_t prompts_per_traj, uint64_t seed)
    : trajectories_(trajectories),
      num_pairs_(num_pairs),
      s_max_(s_max),
      prompts_per_traj_(prompts_per_traj),
      rng_(seed) {
    if (!trajectories_ || trajectories_->empty()) {
        throw std::invalid_argument("prompt sampler: no trajectories");
    }
}

void PromptSampler::refill() {
    order_.clear();
    for (size_t t = 0; t < trajectories_->size(); ++t) {
        for (int64_t k = 0; k < prompts_per_traj_; ++k) order_.push_back(t);
    }
    rng_.shuffle(order_);
    cursor_ = 0;
}

PromptSequence PromptSampler::next() {
    if (cursor_ >= order_.size()) refill();
    const Trajectory& traj = (*trajectories_)[order_[cursor_++]];
    PromptSequence prompt = sample_prompt(traj, num_pairs_, s_max_, rng_);
    std::vector<Frame> conds;
    conds.reserve(prompt.pairs.size());
    for (const FramePair& pair : prompt.pairs) conds.push_back(pair.cond);
    return normalize_prompt(prompt, compute_stats(conds));
}

TrainRunResult run_training(const std::vector<Trajectory>& data, const ModelConfig& model_cfg,
                            const TrainConfig& train_cfg, const StepCallback& callback) {
    model_cfg.validate();
    train_cfg.validate();

    TrainRunResult result;
    result.params = ModelParams<float>::init(model_cfg, train_cfg.seed);
    result.state = AdamState::init(result.params);

    PromptSampler sampler(&data, model_cfg.max_pairs, train_cfg.s_max, train_cfg.prompts_per_traj,
                          train_cfg.seed ^ 0x5eed5eedULL);
    for (int64_t step = 0; step < train_cfg.total_steps; ++step) {
        std::vector<PromptSequence> batch;
        batch.reserve(static_cast<size_t>(train_cfg.batch_size));
        for (int64_t b = 0; b < train_cfg.batch_size; ++b) batch.push_back(sampler.next());
        result.final_stats = train_step(batch, result.params, result.state, train_cfg, step);
        if (callback) callback(step, result.final_stats);
    }
    return result;
}

void append_train_log(const std::filesystem::path& path, int64_t step, const StepStats& stats) {
    std::ofstream out(path, std::ios::app);
    if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    nlohmann::json j;
    j["step"] = step;
    j["lr"] = stats.lr;
    j["loss"] = stats.loss;
    j["grad_norm"] = stats.grad_norm;
    j["wall_ms"] = stats.wall_ms;
    out << j.dump() << "\n";
}

// explicit instantiations
template Tensor<float> loss_weights<float>(const ModelConfig&, const ChannelMask&);
template Tensor<double> loss_weights<double>(const ModelConfig&, const ChannelMask&);
template Var<float> masked_icl_loss<float>(Tape<float>&, const std::vector<Var<float>>&,
                                           const std::vector<Var<float>>&, int64_t, const Tensor<float>&);
template Var<double> masked_icl_loss<double>(Tape<double>&, const std::vector<Var<double>>&,
                                             const std::vector<Var<double>>&, int64_t, const Tensor<double>&);

}  // namespace vicon
