#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "vicon/dataio.hpp"
#include "vicon/model.hpp"

namespace vicon {

struct TrainConfig {
    double peak_lr = 3e-4;
    double final_lr = 3e-7;
    int64_t warmup_steps = 500;
    int64_t total_steps = 5000;
    double weight_decay = 1e-4;
    double clip_norm = 1.0;
    int64_t batch_size = 16;
    uint64_t seed = 0;
    // data assembly
    int64_t s_max = 3;
    int64_t prompts_per_traj = 4;
    // optimizer moments, pinned
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int64_t n_threads = 0;  // 0: one per batch row up to hardware
    int64_t log_every = 50;

    void validate() const;

    static TrainConfig desk() { return TrainConfig{}; }

    /// Published full-scale schedule; preset only, never run in CI.
    static TrainConfig full_scale() {
        TrainConfig cfg;
        cfg.peak_lr = 1e-4;
        cfg.final_lr = 1e-7;
        cfg.warmup_steps = 20000;
        cfg.total_steps = 200000;
        cfg.weight_decay = 1e-4;
        cfg.clip_norm = 1.0;
        cfg.s_max = 5;
        return cfg;
    }
};

/// Linear ramp 0 -> peak over the warmup, then cosine decay peak -> final.
double lr_at(int64_t step, const TrainConfig& cfg);

/// Per-element loss weights for one patch matrix: valid channels only, the
/// node-type channel always excluded.
template <typename T>
Tensor<T> loss_weights(const ModelConfig& cfg, const ChannelMask& mask);

/// MSE over the pairs after the exempt leading ones, valid channels only.
template <typename T>
Var<T> masked_icl_loss(Tape<T>& tape, const std::vector<Var<T>>& predictions,
                       const std::vector<Var<T>>& targets, int64_t min_context,
                       const Tensor<T>& channel_weights);

struct AdamState {
    std::map<std::string, Tensor<float>> m;
    std::map<std::string, Tensor<float>> v;
    int64_t step = 0;

    static AdamState init(const ModelParams<float>& params);
};

struct StepStats {
    double loss = 0.0;
    double lr = 0.0;
    double grad_norm = 0.0;       // before clipping
    double post_clip_norm = 0.0;  // after clipping
    double wall_ms = 0.0;
};

/// One optimization step over a batch of normalized prompts: forward, masked
/// loss, backward, global-norm clip, decoupled-weight-decay moment update.
/// Deterministic for a fixed batch regardless of thread count.
StepStats train_step(const std::vector<PromptSequence>& batch, ModelParams<float>& params, AdamState& state,
                     const TrainConfig& cfg, int64_t step_index);

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

void save_model_checkpoint(const ModelParams<float>& params, const std::filesystem::path& path);
ModelParams<float> load_model_checkpoint(const std::filesystem::path& path);

struct TrainCheckpoint {
    ModelParams<float> params;
    AdamState state;
    int64_t next_step = 0;
};

void save_train_checkpoint(const ModelParams<float>& params, const AdamState& state, int64_t next_step,
                           const std::filesystem::path& path);
TrainCheckpoint load_train_checkpoint(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// data assembly and the training driver
// ---------------------------------------------------------------------------

/// Epoch-pool prompt source: every trajectory contributes prompts_per_traj
/// draws per epoch, the pool order is shuffled, prompts come out normalized.
class PromptSampler {
public:
    PromptSampler(const std::vector<Trajectory>* trajectories, int64_t num_pairs, int64_t s_max,
                  int64_t prompts_per_traj, uint64_t seed);

    PromptSequence next();

private:
    void refill();

    const std::vector<Trajectory>* trajectories_;
    int64_t num_pairs_;
    int64_t s_max_;
    int64_t prompts_per_traj_;
    Rng rng_;
    std::vector<size_t> order_;
    size_t cursor_ = 0;
};

using StepCallback = std::function<void(int64_t step, const StepStats&)>;

struct TrainRunResult {
    ModelParams<float> params;
    AdamState state;
    StepStats final_stats;
};

/// Full loop: init params from the seed, sample batches, step total_steps
/// times. The callback sees every step's stats.
TrainRunResult run_training(const std::vector<Trajectory>& data, const ModelConfig& model_cfg,
                            const TrainConfig& train_cfg, const StepCallback& callback = nullptr);

/// One JSON record per line: {step, lr, loss, grad_norm, wall_ms}.
void append_train_log(const std::filesystem::path& path, int64_t step, const StepStats& stats);

}  // namespace vicon
