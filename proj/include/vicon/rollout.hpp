#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "vicon/model.hpp"
#include "vicon/prompt.hpp"

namespace vicon {

using IndexPair = std::pair<int64_t, int64_t>;

struct PlanStep {
    std::vector<IndexPair> example_pairs;  // (condition index, qoi index)
    int64_t question_in = 0;
    int64_t question_out = 0;
    int64_t stride = 1;
};

struct RolloutPlan {
    std::vector<PlanStep> steps;
    std::vector<int64_t> covered;  // predicted frame indices, ascending
    std::vector<int64_t> gaps;     // unpredictable target indices, ascending
};

/// Fixed stride-1 strategy: examples (0,1)..(D-1,D), one question per target
/// frame in [num_reference, total-1].
RolloutPlan gen_single_step(int64_t num_examples, int64_t num_reference, int64_t total);

/// Warm up strides 1..max_stride from the reference frames, then advance at
/// max_stride; repeated examples fill up short per-stride pools.
RolloutPlan gen_flexible_step(int64_t num_examples, int64_t num_reference, int64_t max_stride, int64_t total);

/// All (a,b) in `available` with b-a == stride; when fewer than num_examples,
/// the whole list repeats, is truncated to num_examples and sorted by input.
std::vector<IndexPair> get_available_pairs(int64_t num_examples, int64_t stride,
                                           std::vector<int64_t> available);

/// Fixed-stride strategy over an incomplete frame set; unreachable targets go
/// to gaps, predicted frames join the usable set.
RolloutPlan gen_single_step_with_drops(int64_t num_examples, int64_t stride, int64_t total,
                                       std::vector<int64_t> available);

/// Variable-stride strategy over an incomplete frame set; for each target the
/// largest feasible stride with an available condition frame wins.
RolloutPlan gen_flexible_with_drops(int64_t num_examples, int64_t max_stride, int64_t total,
                                    std::vector<int64_t> available);

/// One row per step: index | example pairs | question in | question out,
/// plus a final gaps row when any target is unreachable.
std::string plan_to_text(const RolloutPlan& plan);
void save_plan(const RolloutPlan& plan, const std::filesystem::path& path);

struct PlanViolation {
    int64_t step_index = 0;
    std::string reason;
};

/// Replay the plan against an availability set and collect every violation:
/// stride mismatches, references to frames not yet available, non-increasing
/// question outputs, covered/gaps bookkeeping errors.
std::vector<PlanViolation> check_plan(const RolloutPlan& plan, const std::vector<int64_t>& available);

/// Maps normalized context pairs and a normalized question condition to a
/// normalized prediction. The step is provided for stride-aware test stubs.
using Predictor = std::function<Frame(const std::vector<FramePair>&, const Frame&, const PlanStep&)>;

struct StepRecord {
    int64_t step_index = 0;
    int64_t question_in = 0;
    int64_t question_out = 0;
    int64_t stride = 1;
    PromptStats stats;
    bool low_context = false;
};

struct RolloutResult {
    std::map<int64_t, Frame> predictions;
    std::vector<StepRecord> records;
};

/// Run a plan: per step, assemble the prompt from available frames, normalize
/// with stats from its example conditions, predict, denormalize, and feed the
/// prediction forward.
RolloutResult execute(const RolloutPlan& plan, const std::map<int64_t, Frame>& initial_frames,
                      const Predictor& predictor, int64_t min_context);

RolloutResult execute(const RolloutPlan& plan, const std::map<int64_t, Frame>& initial_frames,
                      const ModelParams<float>& params);

/// Sparse predicted-frame container: a JSON manifest naming the predicted
/// indices plus a raw float32 payload in index order.
void save_predictions(const std::map<int64_t, Frame>& predictions, double dt_record,
                      const std::filesystem::path& manifest_path);
std::map<int64_t, Frame> load_predictions(const std::filesystem::path& manifest_path);

}  // namespace vicon
