#include "vicon/rollout.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "vicon/serialize.hpp"

namespace vicon {

namespace {

std::vector<IndexPair> repeat_truncate_sort(std::vector<IndexPair> base, int64_t want) {
    const int64_t have = static_cast<int64_t>(base.size());
    if (have == 0 || have >= want) return base;
    const int64_t reps = (want + have - 1) / have;
    std::vector<IndexPair> out;
    out.reserve(static_cast<size_t>(reps * have));
    for (int64_t r = 0; r < reps; ++r) out.insert(out.end(), base.begin(), base.end());
    out.resize(static_cast<size_t>(want));
    std::sort(out.begin(), out.end());
    return out;
}

void finish_plan(RolloutPlan& plan) {
    for (const PlanStep& step : plan.steps) plan.covered.push_back(step.question_out);
}

}  // namespace

RolloutPlan gen_single_step(int64_t num_examples, int64_t num_reference, int64_t total) {
    if (num_reference <= num_examples) {
        throw std::invalid_argument("gen_single_step: insufficient examples (need num_reference > num_examples)");
    }
    if (total < num_reference) {
        throw std::invalid_argument("gen_single_step: total frames below the reference count");
    }
    std::vector<IndexPair> examples;
    examples.reserve(static_cast<size_t>(num_examples));
    for (int64_t i = 0; i < num_examples; ++i) examples.emplace_back(i, i + 1);

    RolloutPlan plan;
    for (int64_t i = num_reference; i < total; ++i) {
        plan.steps.push_back(PlanStep{examples, i - 1, i, 1});
    }
    finish_plan(plan);
    return plan;
}

RolloutPlan gen_flexible_step(int64_t num_examples, int64_t num_reference, int64_t max_stride, int64_t total) {
    if (num_reference < max_stride + 1) {
        throw std::invalid_argument("gen_flexible_step: need num_reference >= max_stride + 1");
    }
    if (num_examples < 1 || max_stride < 1) {
        throw std::invalid_argument("gen_flexible_step: num_examples and max_stride must be positive");
    }
    if (total < num_reference) {
        throw std::invalid_argument("gen_flexible_step: total frames below the reference count");
    }

    // per-stride example pools from the reference frames
    std::map<int64_t, std::vector<IndexPair>> pools;
    for (int64_t s = 1; s <= max_stride; ++s) {
        const int64_t unique = std::min(num_examples, num_reference - s);
        std::vector<IndexPair> base;
        base.reserve(static_cast<size_t>(unique));
        for (int64_t out = num_reference - unique; out < num_reference; ++out) {
            base.emplace_back(out - s, out);
        }
        pools[s] = repeat_truncate_sort(std::move(base), num_examples);
    }

    RolloutPlan plan;
    for (int64_t i = num_reference; i < total; ++i) {
        const int64_t dist = i - num_reference + 1;
        const int64_t s = std::min(dist, max_stride);
        plan.steps.push_back(PlanStep{pools[s], i - s, i, s});
    }
    finish_plan(plan);
    return plan;
}

std::vector<IndexPair> get_available_pairs(int64_t num_examples, int64_t stride,
                                           std::vector<int64_t> available) {
    std::sort(available.begin(), available.end());
    std::vector<IndexPair> pairs;
    for (size_t i = 0; i < available.size(); ++i) {
        for (size_t j = i + 1; j < available.size(); ++j) {
            if (available[j] - available[i] == stride) pairs.emplace_back(available[i], available[j]);
        }
    }
    if (pairs.empty()) return pairs;
    return repeat_truncate_sort(std::move(pairs), num_examples);
}

RolloutPlan gen_single_step_with_drops(int64_t num_examples, int64_t stride, int64_t total,
                                       std::vector<int64_t> available) {
    if (available.empty()) throw std::invalid_argument("gen_single_step_with_drops: no available frames");
    if (stride < 1) throw std::invalid_argument("gen_single_step_with_drops: stride must be positive");
    std::sort(available.begin(), available.end());
    const int64_t start = available.back();

    RolloutPlan plan;
    const std::vector<IndexPair> examples = get_available_pairs(num_examples, stride, available);
    if (examples.empty()) {
        for (int64_t i = start + 1; i < total; ++i) plan.gaps.push_back(i);
        return plan;
    }

    std::set<int64_t> usable(available.begin(), available.end());
    for (int64_t i = start + 1; i < total; ++i) {
        const int64_t cond = i - stride;
        if (!usable.count(cond)) {
            plan.gaps.push_back(i);
            continue;
        }
        plan.steps.push_back(PlanStep{examples, cond, i, stride});
        usable.insert(i);
    }
    finish_plan(plan);
    return plan;
}

RolloutPlan gen_flexible_with_drops(int64_t num_examples, int64_t max_stride, int64_t total,
                                    std::vector<int64_t> available) {
    if (available.empty()) throw std::invalid_argument("gen_flexible_with_drops: no available frames");
    if (max_stride < 1) throw std::invalid_argument("gen_flexible_with_drops: max_stride must be positive");
    std::sort(available.begin(), available.end());
    const int64_t start = available.back();

    std::map<int64_t, std::vector<IndexPair>> pools;
    for (int64_t s = 1; s <= max_stride; ++s) {
        auto pairs = get_available_pairs(num_examples, s, available);
        if (!pairs.empty()) pools[s] = std::move(pairs);
    }

    RolloutPlan plan;
    if (pools.empty()) {
        for (int64_t i = start + 1; i < total; ++i) plan.gaps.push_back(i);
        return plan;
    }
    const int64_t max_pool_stride = pools.rbegin()->first;

    std::set<int64_t> usable(available.begin(), available.end());
    for (int64_t i = start + 1; i < total; ++i) {
        const int64_t dist = i - start;
        const int64_t cap = std::min({dist, max_stride, max_pool_stride});
        int64_t chosen = -1;
        // largest feasible stride whose condition frame is on hand
        for (auto it = pools.rbegin(); it != pools.rend(); ++it) {
            if (it->first > cap) continue;
            if (usable.count(i - it->first)) {
                chosen = it->first;
                break;
            }
        }
        if (chosen < 0) {
            plan.gaps.push_back(i);
            continue;
        }
        plan.steps.push_back(PlanStep{pools[chosen], i - chosen, i, chosen});
        usable.insert(i);
    }
    finish_plan(plan);
    return plan;
}

std::string plan_to_text(const RolloutPlan& plan) {
    std::ostringstream os;
    for (size_t k = 0; k < plan.steps.size(); ++k) {
        const PlanStep& step = plan.steps[k];
        os << (k + 1) << " |";
        for (const IndexPair& p : step.example_pairs) os << " (" << p.first << "," << p.second << ")";
        os << " | " << step.question_in << " | " << step.question_out << "\n";
    }
    if (!plan.gaps.empty()) {
        os << "gaps |";
        for (int64_t g : plan.gaps) os << " " << g;
        os << "\n";
    }
    return os.str();
}

void save_plan(const RolloutPlan& plan, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    out << plan_to_text(plan);
}

std::vector<PlanViolation> check_plan(const RolloutPlan& plan, const std::vector<int64_t>& available) {
    std::vector<PlanViolation> violations;
    std::set<int64_t> usable(available.begin(), available.end());
    std::set<int64_t> predicted;
    int64_t prev_out = INT64_MIN;

    for (size_t k = 0; k < plan.steps.size(); ++k) {
        const PlanStep& step = plan.steps[k];
        const int64_t idx = static_cast<int64_t>(k);
        auto have = [&](int64_t frame) { return usable.count(frame) || predicted.count(frame); };

        for (const IndexPair& p : step.example_pairs) {
            if (p.second - p.first != step.stride) {
                violations.push_back({idx, "example pair stride differs from the question stride"});
            }
            if (!have(p.first)) violations.push_back({idx, "example input frame unavailable"});
            if (!have(p.second)) violations.push_back({idx, "example output frame unavailable"});
        }
        if (step.question_out - step.question_in != step.stride) {
            violations.push_back({idx, "question stride mismatch"});
        }
        if (!have(step.question_in)) violations.push_back({idx, "question input frame unavailable"});
        if (step.question_out <= prev_out) violations.push_back({idx, "question outputs not increasing"});
        prev_out = step.question_out;
        predicted.insert(step.question_out);
    }

    std::set<int64_t> covered(plan.covered.begin(), plan.covered.end());
    if (covered != predicted) violations.push_back({-1, "covered set does not match predicted outputs"});
    for (int64_t g : plan.gaps) {
        if (predicted.count(g)) violations.push_back({-1, "gap index was predicted"});
    }
    return violations;
}

RolloutResult execute(const RolloutPlan& plan, const std::map<int64_t, Frame>& initial_frames,
                      const Predictor& predictor, int64_t min_context) {
    std::map<int64_t, Frame> frames = initial_frames;
    RolloutResult result;

    for (size_t k = 0; k < plan.steps.size(); ++k) {
        const PlanStep& step = plan.steps[k];
        auto frame_at = [&](int64_t index) -> const Frame& {
            auto it = frames.find(index);
            if (it == frames.end()) {
                throw std::runtime_error("rollout step " + std::to_string(k + 1) + " references missing frame " +
                                         std::to_string(index));
            }
            return it->second;
        };

        std::vector<FramePair> context;
        std::vector<Frame> conds;
        context.reserve(step.example_pairs.size());
        for (const IndexPair& p : step.example_pairs) {
            FramePair pair;
            pair.cond = frame_at(p.first);
            pair.qoi = frame_at(p.second);
            conds.push_back(pair.cond);
            context.push_back(std::move(pair));
        }
        const Frame& question = frame_at(step.question_in);

        const PromptStats stats = compute_stats(conds);
        std::vector<FramePair> norm_context;
        norm_context.reserve(context.size());
        for (const FramePair& pair : context) {
            FramePair np;
            np.cond = normalize_frame(pair.cond, stats);
            np.qoi = normalize_frame(pair.qoi, stats);
            norm_context.push_back(std::move(np));
        }
        Frame norm_question = normalize_frame(question, stats);

        Frame norm_pred = predictor(norm_context, norm_question, step);
        Frame pred = denormalize_prediction(norm_pred, stats);
        pred.time_index = step.question_out;
        pred.channel_mask = question.channel_mask;
        pred.dt_record = question.dt_record;

        StepRecord record;
        record.step_index = static_cast<int64_t>(k + 1);
        record.question_in = step.question_in;
        record.question_out = step.question_out;
        record.stride = step.stride;
        record.stats = stats;
        record.low_context = static_cast<int64_t>(context.size()) < min_context;
        result.records.push_back(record);

        frames[step.question_out] = pred;
        result.predictions[step.question_out] = std::move(pred);
    }
    return result;
}

RolloutResult execute(const RolloutPlan& plan, const std::map<int64_t, Frame>& initial_frames,
                      const ModelParams<float>& params) {
    Predictor predictor = [&params](const std::vector<FramePair>& context, const Frame& question,
                                    const PlanStep&) {
        return predict_next(context, question, params).frame;
    };
    return execute(plan, initial_frames, predictor, params.config.min_context);
}

void save_predictions(const std::map<int64_t, Frame>& predictions, double dt_record,
                      const std::filesystem::path& manifest_path) {
    if (predictions.empty()) throw std::invalid_argument("save_predictions: nothing to save");
    const Frame& first = predictions.begin()->second;

    std::vector<int64_t> indices;
    std::vector<uint8_t> payload;
    payload.reserve(predictions.size() * first.values.data.size() * sizeof(float));
    for (const auto& [index, frame] : predictions) {
        indices.push_back(index);
        const size_t at = payload.size();
        payload.resize(at + frame.values.data.size() * sizeof(float));
        std::memcpy(payload.data() + at, frame.values.data.data(), frame.values.data.size() * sizeof(float));
    }

    nlohmann::json j;
    j["format_version"] = 1;
    j["indices"] = indices;
    j["nx"] = first.nx();
    j["ny"] = first.ny();
    j["dt_record"] = dt_record;
    std::vector<bool> mask(first.channel_mask.begin(), first.channel_mask.end());
    j["channel_mask"] = mask;
    j["payload_file"] = manifest_path.stem().string() + ".bin";
    j["payload_sha256"] = sha256_hex(payload);

    write_binary_file(manifest_path.parent_path() / j["payload_file"].get<std::string>(), payload);
    std::ofstream out(manifest_path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + manifest_path.string() + "' for writing");
    out << j.dump(2) << "\n";
}

std::map<int64_t, Frame> load_predictions(const std::filesystem::path& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw std::runtime_error("cannot open '" + manifest_path.string() + "'");
    nlohmann::json j;
    in >> j;
    if (j.at("format_version").get<int64_t>() != 1) {
        throw std::runtime_error("unsupported predictions format version");
    }
    const auto indices = j.at("indices").get<std::vector<int64_t>>();
    const int64_t nx = j.at("nx").get<int64_t>(), ny = j.at("ny").get<int64_t>();
    const double dt_record = j.at("dt_record").get<double>();
    const auto mask_vec = j.at("channel_mask").get<std::vector<bool>>();
    if (mask_vec.size() != kUnionChannels) throw std::runtime_error("predictions manifest channel mismatch");

    const auto payload = read_binary_file(manifest_path.parent_path() / j.at("payload_file").get<std::string>());
    const size_t frame_bytes = static_cast<size_t>(nx * ny * kUnionChannels) * sizeof(float);
    if (payload.size() != frame_bytes * indices.size()) {
        throw std::runtime_error("predictions payload size mismatch");
    }
    if (sha256_hex(payload) != j.at("payload_sha256").get<std::string>()) {
        throw std::runtime_error("predictions payload checksum mismatch");
    }

    std::map<int64_t, Frame> predictions;
    size_t at = 0;
    for (int64_t index : indices) {
        Frame frame = Frame::zeros(nx, ny);
        for (size_t c = 0; c < kUnionChannels; ++c) frame.channel_mask[c] = mask_vec[c];
        frame.time_index = index;
        frame.dt_record = dt_record;
        std::memcpy(frame.values.data.data(), payload.data() + at, frame_bytes);
        at += frame_bytes;
        predictions.emplace(index, std::move(frame));
    }
    return predictions;
}

}  // namespace vicon
