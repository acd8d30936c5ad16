#include "vicon/prompt.hpp"

#include <cmath>
#include <stdexcept>

namespace vicon {

PromptStats compute_stats(const std::vector<Frame>& conds) {
    if (conds.empty()) throw std::invalid_argument("compute_stats: no condition frames");

    PromptStats stats;
    const ChannelMask& mask = conds.front().channel_mask;
    const int64_t per_frame = conds.front().nx() * conds.front().ny();
    const double n = static_cast<double>(per_frame * static_cast<int64_t>(conds.size()));

    for (int64_t c = 0; c < kUnionChannels; ++c) {
        if (!mask[static_cast<size_t>(c)]) continue;
        double sum = 0.0;
        for (const Frame& f : conds) {
            for (int64_t i = 0; i < f.nx(); ++i) {
                for (int64_t j = 0; j < f.ny(); ++j) sum += f.values.at3(i, j, c);
            }
        }
        const double mu = sum / n;
        double sq = 0.0;
        for (const Frame& f : conds) {
            for (int64_t i = 0; i < f.nx(); ++i) {
                for (int64_t j = 0; j < f.ny(); ++j) {
                    const double d = f.values.at3(i, j, c) - mu;
                    sq += d * d;
                }
            }
        }
        stats.mu[static_cast<size_t>(c)] = mu;
        stats.sigma[static_cast<size_t>(c)] = std::max(std::sqrt(sq / n), kSigmaFloor);
    }
    return stats;
}

namespace {

Frame affine_per_channel(const Frame& frame, const PromptStats& stats, bool forward) {
    Frame out = frame;
    for (int64_t c = 0; c < kUnionChannels; ++c) {
        if (!frame.channel_mask[static_cast<size_t>(c)]) continue;
        const double mu = stats.mu[static_cast<size_t>(c)];
        const double sigma = stats.sigma[static_cast<size_t>(c)];
        for (int64_t i = 0; i < frame.nx(); ++i) {
            for (int64_t j = 0; j < frame.ny(); ++j) {
                const double x = frame.values.at3(i, j, c);
                out.values.at3(i, j, c) =
                    static_cast<float>(forward ? (x - mu) / sigma : x * sigma + mu);
            }
        }
    }
    return out;
}

}  // namespace

Frame normalize_frame(const Frame& frame, const PromptStats& stats) {
    return affine_per_channel(frame, stats, true);
}

Frame denormalize_prediction(const Frame& pred, const PromptStats& stats) {
    return affine_per_channel(pred, stats, false);
}

PromptSequence normalize_prompt(const PromptSequence& prompt, const PromptStats& stats) {
    PromptSequence out = prompt;
    out.stats = stats;
    for (FramePair& pair : out.pairs) {
        pair.cond = normalize_frame(pair.cond, stats);
        pair.qoi = normalize_frame(pair.qoi, stats);
    }
    return out;
}

}  // namespace vicon
