#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "vicon/frame.hpp"

namespace vicon {

/// Channel-wise normalization statistics of one prompt. Computed from the
/// prompt's condition frames only; sigma is floored at 1e-4.
struct PromptStats {
    std::array<double, kUnionChannels> mu{};
    std::array<double, kUnionChannels> sigma{};

    PromptStats() {
        mu.fill(0.0);
        sigma.fill(1.0);
    }
};

inline constexpr double kSigmaFloor = 1e-4;

struct FramePair {
    Frame cond;
    Frame qoi;
};

/// Ordered condition/QoI pairs sharing one operator: one trajectory, one stride.
struct PromptSequence {
    std::vector<FramePair> pairs;
    int64_t stride = 1;
    ChannelMask channel_mask{};
    PromptStats stats;
};

PromptStats compute_stats(const std::vector<Frame>& conds);

Frame normalize_frame(const Frame& frame, const PromptStats& stats);
Frame denormalize_prediction(const Frame& pred, const PromptStats& stats);

/// Normalize every condition and QoI with one set of stats; fills prompt.stats.
PromptSequence normalize_prompt(const PromptSequence& prompt, const PromptStats& stats);

}  // namespace vicon
