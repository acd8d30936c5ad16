#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "vicon/tensor.hpp"

namespace vicon {

// Unified channel layout shared by all datasets. Order is fixed; per-dataset
// validity is carried by a channel mask.
inline constexpr int64_t kUnionChannels = 7;
inline constexpr int64_t kDensity = 0;
inline constexpr int64_t kVelocityX = 1;
inline constexpr int64_t kVelocityY = 2;
inline constexpr int64_t kPressure = 3;
inline constexpr int64_t kVorticity = 4;
inline constexpr int64_t kScalarField = 5;
inline constexpr int64_t kNodeType = 6;

inline const std::array<std::string, kUnionChannels>& union_channel_names() {
    static const std::array<std::string, kUnionChannels> names = {
        "density", "velocity_x", "velocity_y", "pressure", "vorticity", "scalar", "node_type"};
    return names;
}

using ChannelMask = std::array<bool, kUnionChannels>;

/// One discretized solution snapshot on a [nx, ny] grid with union channels.
struct Frame {
    Tensor<float> values;  // [nx, ny, kUnionChannels]
    ChannelMask channel_mask{};
    int64_t time_index = 0;
    double dt_record = 0.0;

    int64_t nx() const { return values.shape.at(0); }
    int64_t ny() const { return values.shape.at(1); }

    static Frame zeros(int64_t nx, int64_t ny) {
        Frame f;
        f.values = Tensor<float>({nx, ny, kUnionChannels});
        return f;
    }
};

/// Map dataset-specific channels into union slots. dataset_channel_ids[j] is
/// the union slot receiving raw channel j; unlisted slots stay zero with a
/// false mask.
Frame to_union_channels(const Tensor<float>& raw, const std::vector<int64_t>& dataset_channel_ids);

}  // namespace vicon
