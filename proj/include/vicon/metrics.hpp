#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vicon/dataio.hpp"
#include "vicon/frame.hpp"

namespace vicon {

/// Std-scaled RMS error over valid channels and space. sigma_gt must be
/// floored at 1e-4; the node-type channel never contributes.
double rel_l2(const Frame& pred, const Frame& gt, const std::array<double, kUnionChannels>& sigma_gt,
              const ChannelMask& mask);

/// Unscaled RMS error over valid channels and space.
double abs_l2(const Frame& pred, const Frame& gt, const ChannelMask& mask);

/// Mean absolute difference of the turbulence kinetic energy fields
/// 0.5*(mean_t(u_x'^2) + mean_t(u_y'^2)) of two series.
double tke_mae(const std::vector<Frame>& pred_series, const std::vector<Frame>& gt_series);

struct StepMetrics {
    int64_t step = 0;         // 1-based rollout step
    int64_t frame_index = 0;  // trajectory frame the step predicts
    double abs_l2 = 0.0;
    double rel_l2 = 0.0;
};

struct MetricsReport {
    std::vector<StepMetrics> per_step;
    std::optional<double> step1;
    std::optional<double> step5;
    std::optional<double> step10;
    std::optional<double> last;
    std::optional<double> all_avg;
    std::optional<double> abs_all_avg;
    std::optional<double> tke;
    std::vector<int64_t> gap_frames;
    int64_t first_pred_index = 0;
    std::array<double, kUnionChannels> sigma_gt{};

    nlohmann::json to_json() const;
    static MetricsReport from_json(const nlohmann::json& j);
};

/// Per-step and aggregate errors of a rollout against ground truth, from the
/// first predicted frame on. Aggregates use the std-scaled relative error;
/// sigma comes from the ground-truth rollout frames of this trajectory.
MetricsReport evaluate_rollout(const std::map<int64_t, Frame>& predictions, const Trajectory& ground_truth,
                               int64_t first_pred_index = 10);

void save_report(const MetricsReport& report, const std::filesystem::path& path);
MetricsReport load_report(const std::filesystem::path& path);

/// Render per-step error curves into an uncompressed BMP image.
void plot_report(const MetricsReport& report, const std::filesystem::path& image_path);

}  // namespace vicon
