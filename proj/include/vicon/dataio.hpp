#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "vicon/frame.hpp"
#include "vicon/prompt.hpp"
#include "vicon/rng.hpp"

namespace vicon {

/// One recorded PDE solution: frames at a uniform recording interval.
struct Trajectory {
    std::vector<Frame> frames;
    double dt_record = 0.0;
    std::string pde_tag;
    std::map<std::string, double> pde_params;
    uint64_t seed = 0;
    ChannelMask channel_mask{};

    int64_t nt() const { return static_cast<int64_t>(frames.size()); }
    int64_t nx() const { return frames.at(0).nx(); }
    int64_t ny() const { return frames.at(0).ny(); }
};

struct FourierMode {
    int64_t kx = 0;
    int64_t ky = 0;
    double amplitude = 0.0;
    double phase = 0.0;
};

/// Band-limited random modes with amplitudes damped by 1/(1+|k|^2).
std::vector<FourierMode> random_band_limited_modes(int64_t k_max, Rng& rng);

/// Heat equation on a periodic [0,2pi)^2 domain, evolved by the exact spectral
/// solution: mode (kx,ky) decays by exp(-nu*(kx^2+ky^2)*t*dt) at frame t.
/// The field lives in the union scalar channel.
Trajectory gen_heat(int64_t nx, int64_t ny, double nu, double dt, int64_t nt, uint64_t seed);
Trajectory gen_heat_from_modes(int64_t nx, int64_t ny, double nu, double dt, int64_t nt,
                               const std::vector<FourierMode>& modes, double mean_level);

/// Constant-velocity advection on a periodic unit square: frame t is the
/// initial field shifted by t*(vx*dt*nx, vy*dt*ny) cells, evaluated exactly
/// from the Fourier synthesis (integer shifts reduce to a roll). The velocity
/// channels carry the constants (vx, vy); the scalar channel is transported.
Trajectory gen_advection(int64_t nx, int64_t ny, double vx, double vy, double dt, int64_t nt, uint64_t seed);
Trajectory gen_advection_from_modes(int64_t nx, int64_t ny, double vx, double vy, double dt, int64_t nt,
                                    const std::vector<FourierMode>& modes, double mean_level);

/// Draw a stride uniformly from the feasible strides <= s_max, then draw
/// num_pairs condition indices without replacement from the valid range.
PromptSequence sample_prompt(const Trajectory& traj, int64_t num_pairs, int64_t s_max, Rng& rng);

struct TrajectoryMeta {
    int64_t format_version = 1;
    std::string pde_tag;
    std::map<std::string, double> pde_params;
    int64_t nx = 0;
    int64_t ny = 0;
    int64_t nt = 0;
    double dt_record = 0.0;
    uint64_t seed = 0;
    std::vector<std::string> channel_order;
    ChannelMask channel_mask{};
    std::string payload_file;
    std::string payload_sha256;
};

/// Writes `<path>` (JSON manifest) plus a raw float32 payload next to it,
/// layout [nt][nx][ny][7] row-major with no header.
void save_trajectory(const Trajectory& traj, const std::filesystem::path& manifest_path);
Trajectory load_trajectory(const std::filesystem::path& manifest_path);
TrajectoryMeta load_trajectory_manifest(const std::filesystem::path& manifest_path);

}  // namespace vicon
