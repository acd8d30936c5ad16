#include "vicon/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "vicon/serialize.hpp"

namespace vicon {

// Default spectral band for the random generators; smooth fields keep the
// desk-scale in-context task well posed at small patch sizes.
inline constexpr int64_t kDefaultBandLimit = 2;

std::vector<FourierMode> random_band_limited_modes(int64_t k_max, Rng& rng) {
    std::vector<FourierMode> modes;
    for (int64_t kx = 0; kx <= k_max; ++kx) {
        for (int64_t ky = (kx == 0 ? 1 : -k_max); ky <= k_max; ++ky) {
            FourierMode m;
            m.kx = kx;
            m.ky = ky;
            const double damp = 1.0 / (1.0 + static_cast<double>(kx * kx + ky * ky));
            m.amplitude = damp * rng.normal();
            m.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
            modes.push_back(m);
        }
    }
    return modes;
}

namespace {

// Sample sum of cosine modes at continuous grid fractions (fx, fy) in [0,1).
double synth_modes(const std::vector<FourierMode>& modes, double mean_level, double fx, double fy,
                   const std::vector<double>& decay) {
    double value = mean_level;
    for (size_t m = 0; m < modes.size(); ++m) {
        const FourierMode& mode = modes[m];
        const double angle =
            2.0 * std::numbers::pi * (static_cast<double>(mode.kx) * fx + static_cast<double>(mode.ky) * fy) +
            mode.phase;
        value += decay[m] * mode.amplitude * std::cos(angle);
    }
    return value;
}

}  // namespace

Trajectory gen_heat_from_modes(int64_t nx, int64_t ny, double nu, double dt, int64_t nt,
                               const std::vector<FourierMode>& modes, double mean_level) {
    if (nu <= 0.0) throw std::invalid_argument("gen_heat: nu must be positive");
    if (nx < 1 || ny < 1 || nt < 1) throw std::invalid_argument("gen_heat: grid and frame counts must be positive");

    Trajectory traj;
    traj.dt_record = dt;
    traj.pde_tag = "heat";
    traj.pde_params = {{"nu", nu}};
    traj.channel_mask[kScalarField] = true;

    std::vector<double> decay(modes.size());
    for (int64_t t = 0; t < nt; ++t) {
        for (size_t m = 0; m < modes.size(); ++m) {
            const double k2 = static_cast<double>(modes[m].kx * modes[m].kx + modes[m].ky * modes[m].ky);
            decay[m] = std::exp(-nu * k2 * static_cast<double>(t) * dt);
        }
        Frame frame = Frame::zeros(nx, ny);
        frame.channel_mask = traj.channel_mask;
        frame.time_index = t;
        frame.dt_record = dt;
        for (int64_t i = 0; i < nx; ++i) {
            for (int64_t j = 0; j < ny; ++j) {
                const double v = synth_modes(modes, mean_level, static_cast<double>(i) / static_cast<double>(nx),
                                             static_cast<double>(j) / static_cast<double>(ny), decay);
                frame.values.at3(i, j, kScalarField) = static_cast<float>(v);
            }
        }
        traj.frames.push_back(std::move(frame));
    }
    return traj;
}

Trajectory gen_heat(int64_t nx, int64_t ny, double nu, double dt, int64_t nt, uint64_t seed) {
    Rng rng(seed);
    const auto modes = random_band_limited_modes(kDefaultBandLimit, rng);
    const double mean_level = 0.5 * rng.normal();
    Trajectory traj = gen_heat_from_modes(nx, ny, nu, dt, nt, modes, mean_level);
    traj.seed = seed;
    traj.pde_params["k_max"] = static_cast<double>(kDefaultBandLimit);
    return traj;
}

Trajectory gen_advection_from_modes(int64_t nx, int64_t ny, double vx, double vy, double dt, int64_t nt,
                                    const std::vector<FourierMode>& modes, double mean_level) {
    if (nx < 1 || ny < 1 || nt < 1) {
        throw std::invalid_argument("gen_advection: grid and frame counts must be positive");
    }

    Trajectory traj;
    traj.dt_record = dt;
    traj.pde_tag = "advection";
    traj.pde_params = {{"vx", vx}, {"vy", vy}};
    traj.channel_mask[kVelocityX] = true;
    traj.channel_mask[kVelocityY] = true;
    traj.channel_mask[kScalarField] = true;

    const std::vector<double> no_decay(modes.size(), 1.0);
    for (int64_t t = 0; t < nt; ++t) {
        // Transported field: u(x, t) = u0(x - v t), evaluated exactly.
        const double shift_x = vx * dt * static_cast<double>(t);
        const double shift_y = vy * dt * static_cast<double>(t);
        Frame frame = Frame::zeros(nx, ny);
        frame.channel_mask = traj.channel_mask;
        frame.time_index = t;
        frame.dt_record = dt;
        for (int64_t i = 0; i < nx; ++i) {
            for (int64_t j = 0; j < ny; ++j) {
                const double fx = static_cast<double>(i) / static_cast<double>(nx) - shift_x;
                const double fy = static_cast<double>(j) / static_cast<double>(ny) - shift_y;
                frame.values.at3(i, j, kScalarField) =
                    static_cast<float>(synth_modes(modes, mean_level, fx, fy, no_decay));
                frame.values.at3(i, j, kVelocityX) = static_cast<float>(vx);
                frame.values.at3(i, j, kVelocityY) = static_cast<float>(vy);
            }
        }
        traj.frames.push_back(std::move(frame));
    }
    return traj;
}

Trajectory gen_advection(int64_t nx, int64_t ny, double vx, double vy, double dt, int64_t nt, uint64_t seed) {
    Rng rng(seed);
    const auto modes = random_band_limited_modes(kDefaultBandLimit, rng);
    const double mean_level = 0.5 * rng.normal();
    Trajectory traj = gen_advection_from_modes(nx, ny, vx, vy, dt, nt, modes, mean_level);
    traj.seed = seed;
    traj.pde_params["k_max"] = static_cast<double>(kDefaultBandLimit);
    return traj;
}

PromptSequence sample_prompt(const Trajectory& traj, int64_t num_pairs, int64_t s_max, Rng& rng) {
    if (num_pairs < 1) throw std::invalid_argument("sample_prompt: need at least one pair");
    std::vector<int64_t> feasible;
    for (int64_t s = 1; s <= s_max; ++s) {
        if (traj.nt() - s >= num_pairs) feasible.push_back(s);
    }
    if (feasible.empty()) {
        throw std::runtime_error("sample_prompt: no feasible stride for nt=" + std::to_string(traj.nt()) +
                                 ", pairs=" + std::to_string(num_pairs) + ", s_max=" + std::to_string(s_max));
    }
    const int64_t stride = feasible[static_cast<size_t>(rng.randint(0, static_cast<int64_t>(feasible.size()) - 1))];

    // condition start indices, distinct, uniform over [0, nt-1-stride]
    std::vector<int64_t> candidates(static_cast<size_t>(traj.nt() - stride));
    for (size_t i = 0; i < candidates.size(); ++i) candidates[i] = static_cast<int64_t>(i);
    for (int64_t i = 0; i < num_pairs; ++i) {
        const int64_t j = rng.randint(i, static_cast<int64_t>(candidates.size()) - 1);
        std::swap(candidates[static_cast<size_t>(i)], candidates[static_cast<size_t>(j)]);
    }
    candidates.resize(static_cast<size_t>(num_pairs));

    PromptSequence prompt;
    prompt.stride = stride;
    prompt.channel_mask = traj.channel_mask;
    for (int64_t start : candidates) {
        FramePair pair;
        pair.cond = traj.frames[static_cast<size_t>(start)];
        pair.qoi = traj.frames[static_cast<size_t>(start + stride)];
        prompt.pairs.push_back(std::move(pair));
    }
    return prompt;
}

// ---------------------------------------------------------------------------
// trajectory container
// ---------------------------------------------------------------------------

namespace {

nlohmann::json meta_to_json(const TrajectoryMeta& meta) {
    nlohmann::json j;
    j["format_version"] = meta.format_version;
    j["pde_tag"] = meta.pde_tag;
    j["pde_params"] = meta.pde_params;
    j["nx"] = meta.nx;
    j["ny"] = meta.ny;
    j["nt"] = meta.nt;
    j["dt_record"] = meta.dt_record;
    j["seed"] = meta.seed;
    j["channel_order"] = meta.channel_order;
    std::vector<bool> mask(meta.channel_mask.begin(), meta.channel_mask.end());
    j["channel_mask"] = mask;
    j["payload_file"] = meta.payload_file;
    j["payload_sha256"] = meta.payload_sha256;
    return j;
}

TrajectoryMeta meta_from_json(const nlohmann::json& j) {
    TrajectoryMeta meta;
    meta.format_version = j.at("format_version").get<int64_t>();
    if (meta.format_version != 1) {
        throw std::runtime_error("unsupported trajectory format version " +
                                 std::to_string(meta.format_version));
    }
    meta.pde_tag = j.at("pde_tag").get<std::string>();
    meta.pde_params = j.at("pde_params").get<std::map<std::string, double>>();
    meta.nx = j.at("nx").get<int64_t>();
    meta.ny = j.at("ny").get<int64_t>();
    meta.nt = j.at("nt").get<int64_t>();
    meta.dt_record = j.at("dt_record").get<double>();
    meta.seed = j.at("seed").get<uint64_t>();
    meta.channel_order = j.at("channel_order").get<std::vector<std::string>>();
    const auto mask = j.at("channel_mask").get<std::vector<bool>>();
    if (mask.size() != kUnionChannels || meta.channel_order.size() != kUnionChannels) {
        throw std::runtime_error("trajectory manifest channel layout mismatch");
    }
    for (size_t i = 0; i < kUnionChannels; ++i) meta.channel_mask[i] = mask[i];
    meta.payload_file = j.at("payload_file").get<std::string>();
    meta.payload_sha256 = j.at("payload_sha256").get<std::string>();
    if (meta.nx < 1 || meta.ny < 1 || meta.nt < 1) {
        throw std::runtime_error("trajectory manifest has non-positive shape");
    }
    return meta;
}

}  // namespace

void save_trajectory(const Trajectory& traj, const std::filesystem::path& manifest_path) {
    if (traj.frames.empty()) throw std::invalid_argument("save_trajectory: empty trajectory");

    std::vector<uint8_t> payload(static_cast<size_t>(traj.nt() * traj.nx() * traj.ny() * kUnionChannels) *
                                 sizeof(float));
    size_t at = 0;
    for (const Frame& f : traj.frames) {
        const size_t bytes = f.values.data.size() * sizeof(float);
        std::memcpy(payload.data() + at, f.values.data.data(), bytes);
        at += bytes;
    }

    TrajectoryMeta meta;
    meta.pde_tag = traj.pde_tag;
    meta.pde_params = traj.pde_params;
    meta.nx = traj.nx();
    meta.ny = traj.ny();
    meta.nt = traj.nt();
    meta.dt_record = traj.dt_record;
    meta.seed = traj.seed;
    meta.channel_order.assign(union_channel_names().begin(), union_channel_names().end());
    meta.channel_mask = traj.channel_mask;
    meta.payload_file = manifest_path.stem().string() + ".bin";
    meta.payload_sha256 = sha256_hex(payload);

    write_binary_file(manifest_path.parent_path() / meta.payload_file, payload);
    std::ofstream out(manifest_path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + manifest_path.string() + "' for writing");
    out << meta_to_json(meta).dump(2) << "\n";
}

TrajectoryMeta load_trajectory_manifest(const std::filesystem::path& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw std::runtime_error("cannot open '" + manifest_path.string() + "'");
    nlohmann::json j;
    in >> j;
    return meta_from_json(j);
}

Trajectory load_trajectory(const std::filesystem::path& manifest_path) {
    const TrajectoryMeta meta = load_trajectory_manifest(manifest_path);
    const auto payload_path = manifest_path.parent_path() / meta.payload_file;
    const std::vector<uint8_t> payload = read_binary_file(payload_path);

    const size_t expected =
        static_cast<size_t>(meta.nt * meta.nx * meta.ny * kUnionChannels) * sizeof(float);
    if (payload.size() < expected) {
        throw std::runtime_error("truncated payload '" + payload_path.string() + "': " +
                                 std::to_string(payload.size()) + " bytes, expected " + std::to_string(expected));
    }
    if (payload.size() > expected) {
        throw std::runtime_error("payload size mismatch for shape [" + std::to_string(meta.nt) + "," +
                                 std::to_string(meta.nx) + "," + std::to_string(meta.ny) + "," +
                                 std::to_string(kUnionChannels) + "]");
    }
    if (sha256_hex(payload) != meta.payload_sha256) {
        throw std::runtime_error("payload checksum mismatch for '" + payload_path.string() + "'");
    }

    Trajectory traj;
    traj.dt_record = meta.dt_record;
    traj.pde_tag = meta.pde_tag;
    traj.pde_params = meta.pde_params;
    traj.seed = meta.seed;
    traj.channel_mask = meta.channel_mask;
    size_t at = 0;
    for (int64_t t = 0; t < meta.nt; ++t) {
        Frame frame = Frame::zeros(meta.nx, meta.ny);
        frame.channel_mask = meta.channel_mask;
        frame.time_index = t;
        frame.dt_record = meta.dt_record;
        const size_t bytes = frame.values.data.size() * sizeof(float);
        std::memcpy(frame.values.data.data(), payload.data() + at, bytes);
        at += bytes;
        traj.frames.push_back(std::move(frame));
    }
    return traj;
}

}  // namespace vicon
