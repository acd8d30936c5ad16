#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "vicon/dataio.hpp"
#include "vicon/metrics.hpp"
#include "vicon/rng.hpp"

using namespace vicon;

namespace {

Frame random_frame(int64_t nx, int64_t ny, const ChannelMask& mask, Rng& rng) {
    Frame f = Frame::zeros(nx, ny);
    f.channel_mask = mask;
    for (int64_t c = 0; c < kUnionChannels; ++c) {
        if (!mask[static_cast<size_t>(c)]) continue;
        for (int64_t i = 0; i < nx; ++i) {
            for (int64_t j = 0; j < ny; ++j) f.values.at3(i, j, c) = static_cast<float>(rng.normal());
        }
    }
    return f;
}

std::array<double, kUnionChannels> unit_sigma() {
    std::array<double, kUnionChannels> s;
    s.fill(1.0);
    return s;
}

// direct loop oracle over every valid element
double rms_oracle(const Frame& pred, const Frame& gt, const std::array<double, kUnionChannels>& sigma,
                  const ChannelMask& mask) {
    double acc = 0;
    int64_t n = 0;
    for (int64_t c = 0; c < kUnionChannels; ++c) {
        if (!mask[static_cast<size_t>(c)] || c == kNodeType) continue;
        for (int64_t i = 0; i < pred.nx(); ++i) {
            for (int64_t j = 0; j < pred.ny(); ++j) {
                const double d =
                    (static_cast<double>(pred.values.at3(i, j, c)) - gt.values.at3(i, j, c)) /
                    sigma[static_cast<size_t>(c)];
                acc += d * d;
                ++n;
            }
        }
    }
    return std::sqrt(acc / static_cast<double>(n));
}

}  // namespace

TEST_CASE("exact predictions have zero error") {
    Rng rng(1);
    ChannelMask mask{};
    mask[kVelocityX] = mask[kScalarField] = true;
    Frame f = random_frame(4, 4, mask, rng);
    CHECK(rel_l2(f, f, unit_sigma(), mask) == 0.0);
    CHECK(abs_l2(f, f, mask) == 0.0);
}

TEST_CASE("a one-sigma offset on a single channel matches the loop oracle") {
    Rng rng(2);
    ChannelMask mask{};
    mask[kVelocityX] = mask[kScalarField] = true;
    Frame gt = random_frame(4, 4, mask, rng);
    std::array<double, kUnionChannels> sigma = unit_sigma();
    sigma[kVelocityX] = 0.5;
    sigma[kScalarField] = 2.0;
    Frame pred = gt;
    for (int64_t i = 0; i < 4; ++i) {
        for (int64_t j = 0; j < 4; ++j) {
            pred.values.at3(i, j, kVelocityX) += static_cast<float>(sigma[kVelocityX]);
        }
    }
    const double got = rel_l2(pred, gt, sigma, mask);
    CHECK(got == doctest::Approx(rms_oracle(pred, gt, sigma, mask)).epsilon(1e-9));
    // half of the valid elements are off by exactly one sigma
    CHECK(got == doctest::Approx(std::sqrt(0.5)).epsilon(1e-4));
}

TEST_CASE("rescaling prediction, truth and sigma together leaves rel_l2 unchanged") {
    Rng rng(3);
    ChannelMask mask{};
    mask[kPressure] = true;
    Frame gt = random_frame(6, 6, mask, rng);
    Frame pred = random_frame(6, 6, mask, rng);
    std::array<double, kUnionChannels> sigma = unit_sigma();
    sigma[kPressure] = 1.7;
    const double base = rel_l2(pred, gt, sigma, mask);

    const double a = 37.5;
    Frame gt2 = gt, pred2 = pred;
    for (auto& v : gt2.values.data) v *= static_cast<float>(a);
    for (auto& v : pred2.values.data) v *= static_cast<float>(a);
    std::array<double, kUnionChannels> sigma2 = sigma;
    sigma2[kPressure] *= a;
    CHECK(rel_l2(pred2, gt2, sigma2, mask) == doctest::Approx(base).epsilon(1e-6));
}

TEST_CASE("rel_l2 with unit sigma equals abs_l2 exactly") {
    Rng rng(4);
    ChannelMask mask{};
    mask[kVelocityX] = mask[kVelocityY] = mask[kScalarField] = true;
    Frame gt = random_frame(8, 8, mask, rng);
    Frame pred = random_frame(8, 8, mask, rng);
    CHECK(rel_l2(pred, gt, unit_sigma(), mask) == abs_l2(pred, gt, mask));
}

TEST_CASE("abs_l2 is linear in a uniform error and matches a hand 2x2 case") {
    ChannelMask mask{};
    mask[kScalarField] = true;
    Frame gt = Frame::zeros(2, 2);
    gt.channel_mask = mask;
    Frame pred = gt;
    pred.values.at3(0, 0, kScalarField) = 2.0f;
    pred.values.at3(1, 1, kScalarField) = -2.0f;
    // two of four elements off by 2: sqrt(8/4)
    CHECK(abs_l2(pred, gt, mask) == doctest::Approx(std::sqrt(2.0)));

    Frame uniform = gt;
    for (int64_t i = 0; i < 2; ++i) {
        for (int64_t j = 0; j < 2; ++j) uniform.values.at3(i, j, kScalarField) = 0.3f;
    }
    const double e1 = abs_l2(uniform, gt, mask);
    for (auto& v : uniform.values.data) v *= 3.0f;
    CHECK(abs_l2(uniform, gt, mask) == doctest::Approx(3.0 * e1).epsilon(1e-6));
}

TEST_CASE("node-type and masked channels never contribute") {
    ChannelMask mask{};
    mask[kScalarField] = true;
    mask[kNodeType] = true;
    Frame gt = Frame::zeros(2, 2);
    gt.channel_mask = mask;
    Frame pred = gt;
    for (int64_t i = 0; i < 2; ++i) {
        for (int64_t j = 0; j < 2; ++j) {
            pred.values.at3(i, j, kNodeType) = 1.0f;   // differs, must not count
            pred.values.at3(i, j, kPressure) = 9.0f;   // masked off, must not count
        }
    }
    CHECK(abs_l2(pred, gt, mask) == 0.0);
}

TEST_CASE("shape mismatches are rejected") {
    ChannelMask mask{};
    mask[kScalarField] = true;
    Frame a = Frame::zeros(2, 2);
    a.channel_mask = mask;
    Frame b = Frame::zeros(2, 4);
    b.channel_mask = mask;
    CHECK_THROWS_AS(abs_l2(a, b, mask), std::invalid_argument);
    CHECK_THROWS_AS(rel_l2(a, b, unit_sigma(), mask), std::invalid_argument);
}

TEST_CASE("a constant velocity series carries zero turbulence kinetic energy") {
    ChannelMask mask{};
    mask[kVelocityX] = mask[kVelocityY] = true;
    std::vector<Frame> series;
    for (int t = 0; t < 4; ++t) {
        Frame f = Frame::zeros(3, 3);
        f.channel_mask = mask;
        for (auto c : {kVelocityX, kVelocityY}) {
            for (int64_t i = 0; i < 3; ++i) {
                for (int64_t j = 0; j < 3; ++j) f.values.at3(i, j, c) = 0.7f;
            }
        }
        series.push_back(f);
    }
    std::vector<Frame> zeros(series.size(), [&] {
        Frame f = Frame::zeros(3, 3);
        f.channel_mask = mask;
        return f;
    }());
    CHECK(tke_mae(series, zeros) == doctest::Approx(0.0));
}

TEST_CASE("a two-frame plus/minus-one series has TKE one half everywhere") {
    ChannelMask mask{};
    mask[kVelocityX] = mask[kVelocityY] = true;
    std::vector<Frame> swing, still;
    for (int t = 0; t < 2; ++t) {
        Frame f = Frame::zeros(2, 2);
        f.channel_mask = mask;
        for (int64_t i = 0; i < 2; ++i) {
            for (int64_t j = 0; j < 2; ++j) f.values.at3(i, j, kVelocityX) = (t == 0 ? -1.0f : 1.0f);
        }
        swing.push_back(f);
        Frame z = Frame::zeros(2, 2);
        z.channel_mask = mask;
        still.push_back(z);
    }
    // TKE(swing) = 0.5 per point, TKE(still) = 0
    CHECK(tke_mae(swing, still) == doctest::Approx(0.5));
    CHECK(tke_mae(swing, swing) == doctest::Approx(0.0));
}

TEST_CASE("TKE is exactly invariant to a constant velocity offset") {
    // dyadic values and a power-of-two series length keep every mean and
    // difference exact in floating point, so the equality is bitwise
    Rng rng(7);
    ChannelMask mask{};
    mask[kVelocityX] = mask[kVelocityY] = true;
    auto dyadic_frame = [&] {
        Frame f = Frame::zeros(4, 4);
        f.channel_mask = mask;
        for (auto c : {kVelocityX, kVelocityY}) {
            for (int64_t i = 0; i < 4; ++i) {
                for (int64_t j = 0; j < 4; ++j) {
                    f.values.at3(i, j, c) = static_cast<float>(rng.randint(-16, 16)) / 4.0f;
                }
            }
        }
        return f;
    };
    std::vector<Frame> a, b, a_off, b_off;
    for (int t = 0; t < 4; ++t) {
        a.push_back(dyadic_frame());
        b.push_back(dyadic_frame());
    }
    a_off = a;
    b_off = b;
    for (auto* series : {&a_off, &b_off}) {
        for (Frame& f : *series) {
            for (int64_t i = 0; i < 4; ++i) {
                for (int64_t j = 0; j < 4; ++j) {
                    f.values.at3(i, j, kVelocityX) += 8.0f;
                    f.values.at3(i, j, kVelocityY) -= 4.0f;
                }
            }
        }
    }
    CHECK(tke_mae(a, b) == tke_mae(a_off, b_off));
}

TEST_CASE("missing velocity channels are an error") {
    ChannelMask mask{};
    mask[kScalarField] = true;
    std::vector<Frame> series(2, [&] {
        Frame f = Frame::zeros(2, 2);
        f.channel_mask = mask;
        return f;
    }());
    CHECK_THROWS_WITH_AS(tke_mae(series, series), doctest::Contains("velocity"), std::invalid_argument);
}

TEST_CASE("perfect rollout evaluation is all zeros") {
    Trajectory traj = gen_advection(8, 8, 0.25, 0.0, 0.5, 16, 5);
    std::map<int64_t, Frame> preds;
    for (int64_t i = 10; i < 16; ++i) preds[i] = traj.frames[static_cast<size_t>(i)];
    MetricsReport report = evaluate_rollout(preds, traj, 10);
    REQUIRE(report.per_step.size() == 6);
    for (const auto& sm : report.per_step) {
        CHECK(sm.rel_l2 == 0.0);
        CHECK(sm.abs_l2 == 0.0);
    }
    CHECK(*report.step1 == 0.0);
    CHECK(*report.step5 == 0.0);
    CHECK_FALSE(report.step10.has_value());
    CHECK(*report.last == 0.0);
    CHECK(*report.all_avg == 0.0);
    REQUIRE(report.tke.has_value());
    CHECK(*report.tke == doctest::Approx(0.0));
    CHECK(report.gap_frames.empty());
}

TEST_CASE("a constant-error stub yields aggregates equal to that constant") {
    Trajectory traj = gen_heat(8, 8, 0.1, 0.1, 22, 6);
    std::map<int64_t, Frame> preds;
    for (int64_t i = 10; i < 22; ++i) {
        Frame f = traj.frames[static_cast<size_t>(i)];
        for (int64_t x = 0; x < 8; ++x) {
            for (int64_t y = 0; y < 8; ++y) {
                f.values.at3(x, y, kScalarField) += 0.125f;
            }
        }
        preds[i] = f;
    }
    MetricsReport report = evaluate_rollout(preds, traj, 10);
    REQUIRE(report.per_step.size() == 12);
    const double expected = 0.125 / report.sigma_gt[kScalarField];
    CHECK(*report.step1 == doctest::Approx(expected).epsilon(1e-4));
    CHECK(*report.step10 == doctest::Approx(expected).epsilon(1e-4));
    CHECK(*report.last == doctest::Approx(expected).epsilon(1e-4));
    CHECK(*report.all_avg == doctest::Approx(expected).epsilon(1e-4));
    CHECK(*report.abs_all_avg == doctest::Approx(0.125).epsilon(1e-4));
}

TEST_CASE("randomized evaluation matches the loop oracle and recomputes aggregates") {
    Rng rng(9);
    Trajectory traj = gen_heat(8, 8, 0.1, 0.1, 18, 8);
    std::map<int64_t, Frame> preds;
    for (int64_t i = 10; i < 18; ++i) {
        Frame f = traj.frames[static_cast<size_t>(i)];
        for (auto& v : f.values.data) v += static_cast<float>(0.05 * rng.normal());
        preds[i] = f;
    }
    MetricsReport report = evaluate_rollout(preds, traj, 10);
    double sum = 0;
    for (const auto& sm : report.per_step) {
        const Frame& gt = traj.frames[static_cast<size_t>(sm.frame_index)];
        CHECK(sm.rel_l2 ==
              doctest::Approx(rms_oracle(preds.at(sm.frame_index), gt, report.sigma_gt, traj.channel_mask))
                  .epsilon(1e-9));
        sum += sm.rel_l2;
    }
    CHECK(*report.all_avg == doctest::Approx(sum / static_cast<double>(report.per_step.size())).epsilon(1e-12));
    CHECK(*report.last == doctest::Approx(report.per_step.back().rel_l2));
}

TEST_CASE("reports round trip through files and missing steps appear as gaps") {
    Trajectory traj = gen_heat(8, 8, 0.1, 0.1, 16, 10);
    std::map<int64_t, Frame> preds;
    for (int64_t i : {10, 11, 13, 15}) preds[i] = traj.frames[static_cast<size_t>(i)];
    MetricsReport report = evaluate_rollout(preds, traj, 10);
    CHECK(report.gap_frames == std::vector<int64_t>{12, 14});

    const auto dir = std::filesystem::temp_directory_path() / "vicon_metrics_test";
    std::filesystem::create_directories(dir);
    save_report(report, dir / "report.json");
    MetricsReport loaded = load_report(dir / "report.json");
    CHECK(loaded.per_step.size() == report.per_step.size());
    CHECK(loaded.gap_frames == report.gap_frames);
    CHECK(*loaded.all_avg == doctest::Approx(*report.all_avg));
    CHECK(loaded.sigma_gt == report.sigma_gt);

    plot_report(loaded, dir / "curve.bmp");
    CHECK(std::filesystem::file_size(dir / "curve.bmp") > 1000);
}
