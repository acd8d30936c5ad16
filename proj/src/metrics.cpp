#include "vicon/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "vicon/prompt.hpp"
#include "vicon/serialize.hpp"

namespace vicon {

namespace {

void require_matching(const Frame& pred, const Frame& gt, const char* op) {
    if (pred.values.shape != gt.values.shape) {
        throw std::invalid_argument(std::string(op) + " shape mismatch " + shape_str(pred.values.shape) +
                                    " vs " + shape_str(gt.values.shape));
    }
}

double rms_error(const Frame& pred, const Frame& gt, const std::array<double, kUnionChannels>* sigma,
                 const ChannelMask& mask) {
    double acc = 0.0;
    int64_t count = 0;
    for (int64_t c = 0; c < kUnionChannels; ++c) {
        if (!mask[static_cast<size_t>(c)] || c == kNodeType) continue;
        const double s = sigma ? (*sigma)[static_cast<size_t>(c)] : 1.0;
        for (int64_t i = 0; i < pred.nx(); ++i) {
            for (int64_t j = 0; j < pred.ny(); ++j) {
                const double d = (static_cast<double>(pred.values.at3(i, j, c)) - gt.values.at3(i, j, c)) / s;
                acc += d * d;
                ++count;
            }
        }
    }
    if (count == 0) throw std::invalid_argument("error metric: no valid channels to compare");
    return std::sqrt(acc / static_cast<double>(count));
}

}  // namespace

double rel_l2(const Frame& pred, const Frame& gt, const std::array<double, kUnionChannels>& sigma_gt,
              const ChannelMask& mask) {
    require_matching(pred, gt, "rel_l2");
    return rms_error(pred, gt, &sigma_gt, mask);
}

double abs_l2(const Frame& pred, const Frame& gt, const ChannelMask& mask) {
    require_matching(pred, gt, "abs_l2");
    return rms_error(pred, gt, nullptr, mask);
}

namespace {

// TKE field 0.5*(mean_t(ux'^2) + mean_t(uy'^2)) per grid point.
Tensor<double> tke_field(const std::vector<Frame>& series) {
    const int64_t nx = series.front().nx(), ny = series.front().ny();
    const double n = static_cast<double>(series.size());
    Tensor<double> mean_x({nx, ny}), mean_y({nx, ny});
    for (const Frame& f : series) {
        for (int64_t i = 0; i < nx; ++i) {
            for (int64_t j = 0; j < ny; ++j) {
                mean_x.at2(i, j) += f.values.at3(i, j, kVelocityX) / n;
                mean_y.at2(i, j) += f.values.at3(i, j, kVelocityY) / n;
            }
        }
    }
    Tensor<double> tke({nx, ny});
    for (const Frame& f : series) {
        for (int64_t i = 0; i < nx; ++i) {
            for (int64_t j = 0; j < ny; ++j) {
                const double dx = f.values.at3(i, j, kVelocityX) - mean_x.at2(i, j);
                const double dy = f.values.at3(i, j, kVelocityY) - mean_y.at2(i, j);
                tke.at2(i, j) += 0.5 * (dx * dx + dy * dy) / n;
            }
        }
    }
    return tke;
}

}  // namespace

double tke_mae(const std::vector<Frame>& pred_series, const std::vector<Frame>& gt_series) {
    if (pred_series.size() != gt_series.size() || pred_series.size() < 2) {
        throw std::invalid_argument("tke_mae: need two aligned series of at least two frames");
    }
    for (const auto* series : {&pred_series, &gt_series}) {
        if (!series->front().channel_mask[kVelocityX] || !series->front().channel_mask[kVelocityY]) {
            throw std::invalid_argument("tke_mae: velocity channels missing");
        }
    }
    const Tensor<double> pred_tke = tke_field(pred_series);
    const Tensor<double> gt_tke = tke_field(gt_series);
    double acc = 0.0;
    for (size_t i = 0; i < pred_tke.data.size(); ++i) acc += std::abs(pred_tke.data[i] - gt_tke.data[i]);
    return acc / static_cast<double>(pred_tke.data.size());
}

MetricsReport evaluate_rollout(const std::map<int64_t, Frame>& predictions, const Trajectory& ground_truth,
                               int64_t first_pred_index) {
    if (first_pred_index < 0 || first_pred_index >= ground_truth.nt()) {
        throw std::invalid_argument("evaluate_rollout: first predicted index outside the trajectory");
    }

    MetricsReport report;
    report.first_pred_index = first_pred_index;

    // sigma over the ground-truth rollout frames of this trajectory
    std::vector<Frame> rollout_gt(ground_truth.frames.begin() + first_pred_index, ground_truth.frames.end());
    const PromptStats stats = compute_stats(rollout_gt);
    report.sigma_gt.fill(1.0);
    for (int64_t c = 0; c < kUnionChannels; ++c) {
        if (ground_truth.channel_mask[static_cast<size_t>(c)]) {
            report.sigma_gt[static_cast<size_t>(c)] = stats.sigma[static_cast<size_t>(c)];
        }
    }

    std::vector<Frame> pred_series, gt_series;
    for (int64_t index = first_pred_index; index < ground_truth.nt(); ++index) {
        const int64_t step = index - first_pred_index + 1;
        auto it = predictions.find(index);
        if (it == predictions.end()) {
            report.gap_frames.push_back(index);
            continue;
        }
        const Frame& gt = ground_truth.frames[static_cast<size_t>(index)];
        StepMetrics sm;
        sm.step = step;
        sm.frame_index = index;
        sm.abs_l2 = abs_l2(it->second, gt, ground_truth.channel_mask);
        sm.rel_l2 = rel_l2(it->second, gt, report.sigma_gt, ground_truth.channel_mask);
        report.per_step.push_back(sm);
        pred_series.push_back(it->second);
        gt_series.push_back(gt);
    }

    auto rel_at_step = [&](int64_t step) -> std::optional<double> {
        for (const StepMetrics& sm : report.per_step) {
            if (sm.step == step) return sm.rel_l2;
        }
        return std::nullopt;
    };
    report.step1 = rel_at_step(1);
    report.step5 = rel_at_step(5);
    report.step10 = rel_at_step(10);
    if (!report.per_step.empty()) {
        report.last = report.per_step.back().rel_l2;
        double rel_sum = 0.0, abs_sum = 0.0;
        for (const StepMetrics& sm : report.per_step) {
            rel_sum += sm.rel_l2;
            abs_sum += sm.abs_l2;
        }
        report.all_avg = rel_sum / static_cast<double>(report.per_step.size());
        report.abs_all_avg = abs_sum / static_cast<double>(report.per_step.size());
    }
    if (ground_truth.channel_mask[kVelocityX] && ground_truth.channel_mask[kVelocityY] &&
        pred_series.size() >= 2) {
        report.tke = tke_mae(pred_series, gt_series);
    }
    return report;
}

// ---------------------------------------------------------------------------
// report files
// ---------------------------------------------------------------------------

nlohmann::json MetricsReport::to_json() const {
    nlohmann::json j;
    j["first_pred_index"] = first_pred_index;
    j["sigma_gt"] = sigma_gt;
    j["gap_frames"] = gap_frames;
    j["per_step"] = nlohmann::json::array();
    for (const StepMetrics& sm : per_step) {
        j["per_step"].push_back({{"step", sm.step},
                                 {"frame_index", sm.frame_index},
                                 {"abs_l2", sm.abs_l2},
                                 {"rel_l2", sm.rel_l2}});
    }
    auto put = [&](const char* key, const std::optional<double>& v) {
        if (v) {
            j["aggregates"][key] = *v;
        } else {
            j["aggregates"][key] = nullptr;
        }
    };
    put("step1", step1);
    put("step5", step5);
    put("step10", step10);
    put("last", last);
    put("all_avg", all_avg);
    put("abs_all_avg", abs_all_avg);
    put("tke_mae", tke);
    return j;
}

MetricsReport MetricsReport::from_json(const nlohmann::json& j) {
    MetricsReport report;
    report.first_pred_index = j.at("first_pred_index").get<int64_t>();
    const auto sig = j.at("sigma_gt").get<std::vector<double>>();
    if (sig.size() != kUnionChannels) throw std::runtime_error("metrics report: bad sigma length");
    std::copy(sig.begin(), sig.end(), report.sigma_gt.begin());
    report.gap_frames = j.at("gap_frames").get<std::vector<int64_t>>();
    for (const auto& e : j.at("per_step")) {
        StepMetrics sm;
        sm.step = e.at("step").get<int64_t>();
        sm.frame_index = e.at("frame_index").get<int64_t>();
        sm.abs_l2 = e.at("abs_l2").get<double>();
        sm.rel_l2 = e.at("rel_l2").get<double>();
        report.per_step.push_back(sm);
    }
    auto get = [&](const char* key) -> std::optional<double> {
        const auto& v = j.at("aggregates").at(key);
        if (v.is_null()) return std::nullopt;
        return v.get<double>();
    };
    report.step1 = get("step1");
    report.step5 = get("step5");
    report.step10 = get("step10");
    report.last = get("last");
    report.all_avg = get("all_avg");
    report.abs_all_avg = get("abs_all_avg");
    report.tke = get("tke_mae");
    return report;
}

void save_report(const MetricsReport& report, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    out << report.to_json().dump(2) << "\n";
}

MetricsReport load_report(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
    nlohmann::json j;
    in >> j;
    return MetricsReport::from_json(j);
}

// ---------------------------------------------------------------------------
// plotting
// ---------------------------------------------------------------------------

namespace {

struct Canvas {
    int64_t width, height;
    std::vector<uint8_t> rgb;  // row-major, bottom-up not required; BMP writer flips

    Canvas(int64_t w, int64_t h) : width(w), height(h), rgb(static_cast<size_t>(w * h * 3), 255) {}

    void put(int64_t x, int64_t y, uint8_t r, uint8_t g, uint8_t b) {
        if (x < 0 || x >= width || y < 0 || y >= height) return;
        const size_t at = static_cast<size_t>((y * width + x) * 3);
        rgb[at] = r;
        rgb[at + 1] = g;
        rgb[at + 2] = b;
    }

    void line(int64_t x0, int64_t y0, int64_t x1, int64_t y1, uint8_t r, uint8_t g, uint8_t b) {
        const int64_t dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
        const int64_t sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
        int64_t err = dx + dy;
        while (true) {
            put(x0, y0, r, g, b);
            if (x0 == x1 && y0 == y1) break;
            const int64_t e2 = 2 * err;
            if (e2 >= dy) {
                err += dy;
                x0 += sx;
            }
            if (e2 <= dx) {
                err += dx;
                y0 += sy;
            }
        }
    }
};

void write_bmp(const Canvas& canvas, const std::filesystem::path& path) {
    const int64_t w = canvas.width, h = canvas.height;
    const int64_t row_bytes = (3 * w + 3) / 4 * 4;
    const int64_t data_size = row_bytes * h;
    const int64_t file_size = 54 + data_size;

    std::vector<uint8_t> out;
    out.reserve(static_cast<size_t>(file_size));
    auto put16 = [&](uint32_t v) {
        out.push_back(static_cast<uint8_t>(v));
        out.push_back(static_cast<uint8_t>(v >> 8));
    };
    auto put32 = [&](uint32_t v) {
        for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
    };
    out.push_back('B');
    out.push_back('M');
    put32(static_cast<uint32_t>(file_size));
    put32(0);
    put32(54);
    put32(40);
    put32(static_cast<uint32_t>(w));
    put32(static_cast<uint32_t>(h));
    put16(1);
    put16(24);
    put32(0);
    put32(static_cast<uint32_t>(data_size));
    put32(2835);
    put32(2835);
    put32(0);
    put32(0);
    for (int64_t y = h - 1; y >= 0; --y) {  // BMP rows bottom-up
        for (int64_t x = 0; x < w; ++x) {
            const size_t at = static_cast<size_t>((y * w + x) * 3);
            out.push_back(canvas.rgb[at + 2]);
            out.push_back(canvas.rgb[at + 1]);
            out.push_back(canvas.rgb[at]);
        }
        for (int64_t pad = 3 * w; pad < row_bytes; ++pad) out.push_back(0);
    }
    write_binary_file(path, out);
}

}  // namespace

void plot_report(const MetricsReport& report, const std::filesystem::path& image_path) {
    const int64_t width = 640, height = 400, margin = 40;
    Canvas canvas(width, height);

    canvas.line(margin, height - margin, width - margin / 2, height - margin, 0, 0, 0);
    canvas.line(margin, height - margin, margin, margin / 2, 0, 0, 0);

    if (!report.per_step.empty()) {
        double max_rel = 1e-12, max_abs = 1e-12;
        int64_t max_step = 1;
        for (const StepMetrics& sm : report.per_step) {
            max_rel = std::max(max_rel, sm.rel_l2);
            max_abs = std::max(max_abs, sm.abs_l2);
            max_step = std::max(max_step, sm.step);
        }
        auto x_of = [&](int64_t step) {
            return margin + (width - margin - margin / 2) * (step - 1) / std::max<int64_t>(max_step - 1, 1);
        };
        auto y_of = [&](double v, double vmax) {
            return height - margin - static_cast<int64_t>((height - margin - margin / 2) * (v / vmax));
        };
        for (size_t k = 1; k < report.per_step.size(); ++k) {
            const auto& a = report.per_step[k - 1];
            const auto& b = report.per_step[k];
            canvas.line(x_of(a.step), y_of(a.rel_l2, max_rel), x_of(b.step), y_of(b.rel_l2, max_rel), 200, 40, 40);
            canvas.line(x_of(a.step), y_of(a.abs_l2, max_abs), x_of(b.step), y_of(b.abs_l2, max_abs), 40, 40, 200);
        }
        for (const StepMetrics& sm : report.per_step) {
            canvas.put(x_of(sm.step), y_of(sm.rel_l2, max_rel), 200, 40, 40);
        }
    }
    write_bmp(canvas, image_path);
}

}  // namespace vicon
