#pragma once
// Whole-volume prediction (sliding window or single center crop) and the
// per-case timing benchmark.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "brainunet/error.hpp"
#include "brainunet/manifest.hpp"
#include "brainunet/model.hpp"
#include "brainunet/nifti.hpp"
#include "brainunet/preprocess.hpp"

namespace brainunet {

enum class Blending { Uniform, Gaussian };

struct SlidingWindowSpec {
    Dims3 patch = Dims3::cube(128);
    double overlap = 0.5;
    Blending blending = Blending::Gaussian;

    void validate(const ModelConfig& model) const {
        if (!(overlap >= 0.0 && overlap < 1.0)) throw ValueError("overlap must lie in [0, 1)");
        model.check_input(patch);
    }
};

/// Start offsets of windows along one axis: evenly spaced, first at 0 and
/// last flush with the end, with step at most patch * (1 - overlap).
inline std::vector<std::int64_t> window_starts(std::int64_t size, std::int64_t patch, double overlap) {
    if (size <= patch) return {0};
    const double step = static_cast<double>(patch) * (1.0 - overlap);
    const auto n = static_cast<std::int64_t>(std::ceil(static_cast<double>(size - patch) / step)) + 1;
    std::vector<std::int64_t> out(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        out[i] = static_cast<std::int64_t>(std::llround(static_cast<double>(i * (size - patch)) / static_cast<double>(n - 1)));
    }
    return out;
}

/// Per-voxel window weights. Gaussian weights use sigma = patch / 8 per axis,
/// peak 1, and are rounded to multiples of 2^-20 (at least 2^-20).
inline std::vector<double> window_weights(Dims3 patch, Blending blending) {
    std::vector<double> w(static_cast<std::size_t>(patch.count()), 1.0);
    if (blending == Blending::Uniform) return w;
    std::array<std::vector<double>, 3> axis;
    for (int a = 0; a < 3; ++a) {
        const auto n = patch[a];
        const double c = (static_cast<double>(n) - 1) / 2, sigma = static_cast<double>(n) / 8;
        axis[a].resize(static_cast<std::size_t>(n));
        for (std::int64_t i = 0; i < n; ++i) {
            const double t = (static_cast<double>(i) - c) / sigma;
            axis[a][i] = std::exp(-0.5 * t * t);
        }
        const double peak = *std::max_element(axis[a].begin(), axis[a].end());
        for (auto& v : axis[a]) v /= peak;
    }
    constexpr double q = 1048576.0;
    for (std::int64_t x = 0; x < patch.x; ++x)
        for (std::int64_t y = 0; y < patch.y; ++y)
            for (std::int64_t z = 0; z < patch.z; ++z) {
                const double v = axis[0][x] * axis[1][y] * axis[2][z];
                w[patch.index(x, y, z)] = std::max(1.0, std::round(v * q)) / q;
            }
    return w;
}

struct SlidingWindowResult {
    LabelMask mask;
    int windows = 0;
    std::vector<double> weight_sum;  // accumulated blending weight per voxel of the input grid
    Tensor<float> probabilities;     // normalized, only when requested
};

/// Covers the (zero-padded) volume with patch-sized windows, blends the
/// per-window class probabilities and takes the per-voxel argmax (lowest
/// class index on ties). The output has the input's dims and geometry.
inline SlidingWindowResult sliding_window_predict(BrainUNet<float>& model, const MultiModalVolume& vol,
                                                  const SlidingWindowSpec& spec = {}, bool keep_probabilities = false) {
    spec.validate(model.config());
    if (vol.channels() != model.config().in_channels) {
        throw ShapeError("volume has " + std::to_string(vol.channels()) + " channels, model expects " +
                         std::to_string(model.config().in_channels));
    }
    const Dims3 d = vol.dims();
    const Dims3 pd{std::max(d.x, spec.patch.x), std::max(d.y, spec.patch.y), std::max(d.z, spec.patch.z)};
    const Dims3 before{(pd.x - d.x) / 2, (pd.y - d.y) / 2, (pd.z - d.z) / 2};
    const auto classes = model.config().out_classes;
    const auto channels = vol.channels();

    std::array<std::vector<std::int64_t>, 3> starts;
    for (int a = 0; a < 3; ++a) starts[a] = window_starts(pd[a], spec.patch[a], spec.overlap);
    const auto weights = window_weights(spec.patch, spec.blending);

    // Accumulators over the original grid only; padded voxels are dropped.
    std::vector<double> acc(static_cast<std::size_t>(classes * d.count()), 0.0);
    std::vector<double> wsum(static_cast<std::size_t>(d.count()), 0.0);
    const Dims3 p = spec.patch;
    int windows = 0;
    for (auto sx : starts[0])
        for (auto sy : starts[1])
            for (auto sz : starts[2]) {
                Tensor<float> patch(channels, p);
                for (std::int64_t c = 0; c < channels; ++c) {
                    const float* src = vol.data.channel(c);
                    float* dst = patch.channel(c);
                    for (std::int64_t x = 0; x < p.x; ++x) {
                        const std::int64_t ox = sx + x - before.x;
                        if (ox < 0 || ox >= d.x) continue;
                        for (std::int64_t y = 0; y < p.y; ++y) {
                            const std::int64_t oy = sy + y - before.y;
                            if (oy < 0 || oy >= d.y) continue;
                            for (std::int64_t z = 0; z < p.z; ++z) {
                                const std::int64_t oz = sz + z - before.z;
                                if (oz >= 0 && oz < d.z) dst[p.index(x, y, z)] = src[d.index(ox, oy, oz)];
                            }
                        }
                    }
                }
                const auto probs = model.forward(patch, NormMode{false, false});
                ++windows;
                for (std::int64_t x = 0; x < p.x; ++x) {
                    const std::int64_t ox = sx + x - before.x;
                    if (ox < 0 || ox >= d.x) continue;
                    for (std::int64_t y = 0; y < p.y; ++y) {
                        const std::int64_t oy = sy + y - before.y;
                        if (oy < 0 || oy >= d.y) continue;
                        for (std::int64_t z = 0; z < p.z; ++z) {
                            const std::int64_t oz = sz + z - before.z;
                            if (oz < 0 || oz >= d.z) continue;
                            const auto pi = p.index(x, y, z), oi = d.index(ox, oy, oz);
                            const double w = weights[pi];
                            wsum[oi] += w;
                            for (std::int64_t c = 0; c < classes; ++c) {
                                acc[c * d.count() + oi] += w * static_cast<double>(probs[c * p.count() + pi]);
                            }
                        }
                    }
                }
            }

    SlidingWindowResult r;
    r.windows = windows;
    r.mask = LabelMask(d, 0, vol.geometry);
    const auto n = d.count();
    for (std::int64_t i = 0; i < n; ++i) {
        std::int64_t best = 0;
        for (std::int64_t c = 1; c < classes; ++c) {
            if (acc[c * n + i] > acc[best * n + i]) best = c;
        }
        r.mask.voxels[i] = static_cast<std::uint8_t>(best);
    }
    if (keep_probabilities) {
        r.probabilities = Tensor<float>(classes, d);
        for (std::int64_t c = 0; c < classes; ++c)
            for (std::int64_t i = 0; i < n; ++i) r.probabilities[c * n + i] = static_cast<float>(acc[c * n + i] / wsum[i]);
    }
    r.weight_sum = std::move(wsum);
    return r;
}

enum class PredictMode { SlidingWindow, Crop };

inline const char* mode_name(PredictMode m) { return m == PredictMode::SlidingWindow ? "sliding" : "crop"; }
inline PredictMode parse_mode(const std::string& s) {
    if (s == "sliding" || s == "sliding-window") return PredictMode::SlidingWindow;
    if (s == "crop") return PredictMode::Crop;
    throw ValueError("unknown prediction mode '" + s + "' (expected sliding or crop)");
}

struct PredictOptions {
    PredictMode mode = PredictMode::SlidingWindow;
    SlidingWindowSpec window;
    PreprocessConfig preprocess;  // crop settings are ignored; crop mode uses window.patch
};

/// Single forward pass on a foreground-centered crop, mapped back onto the
/// full grid (background outside the crop).
inline LabelMask crop_predict(BrainUNet<float>& model, const MultiModalVolume& vol, Dims3 patch) {
    model.config().check_input(patch);
    const auto spec = compute_crop(vol, patch);
    const auto cropped = apply_crop(vol, spec);
    const auto probs = model.forward(cropped.data, NormMode{false, false});
    return restore_prediction(one_hot_decode(probs), spec, vol.dims(), vol.geometry);
}

/// Raw (un-normalized) multimodal volume -> label mask on the same grid.
inline LabelMask predict_volume(BrainUNet<float>& model, const MultiModalVolume& raw, const PredictOptions& opt) {
    PreprocessConfig pc = opt.preprocess;
    pc.crop_enabled = false;
    const auto pre = preprocess_case(raw, std::nullopt, pc);
    if (opt.mode == PredictMode::Crop) return crop_predict(model, pre.volume, opt.window.patch);
    return sliding_window_predict(model, pre.volume, opt.window).mask;
}

struct TimingRow {
    std::string case_id;
    std::string device;
    double seconds = 0;
};

struct TimingColumn {
    const char* device;
    const char* header;
};

/// Columns of the timing table after "Case ID", in table order.
inline const std::array<TimingColumn, 2> kTimingColumns{{{"GPU", "GPU (P100) Time (s)"}, {"CPU", "CPU Time (s)"}}};

struct TimingReport {
    std::string device;
    std::string mode;
    std::vector<TimingRow> rows;
    double average() const {
        if (rows.empty()) throw ValueError("empty timing report");
        double s = 0;
        for (const auto& r : rows) s += r.seconds;
        return s / static_cast<double>(rows.size());
    }
};

/// Header "Case ID,GPU (P100) Time (s),CPU Time (s)", one row per case and an
/// "Average" row. Columns for devices that were not measured hold "NA".
inline void write_timing_csv(std::ostream& os, const TimingReport& report) {
    auto fmt = [](double v) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.2f", v);
        return std::string(buf);
    };
    os << "Case ID";
    for (const auto& col : kTimingColumns) os << ',' << col.header;
    os << '\n';
    auto row = [&](const std::string& label, double v) {
        os << label;
        for (const auto& col : kTimingColumns) os << ',' << (report.device == col.device ? fmt(v) : std::string("NA"));
        os << '\n';
    };
    for (const auto& r : report.rows) row(r.case_id, r.seconds);
    row("Average", report.average());
}

inline nlohmann::json timing_json(const TimingReport& report) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : report.rows) rows.push_back({{"case_id", r.case_id}, {"seconds", r.seconds}});
    return {{"device", report.device},
            {"mode", report.mode},
            {"measured_span", "load -> preprocess -> predict -> save"},
            {"rows", rows},
            {"average_seconds", report.average()}};
}

/// Wall-clock time of the full per-case path (load NIfTI, preprocess,
/// predict, save the mask as <out_dir>/<case_id>_pred.nii.gz).
inline TimingReport benchmark_inference(const std::vector<CaseRecord>& cases, BrainUNet<float>& model,
                                        const std::string& device, const PredictOptions& opt,
                                        const std::filesystem::path& out_dir) {
    if (cases.empty()) throw ValueError("benchmark needs at least one case");
    std::filesystem::create_directories(out_dir);
    TimingReport report;
    report.device = device;
    report.mode = mode_name(opt.mode);
    for (const auto& c : cases) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto raw = load_case_volume(c);
        const auto mask = predict_volume(model, raw, opt);
        save_mask(mask, out_dir / (c.case_id + "_pred.nii.gz"));
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        report.rows.push_back({c.case_id, device, s});
    }
    return report;
}

}  // namespace brainunet
