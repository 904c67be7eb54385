#pragma once
// Deterministic preprocessing chain applied per case:
//   stack -> percentile clip -> intensity normalization -> crop to model shape.
// Clipping and normalization operate per channel on nonzero (brain) voxels
// only; background zeros are never modified.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "brainunet/error.hpp"
#include "brainunet/stats.hpp"
#include "brainunet/tensor.hpp"
#include "brainunet/volume.hpp"

namespace brainunet {

/// Collects non-fatal diagnostics (degenerate channels and the like).
struct Warnings {
    std::vector<std::string> messages;
    void add(std::string m) { messages.push_back(std::move(m)); }
};

enum class Normalization { MinMax, ZScore };

struct PreprocessConfig {
    double clip_low = 0.5;
    double clip_high = 99.5;
    Normalization normalization = Normalization::MinMax;
    Dims3 crop = Dims3::cube(128);
    bool crop_enabled = true;
};

inline nlohmann::json to_json(const PreprocessConfig& c) {
    return {{"order", {"stack", "percentile_clip", "normalize", "crop"}},
            {"clip_low", c.clip_low},
            {"clip_high", c.clip_high},
            {"percentile_rule", "nearest_rank"},
            {"normalization", c.normalization == Normalization::MinMax ? "minmax" : "zscore"},
            {"crop", {c.crop.x, c.crop.y, c.crop.z}},
            {"crop_enabled", c.crop_enabled}};
}

inline PreprocessConfig preprocess_config_from_json(const nlohmann::json& j) {
    PreprocessConfig c;
    c.clip_low = j.value("clip_low", c.clip_low);
    c.clip_high = j.value("clip_high", c.clip_high);
    const auto norm = j.value("normalization", std::string("minmax"));
    if (norm == "minmax") {
        c.normalization = Normalization::MinMax;
    } else if (norm == "zscore") {
        c.normalization = Normalization::ZScore;
    } else {
        throw ValueError("unknown normalization '" + norm + "'");
    }
    if (j.contains("crop")) {
        const auto& v = j["crop"];
        c.crop = v.is_array() ? Dims3{v.at(0).get<std::int64_t>(), v.at(1).get<std::int64_t>(), v.at(2).get<std::int64_t>()}
                              : Dims3::cube(v.get<std::int64_t>());
    }
    c.crop_enabled = j.value("crop_enabled", c.crop_enabled);
    return c;
}

namespace preprocess_detail {

inline std::vector<float> nonzero_values(const float* ch, std::int64_t n) {
    std::vector<float> v;
    for (std::int64_t i = 0; i < n; ++i) {
        if (ch[i] != 0.0f) v.push_back(ch[i]);
    }
    return v;
}

}  // namespace preprocess_detail

/// Clamps each channel's nonzero voxels to that channel's [p_lo, p_hi]
/// nearest-rank percentiles. Idempotent at fixed bounds.
inline MultiModalVolume percentile_clip(const MultiModalVolume& vol, double p_lo, double p_hi,
                                        Warnings* warnings = nullptr) {
    if (!(0.0 <= p_lo && p_lo < p_hi && p_hi <= 100.0)) {
        throw ValueError("percentile bounds must satisfy 0 <= p_lo < p_hi <= 100");
    }
    MultiModalVolume out = vol;
    const auto n = vol.data.voxels();
    for (std::int64_t c = 0; c < vol.channels(); ++c) {
        auto values = preprocess_detail::nonzero_values(vol.data.channel(c), n);
        if (values.empty()) {
            if (warnings) warnings->add("percentile_clip: channel " + std::to_string(c) + " is all zeros");
            continue;
        }
        std::sort(values.begin(), values.end());
        const auto lo = static_cast<float>(percentile_sorted<float>(values, p_lo, PercentileRule::NearestRank));
        const auto hi = static_cast<float>(percentile_sorted<float>(values, p_hi, PercentileRule::NearestRank));
        float* ch = out.data.channel(c);
        for (std::int64_t i = 0; i < n; ++i) {
            if (ch[i] != 0.0f) ch[i] = std::clamp(ch[i], lo, hi);
        }
    }
    return out;
}

/// Maps each channel's nonzero voxels affinely to [0,1] (min -> 0, max -> 1),
/// or to zero mean / unit variance with Normalization::ZScore. Degenerate
/// channels (constant nonzero values) map to 0 with a warning.
inline MultiModalVolume normalize(const MultiModalVolume& vol, Normalization mode = Normalization::MinMax,
                                  Warnings* warnings = nullptr) {
    MultiModalVolume out = vol;
    const auto n = vol.data.voxels();
    for (std::int64_t c = 0; c < vol.channels(); ++c) {
        const float* src = vol.data.channel(c);
        float* dst = out.data.channel(c);
        double lo = INFINITY, hi = -INFINITY, sum = 0, sum_sq = 0;
        std::int64_t count = 0;
        for (std::int64_t i = 0; i < n; ++i) {
            if (src[i] == 0.0f) continue;
            lo = std::min<double>(lo, src[i]);
            hi = std::max<double>(hi, src[i]);
            sum += src[i];
            sum_sq += static_cast<double>(src[i]) * src[i];
            ++count;
        }
        if (count == 0) {
            if (warnings) warnings->add("normalize: channel " + std::to_string(c) + " is all zeros");
            continue;
        }
        double offset = lo, scale = hi - lo;
        if (mode == Normalization::ZScore) {
            offset = sum / static_cast<double>(count);
            scale = std::sqrt(std::max(0.0, sum_sq / static_cast<double>(count) - offset * offset));
        }
        if (!(scale > 0)) {
            if (warnings) warnings->add("normalize: channel " + std::to_string(c) + " has constant intensity");
            for (std::int64_t i = 0; i < n; ++i) dst[i] = 0.0f;
            continue;
        }
        for (std::int64_t i = 0; i < n; ++i) {
            if (src[i] != 0.0f) dst[i] = static_cast<float>((src[i] - offset) / scale);
        }
    }
    return out;
}

/// Crop window expressed against a zero-padded copy of the source.
struct CropSpec {
    Dims3 source;                             // original dims
    std::array<std::int64_t, 3> pad_before{};  // zeros inserted before the source on each axis
    Dims3 padded;                             // source dims after padding
    std::array<std::int64_t, 3> start{};      // window origin in padded coordinates
    Dims3 dims;                               // window size

    void validate() const {
        for (int a = 0; a < 3; ++a) {
            if (pad_before[a] < 0 || start[a] < 0 || dims[a] < 1) throw ValueError("invalid crop spec");
            if (padded[a] < source[a] + pad_before[a]) throw ValueError("invalid crop spec: padding");
            if (start[a] + dims[a] > padded[a]) {
                throw ValueError("invalid crop spec: window exceeds padded source on axis " + std::to_string(a));
            }
        }
    }
};

inline nlohmann::json to_json(const CropSpec& s) {
    return {{"source", {s.source.x, s.source.y, s.source.z}},
            {"pad_before", s.pad_before},
            {"padded", {s.padded.x, s.padded.y, s.padded.z}},
            {"start", s.start},
            {"dims", {s.dims.x, s.dims.y, s.dims.z}}};
}

namespace preprocess_detail {

inline CropSpec crop_around(Dims3 source, const std::array<std::int64_t, 3>& lo, const std::array<std::int64_t, 3>& hi,
                            bool has_foreground, Dims3 target) {
    CropSpec spec;
    spec.source = source;
    spec.dims = target;
    for (int a = 0; a < 3; ++a) {
        if (target[a] < 1) throw ValueError("crop target must be positive");
        if (source[a] < target[a]) {
            spec.pad_before[a] = (target[a] - source[a]) / 2;
            spec.padded[a] = target[a];
            spec.start[a] = 0;
            continue;
        }
        spec.padded[a] = source[a];
        const std::int64_t center = has_foreground ? (lo[a] + hi[a] + 1) / 2 : source[a] / 2;
        spec.start[a] = std::clamp<std::int64_t>(center - target[a] / 2, 0, source[a] - target[a]);
    }
    return spec;
}

template <class Pred>
CropSpec crop_from_predicate(Dims3 dims, Dims3 target, Pred is_foreground) {
    std::array<std::int64_t, 3> lo{dims.x, dims.y, dims.z}, hi{-1, -1, -1};
    bool any = false;
    for (std::int64_t i = 0; i < dims.x; ++i) {
        for (std::int64_t j = 0; j < dims.y; ++j) {
            for (std::int64_t k = 0; k < dims.z; ++k) {
                if (!is_foreground(dims.index(i, j, k))) continue;
                any = true;
                lo = {std::min(lo[0], i), std::min(lo[1], j), std::min(lo[2], k)};
                hi = {std::max(hi[0], i), std::max(hi[1], j), std::max(hi[2], k)};
            }
        }
    }
    return crop_around(dims, lo, hi, any, target);
}

}  // namespace preprocess_detail

/// Crop centered on the bounding box of nonzero mask labels.
inline CropSpec compute_crop(const LabelMask& mask, Dims3 target = Dims3::cube(128)) {
    return preprocess_detail::crop_from_predicate(mask.dims, target,
                                                  [&](std::int64_t i) { return mask.voxels[i] != 0; });
}

/// Crop centered on the brain foreground (any channel nonzero).
inline CropSpec compute_crop(const MultiModalVolume& vol, Dims3 target = Dims3::cube(128)) {
    const auto n = vol.data.voxels();
    return preprocess_detail::crop_from_predicate(vol.dims(), target, [&](std::int64_t i) {
        for (std::int64_t c = 0; c < vol.channels(); ++c) {
            if (vol.data[c * n + i] != 0.0f) return true;
        }
        return false;
    });
}

namespace preprocess_detail {

// Copies the window of channel `src` (dims `sd`) into `dst` (dims spec.dims).
template <class T>
void crop_channel(const T* src, T* dst, const CropSpec& spec) {
    const Dims3 sd = spec.source, od = spec.dims;
    for (std::int64_t i = 0; i < od.x; ++i) {
        const std::int64_t si = i + spec.start[0] - spec.pad_before[0];
        for (std::int64_t j = 0; j < od.y; ++j) {
            const std::int64_t sj = j + spec.start[1] - spec.pad_before[1];
            T* out = dst + od.index(i, j, 0);
            if (si < 0 || si >= sd.x || sj < 0 || sj >= sd.y) {
                std::fill(out, out + od.z, T{});
                continue;
            }
            for (std::int64_t k = 0; k < od.z; ++k) {
                const std::int64_t sk = k + spec.start[2] - spec.pad_before[2];
                out[k] = (sk < 0 || sk >= sd.z) ? T{} : src[sd.index(si, sj, sk)];
            }
        }
    }
}

inline Geometry cropped_geometry(const Geometry& g, const CropSpec& spec) {
    return g.translated({spec.start[0] - spec.pad_before[0], spec.start[1] - spec.pad_before[1],
                         spec.start[2] - spec.pad_before[2]});
}

}  // namespace preprocess_detail

inline MultiModalVolume apply_crop(const MultiModalVolume& vol, const CropSpec& spec) {
    spec.validate();
    if (!(vol.dims() == spec.source)) {
        throw ShapeError("crop spec was computed for " + to_string(spec.source) + " but volume is " +
                         to_string(vol.dims()));
    }
    MultiModalVolume out{Tensor<float>(vol.channels(), spec.dims),
                         preprocess_detail::cropped_geometry(vol.geometry, spec)};
    for (std::int64_t c = 0; c < vol.channels(); ++c) {
        preprocess_detail::crop_channel(vol.data.channel(c), out.data.channel(c), spec);
    }
    return out;
}

template <class T>
Image<T> apply_crop(const Image<T>& img, const CropSpec& spec) {
    spec.validate();
    if (!(img.dims == spec.source)) {
        throw ShapeError("crop spec was computed for " + to_string(spec.source) + " but image is " +
                         to_string(img.dims));
    }
    Image<T> out(spec.dims, T{}, preprocess_detail::cropped_geometry(img.geometry, spec));
    preprocess_detail::crop_channel(img.voxels.data(), out.voxels.data(), spec);
    return out;
}

/// Places a crop-sized prediction back into the original grid; voxels outside
/// the window (and any padding) are background.
inline LabelMask restore_prediction(const LabelMask& pred, const CropSpec& spec, Dims3 original_dims,
                                    const Geometry& original_geometry = {}) {
    spec.validate();
    if (!(pred.dims == spec.dims)) {
        throw ShapeError("prediction is " + to_string(pred.dims) + " but crop window is " + to_string(spec.dims));
    }
    if (!(original_dims == spec.source)) {
        throw ShapeError("original dims " + to_string(original_dims) + " do not match crop source " +
                         to_string(spec.source));
    }
    LabelMask out(original_dims, kBackground, original_geometry);
    for (std::int64_t i = 0; i < spec.dims.x; ++i) {
        const std::int64_t si = i + spec.start[0] - spec.pad_before[0];
        if (si < 0 || si >= original_dims.x) continue;
        for (std::int64_t j = 0; j < spec.dims.y; ++j) {
            const std::int64_t sj = j + spec.start[1] - spec.pad_before[1];
            if (sj < 0 || sj >= original_dims.y) continue;
            for (std::int64_t k = 0; k < spec.dims.z; ++k) {
                const std::int64_t sk = k + spec.start[2] - spec.pad_before[2];
                if (sk < 0 || sk >= original_dims.z) continue;
                out(si, sj, sk) = pred(i, j, k);
            }
        }
    }
    return out;
}

/// [K, x, y, z] one-hot tensor of a label map.
template <class T = float>
Tensor<T> one_hot_encode(const LabelMask& mask, int num_classes = kNumClasses) {
    Tensor<T> out(num_classes, mask.dims);
    const auto n = mask.dims.count();
    for (std::int64_t i = 0; i < n; ++i) {
        const int label = mask.voxels[i];
        if (label >= num_classes) {
            throw ValueError("label " + std::to_string(label) + " out of range for " + std::to_string(num_classes) +
                             " classes");
        }
        out[label * n + i] = T(1);
    }
    return out;
}

/// Per-voxel argmax over channels; ties resolve to the lowest label.
template <class T>
LabelMask one_hot_decode(const Tensor<T>& scores, const Geometry& geometry = {}) {
    const Dims3 dims = scores.spatial();
    const auto n = dims.count();
    const auto k = scores.channels();
    if (k > 256) throw ShapeError("too many classes to decode into a uint8 mask");
    LabelMask out(dims, 0, geometry);
    for (std::int64_t i = 0; i < n; ++i) {
        std::int64_t best = 0;
        T best_v = scores[i];
        for (std::int64_t c = 1; c < k; ++c) {
            const T v = scores[c * n + i];
            if (v > best_v) {
                best_v = v;
                best = c;
            }
        }
        out.voxels[i] = static_cast<std::uint8_t>(best);
    }
    return out;
}

struct PreprocessedCase {
    MultiModalVolume volume;
    std::optional<LabelMask> mask;
    std::optional<CropSpec> crop;
};

/// Runs clip -> normalize -> (optional) crop. The crop is centered on the mask
/// when one is given, otherwise on the brain foreground.
inline PreprocessedCase preprocess_case(const MultiModalVolume& vol, const std::optional<LabelMask>& mask,
                                        const PreprocessConfig& config, Warnings* warnings = nullptr) {
    if (mask && !(mask->dims == vol.dims())) {
        throw ShapeError("mask dims " + to_string(mask->dims) + " differ from volume dims " + to_string(vol.dims()));
    }
    PreprocessedCase out;
    out.volume = normalize(percentile_clip(vol, config.clip_low, config.clip_high, warnings), config.normalization,
                           warnings);
    out.mask = mask;
    if (config.crop_enabled) {
        const CropSpec spec = mask ? compute_crop(*mask, config.crop) : compute_crop(out.volume, config.crop);
        out.volume = apply_crop(out.volume, spec);
        if (mask) out.mask = apply_crop(*mask, spec);
        out.crop = spec;
    }
    return out;
}

}  // namespace brainunet
