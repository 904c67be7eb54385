#pragma once
// Training-time augmentation. All randomness comes from a caller-owned RNG;
// there is no global generator.
//
// Pipeline order: flip -> scale -> gamma -> motion -> ghosting, each gated by
// its probability. A probability of exactly 0 or 1 consumes no gate draw.

#include <array>
#include <cmath>
#include <complex>
#include <numbers>
#include <random>
#include <utility>

#include <nlohmann/json.hpp>

#include "brainunet/error.hpp"
#include "brainunet/fft.hpp"
#include "brainunet/volume.hpp"

namespace brainunet {

using Rng = std::mt19937_64;

struct AugmentConfig {
    double p_flip = 0.5;
    double p_scale = 0.5;
    double p_gamma = 0.5;
    double p_motion = 0.5;
    double p_ghosting = 0.5;
    std::array<double, 2> scale_range{0.9, 1.1};
    std::array<double, 2> gamma_range{0.8, 1.2};
    double motion_severity = 0.3;
    double ghost_intensity = 0.3;
    int ghost_count = 4;
    int phase_axis = 1;
    std::uint64_t seed = 0;

    void validate() const {
        for (double p : {p_flip, p_scale, p_gamma, p_motion, p_ghosting}) {
            if (!(p >= 0.0 && p <= 1.0)) throw ValueError("augmentation probabilities must lie in [0,1]");
        }
        if (!(scale_range[0] > 0 && scale_range[0] <= scale_range[1])) throw ValueError("invalid scale range");
        if (!(gamma_range[0] > 0 && gamma_range[0] <= gamma_range[1])) throw ValueError("invalid gamma range");
        if (!(motion_severity >= 0 && motion_severity <= 1)) throw ValueError("motion severity must lie in [0,1]");
        if (!(ghost_intensity >= 0 && ghost_intensity <= 1)) throw ValueError("ghost intensity must lie in [0,1]");
        if (ghost_count < 0) throw ValueError("ghost count must be non-negative");
        if (phase_axis < 0 || phase_axis > 2) throw ValueError("phase axis must be 0, 1 or 2");
    }

    /// Every transform disabled.
    static AugmentConfig none() {
        AugmentConfig c;
        c.p_flip = c.p_scale = c.p_gamma = c.p_motion = c.p_ghosting = 0.0;
        return c;
    }
};

inline nlohmann::json to_json(const AugmentConfig& c) {
    return {{"order", {"flip", "scale", "gamma", "motion", "ghosting"}},
            {"p_flip", c.p_flip},
            {"p_scale", c.p_scale},
            {"p_gamma", c.p_gamma},
            {"p_motion", c.p_motion},
            {"p_ghosting", c.p_ghosting},
            {"scale_range", c.scale_range},
            {"gamma_range", c.gamma_range},
            {"motion_severity", c.motion_severity},
            {"ghost_intensity", c.ghost_intensity},
            {"ghost_count", c.ghost_count},
            {"phase_axis", c.phase_axis},
            {"seed", c.seed}};
}

inline AugmentConfig augment_config_from_json(const nlohmann::json& j) {
    AugmentConfig c;
    c.p_flip = j.value("p_flip", c.p_flip);
    c.p_scale = j.value("p_scale", c.p_scale);
    c.p_gamma = j.value("p_gamma", c.p_gamma);
    c.p_motion = j.value("p_motion", c.p_motion);
    c.p_ghosting = j.value("p_ghosting", c.p_ghosting);
    c.scale_range = j.value("scale_range", c.scale_range);
    c.gamma_range = j.value("gamma_range", c.gamma_range);
    c.motion_severity = j.value("motion_severity", c.motion_severity);
    c.ghost_intensity = j.value("ghost_intensity", c.ghost_intensity);
    c.ghost_count = j.value("ghost_count", c.ghost_count);
    c.phase_axis = j.value("phase_axis", c.phase_axis);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
}

struct Augmented {
    MultiModalVolume volume;
    LabelMask mask;
};

namespace augment_detail {

inline void check_pair(const MultiModalVolume& vol, const LabelMask& mask) {
    if (!(vol.dims() == mask.dims)) {
        throw ShapeError("volume " + to_string(vol.dims()) + " and mask " + to_string(mask.dims) + " differ");
    }
}

inline double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

inline bool gate(Rng& rng, double p) {
    if (p <= 0.0) return false;
    if (p >= 1.0) return true;
    return uniform(rng, 0.0, 1.0) < p;
}

template <class T>
void flip_buffer(T* data, Dims3 d, int axis) {
    for (std::int64_t i = 0; i < d.x; ++i) {
        for (std::int64_t j = 0; j < d.y; ++j) {
            for (std::int64_t k = 0; k < d.z; ++k) {
                std::int64_t fi = i, fj = j, fk = k;
                if (axis == 0) {
                    if (i >= d.x - 1 - i) continue;
                    fi = d.x - 1 - i;
                } else if (axis == 1) {
                    if (j >= d.y - 1 - j) continue;
                    fj = d.y - 1 - j;
                } else {
                    if (k >= d.z - 1 - k) continue;
                    fk = d.z - 1 - k;
                }
                std::swap(data[d.index(i, j, k)], data[d.index(fi, fj, fk)]);
            }
        }
    }
}

}  // namespace augment_detail

/// Mirrors volume and mask along one spatial axis.
inline Augmented flip_axis(const MultiModalVolume& vol, const LabelMask& mask, int axis) {
    augment_detail::check_pair(vol, mask);
    if (axis < 0 || axis > 2) throw ValueError("flip axis must be 0, 1 or 2");
    Augmented out{vol, mask};
    const Dims3 d = vol.dims();
    for (std::int64_t c = 0; c < vol.channels(); ++c) augment_detail::flip_buffer(out.volume.data.channel(c), d, axis);
    augment_detail::flip_buffer(out.mask.voxels.data(), d, axis);
    return out;
}

/// Flips each axis independently with probability 1/2 (one draw per axis).
inline Augmented random_flip(const MultiModalVolume& vol, const LabelMask& mask, Rng& rng) {
    augment_detail::check_pair(vol, mask);
    Augmented out{vol, mask};
    for (int axis = 0; axis < 3; ++axis) {
        if (std::bernoulli_distribution(0.5)(rng)) out = flip_axis(out.volume, out.mask, axis);
    }
    return out;
}

/// Zooms about the volume center by `factor` (> 1 enlarges). Intensities use
/// trilinear interpolation, the mask nearest neighbour; samples falling
/// outside the source are zero. Output dims equal input dims.
inline Augmented scale_volume(const MultiModalVolume& vol, const LabelMask& mask, double factor) {
    augment_detail::check_pair(vol, mask);
    if (!(factor > 0)) throw ValueError("scale factor must be positive");
    const Dims3 d = vol.dims();
    Augmented out{MultiModalVolume{Tensor<float>(vol.channels(), d), vol.geometry}, LabelMask(d, 0, mask.geometry)};
    const std::array<double, 3> center{(d.x - 1) / 2.0, (d.y - 1) / 2.0, (d.z - 1) / 2.0};
    const auto n = d.count();
    for (std::int64_t i = 0; i < d.x; ++i) {
        for (std::int64_t j = 0; j < d.y; ++j) {
            for (std::int64_t k = 0; k < d.z; ++k) {
                const std::array<double, 3> src{center[0] + (static_cast<double>(i) - center[0]) / factor,
                                                center[1] + (static_cast<double>(j) - center[1]) / factor,
                                                center[2] + (static_cast<double>(k) - center[2]) / factor};
                const auto dst = d.index(i, j, k);
                // Nearest neighbour for labels.
                const std::int64_t ni = std::llround(src[0]), nj = std::llround(src[1]), nk = std::llround(src[2]);
                if (ni >= 0 && ni < d.x && nj >= 0 && nj < d.y && nk >= 0 && nk < d.z) {
                    out.mask.voxels[dst] = mask(ni, nj, nk);
                }
                // Trilinear for intensities.
                std::array<std::int64_t, 3> base{};
                std::array<double, 3> frac{};
                for (int a = 0; a < 3; ++a) {
                    const double f = std::floor(src[a]);
                    base[a] = static_cast<std::int64_t>(f);
                    frac[a] = src[a] - f;
                }
                for (std::int64_t c = 0; c < vol.channels(); ++c) {
                    const float* ch = vol.data.channel(c);
                    double acc = 0;
                    for (int corner = 0; corner < 8; ++corner) {
                        const std::array<int, 3> bit{(corner >> 2) & 1, (corner >> 1) & 1, corner & 1};
                        double w = 1;
                        std::array<std::int64_t, 3> p{};
                        for (int a = 0; a < 3; ++a) {
                            w *= bit[a] ? frac[a] : 1.0 - frac[a];
                            p[a] = base[a] + bit[a];
                        }
                        if (w == 0.0) continue;
                        if (p[0] < 0 || p[0] >= d.x || p[1] < 0 || p[1] >= d.y || p[2] < 0 || p[2] >= d.z) continue;
                        acc += w * ch[d.index(p[0], p[1], p[2])];
                    }
                    out.volume.data[c * n + dst] = static_cast<float>(acc);
                }
            }
        }
    }
    return out;
}

/// Draws a factor uniformly from `range` and applies scale_volume.
inline Augmented random_scale(const MultiModalVolume& vol, const LabelMask& mask, std::array<double, 2> range,
                              Rng& rng) {
    return scale_volume(vol, mask, augment_detail::uniform(rng, range[0], range[1]));
}

/// v -> v^gamma per voxel. Input must already be normalized to [0,1].
inline MultiModalVolume adjust_gamma(const MultiModalVolume& vol, double gamma) {
    if (!(gamma > 0)) throw ValueError("gamma must be positive");
    MultiModalVolume out = vol;
    for (auto& v : out.data.storage()) {
        if (v < 0.0f || v > 1.0f) throw ValueError("gamma adjustment requires intensities in [0,1]");
        v = static_cast<float>(std::pow(static_cast<double>(v), gamma));
    }
    return out;
}

inline MultiModalVolume random_gamma(const MultiModalVolume& vol, std::array<double, 2> range, Rng& rng) {
    return adjust_gamma(vol, augment_detail::uniform(rng, range[0], range[1]));
}

/// Simulated rigid motion during acquisition. Per channel, the spectrum of the
/// image is mixed with the spectra of N = ceil(4*severity) circularly shifted
/// copies (integer shifts up to ceil(3*severity) voxels per axis). Each k-space
/// line along `phase_axis` gets its own random convex weights over the copies.
/// The output is the magnitude of the inverse transform.
inline MultiModalVolume motion_artifact(const MultiModalVolume& vol, double severity, Rng& rng, int phase_axis = 1) {
    if (!(severity >= 0 && severity <= 1)) throw ValueError("motion severity must lie in [0,1]");
    if (phase_axis < 0 || phase_axis > 2) throw ValueError("phase axis must be 0, 1 or 2");
    const int copies = static_cast<int>(std::ceil(4.0 * severity));
    if (copies == 0) return vol;
    const auto max_shift = static_cast<std::int64_t>(std::ceil(3.0 * severity));
    const Dims3 d = vol.dims();
    const auto n = d.count();
    MultiModalVolume out = vol;
    Fft3d fft(d);
    auto& buf = fft.buffer();
    std::uniform_int_distribution<std::int64_t> shift_dist(-max_shift, max_shift);
    std::uniform_real_distribution<double> weight_dist(0.0, 1.0);
    const double two_pi = 2.0 * std::numbers::pi;

    for (std::int64_t c = 0; c < vol.channels(); ++c) {
        const float* src = vol.data.channel(c);
        for (std::int64_t i = 0; i < n; ++i) buf[i] = src[i];
        fft.forward();
        // Copy 0 is the unshifted image.
        std::vector<std::array<std::int64_t, 3>> shifts(copies + 1, {0, 0, 0});
        for (int s = 1; s <= copies; ++s) {
            for (int a = 0; a < 3; ++a) shifts[s][a] = shift_dist(rng);
        }
        const std::int64_t lines = d[phase_axis];
        std::vector<double> weights(static_cast<std::size_t>(lines * (copies + 1)));
        for (std::int64_t l = 0; l < lines; ++l) {
            double total = 0;
            for (int s = 0; s <= copies; ++s) total += (weights[l * (copies + 1) + s] = weight_dist(rng) + 1e-12);
            for (int s = 0; s <= copies; ++s) weights[l * (copies + 1) + s] /= total;
        }
        for (std::int64_t i = 0; i < d.x; ++i) {
            for (std::int64_t j = 0; j < d.y; ++j) {
                for (std::int64_t k = 0; k < d.z; ++k) {
                    const std::array<std::int64_t, 3> kv{i, j, k};
                    const std::int64_t line = kv[phase_axis];
                    std::complex<double> mix = 0;
                    for (int s = 0; s <= copies; ++s) {
                        const double phase = -two_pi * (static_cast<double>(i * shifts[s][0]) / d.x +
                                                        static_cast<double>(j * shifts[s][1]) / d.y +
                                                        static_cast<double>(k * shifts[s][2]) / d.z);
                        mix += weights[line * (copies + 1) + s] * std::polar(1.0, phase);
                    }
                    buf[d.index(i, j, k)] *= mix;
                }
            }
        }
        fft.inverse();
        float* dst = out.data.channel(c);
        for (std::int64_t i = 0; i < n; ++i) dst[i] = static_cast<float>(std::abs(buf[i]));
    }
    return out;
}

/// Simulated N/2-style ghosting. Per channel, k-space lines along `axis` whose
/// index is congruent to a random offset r modulo `num_ghosts` have their
/// modulus scaled by (1 - intensity); the DC line is never touched. The
/// periodic modulation produces replicas displaced by multiples of
/// dim/num_ghosts. Output is the magnitude of the inverse transform.
inline MultiModalVolume ghosting_artifact(const MultiModalVolume& vol, double intensity, int num_ghosts, int axis,
                                          Rng& rng) {
    if (!(intensity >= 0 && intensity <= 1)) throw ValueError("ghost intensity must lie in [0,1]");
    if (num_ghosts < 0) throw ValueError("ghost count must be non-negative");
    if (axis < 0 || axis > 2) throw ValueError("ghosting axis must be 0, 1 or 2");
    if (intensity == 0.0 || num_ghosts == 0) return vol;
    const Dims3 d = vol.dims();
    const auto n = d.count();
    const auto offset = std::uniform_int_distribution<int>(0, num_ghosts - 1)(rng);
    MultiModalVolume out = vol;
    Fft3d fft(d);
    auto& buf = fft.buffer();
    for (std::int64_t c = 0; c < vol.channels(); ++c) {
        const float* src = vol.data.channel(c);
        for (std::int64_t i = 0; i < n; ++i) buf[i] = src[i];
        fft.forward();
        for (std::int64_t i = 0; i < d.x; ++i) {
            for (std::int64_t j = 0; j < d.y; ++j) {
                for (std::int64_t k = 0; k < d.z; ++k) {
                    const std::array<std::int64_t, 3> kv{i, j, k};
                    const std::int64_t line = kv[axis];
                    if (line == 0 || line % num_ghosts != offset) continue;
                    buf[d.index(i, j, k)] *= (1.0 - intensity);
                }
            }
        }
        fft.inverse();
        float* dst = out.data.channel(c);
        for (std::int64_t i = 0; i < n; ++i) dst[i] = static_cast<float>(std::abs(buf[i]));
    }
    return out;
}

/// flip -> scale -> gamma -> motion -> ghosting, each gated by its probability.
inline Augmented apply_pipeline(const MultiModalVolume& vol, const LabelMask& mask, const AugmentConfig& config,
                                Rng& rng) {
    config.validate();
    augment_detail::check_pair(vol, mask);
    Augmented cur{vol, mask};
    if (augment_detail::gate(rng, config.p_flip)) cur = random_flip(cur.volume, cur.mask, rng);
    if (augment_detail::gate(rng, config.p_scale)) cur = random_scale(cur.volume, cur.mask, config.scale_range, rng);
    if (augment_detail::gate(rng, config.p_gamma)) cur.volume = random_gamma(cur.volume, config.gamma_range, rng);
    if (augment_detail::gate(rng, config.p_motion)) {
        cur.volume = motion_artifact(cur.volume, config.motion_severity, rng, config.phase_axis);
    }
    if (augment_detail::gate(rng, config.p_ghosting)) {
        cur.volume = ghosting_artifact(cur.volume, config.ghost_intensity, config.ghost_count, config.phase_axis, rng);
    }
    return cur;
}

}  // namespace brainunet
