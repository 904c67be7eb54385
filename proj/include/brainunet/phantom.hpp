#pragma once
// Synthetic glioma phantoms: a brain ellipsoid on a zero background containing
// nested tumor ellipsoids (ET core inside NETC inside SNFH). Each modality
// renders the regions with its own contrast, plus seeded Gaussian noise.

#include <array>
#include <cmath>
#include <cstdint>
#include <random>

#include "brainunet/error.hpp"
#include "brainunet/volume.hpp"

namespace brainunet {

/// Two acquisition "sites" with different contrast, noise, and bias field.
enum class PhantomStyle { A, B };

struct PhantomCase {
    MultiModalVolume volume;
    LabelMask mask;
};

namespace phantom_detail {

// Per-region intensity for (FLAIR, T1CE, T2W); rows: brain, NETC, SNFH, ET.
using ContrastTable = std::array<std::array<float, kNumModalities>, 4>;

struct StyleParams {
    ContrastTable contrast;
    float noise_sigma;
    float bias_amplitude;
};

inline StyleParams style_params(PhantomStyle style) {
    if (style == PhantomStyle::A) {
        return {{{{0.35f, 0.40f, 0.30f},    // brain
                  {0.55f, 0.22f, 0.90f},    // NETC
                  {0.85f, 0.42f, 0.68f},    // SNFH
                  {0.60f, 0.95f, 0.52f}}},  // ET
                0.04f, 0.0f};
    }
    return {{{{0.50f, 0.30f, 0.45f},
              {0.62f, 0.18f, 0.80f},
              {0.80f, 0.36f, 0.72f},
              {0.66f, 0.70f, 0.58f}}},
            0.07f, 0.25f};
}

}  // namespace phantom_detail

/// Deterministic in (seed, dims, style). Every nonzero label covers at least 1%
/// of the voxels.
inline PhantomCase generate_phantom(std::uint64_t seed, Dims3 dims, PhantomStyle style = PhantomStyle::A) {
    if (dims.x < 16 || dims.y < 16 || dims.z < 16) {
        throw ValueError("phantom dims must be at least 16 per axis, got " + to_string(dims));
    }
    std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ull + 0x5DEECE66Dull);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

    std::array<double, 3> brain_c{}, brain_r{}, tumor_c{}, r_snfh{}, r_netc{}, r_et{};
    for (int a = 0; a < 3; ++a) {
        const double n = static_cast<double>(dims[a]);
        brain_c[a] = (n - 1) / 2 + uniform(-0.02, 0.02) * n;
        brain_r[a] = n * uniform(0.44, 0.47);
        tumor_c[a] = (n - 1) / 2 + uniform(-0.06, 0.06) * n;
        r_snfh[a] = n * uniform(0.30, 0.33);
        r_netc[a] = n * uniform(0.23, 0.25);
        r_et[a] = n * uniform(0.16, 0.175);
    }
    const auto params = phantom_detail::style_params(style);
    // Low-frequency multiplicative bias field direction.
    std::array<double, 3> bias_dir{uniform(-1, 1), uniform(-1, 1), uniform(-1, 1)};

    auto inside = [](const std::array<double, 3>& c, const std::array<double, 3>& r, double i, double j, double k) {
        const double u = (i - c[0]) / r[0], v = (j - c[1]) / r[1], w = (k - c[2]) / r[2];
        return u * u + v * v + w * w <= 1.0;
    };

    Geometry geom = Geometry::from_spacing({1.0, 1.0, 1.0});
    PhantomCase out{MultiModalVolume{Tensor<float>(kNumModalities, dims), geom}, LabelMask(dims, 0, geom)};
    std::normal_distribution<float> noise(0.0f, params.noise_sigma);
    for (std::int64_t i = 0; i < dims.x; ++i) {
        for (std::int64_t j = 0; j < dims.y; ++j) {
            for (std::int64_t k = 0; k < dims.z; ++k) {
                const double di = static_cast<double>(i), dj = static_cast<double>(j), dk = static_cast<double>(k);
                if (!inside(brain_c, brain_r, di, dj, dk)) continue;
                int region = 0;
                std::uint8_t label = kBackground;
                if (inside(tumor_c, r_et, di, dj, dk)) {
                    region = 3;
                    label = kEt;
                } else if (inside(tumor_c, r_netc, di, dj, dk)) {
                    region = 1;
                    label = kNetc;
                } else if (inside(tumor_c, r_snfh, di, dj, dk)) {
                    region = 2;
                    label = kSnfh;
                }
                out.mask(i, j, k) = label;
                const double bias = 1.0 + params.bias_amplitude *
                                              (bias_dir[0] * (di / dims.x - 0.5) + bias_dir[1] * (dj / dims.y - 0.5) +
                                               bias_dir[2] * (dk / dims.z - 0.5));
                for (int c = 0; c < kNumModalities; ++c) {
                    float v = static_cast<float>(params.contrast[region][c] * bias) + noise(rng);
                    out.volume.data.at(c, i, j, k) = std::max(v, 1e-3f);
                }
            }
        }
    }
    return out;
}

}  // namespace brainunet
