#pragma once
// Exact squared Euclidean distance transform (Felzenszwalb & Huttenlocher),
// separable over the three axes, with anisotropic voxel spacing.

#include <cstdint>
#include <limits>
#include <vector>

#include "brainunet/tensor.hpp"
#include "brainunet/volume.hpp"

namespace brainunet {

namespace edt_detail {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// 1-D lower envelope of parabolas f[q] + (sp * (x - q))^2 over n samples
// separated by `stride`. v, z are scratch.
inline void transform_line(double* f, std::int64_t n, std::int64_t stride, double sp, std::vector<double>& in,
                           std::vector<std::int64_t>& v, std::vector<double>& z) {
    in.resize(n);
    v.resize(n);
    z.resize(n + 1);
    for (std::int64_t i = 0; i < n; ++i) in[i] = f[i * stride];
    std::int64_t k = -1;
    for (std::int64_t q = 0; q < n; ++q) {
        if (in[q] == kInf) continue;
        const double pq = sp * static_cast<double>(q);
        while (k >= 0) {
            const double pv = sp * static_cast<double>(v[k]);
            const double s = ((in[q] + pq * pq) - (in[v[k]] + pv * pv)) / (2 * (pq - pv));
            if (s <= z[k]) {
                --k;
            } else {
                ++k;
                v[k] = q;
                z[k] = s;
                z[k + 1] = kInf;
                break;
            }
        }
        if (k < 0) {
            k = 0;
            v[0] = q;
            z[0] = -kInf;
            z[1] = kInf;
        }
    }
    if (k < 0) {
        for (std::int64_t i = 0; i < n; ++i) f[i * stride] = kInf;
        return;
    }
    std::int64_t j = 0;
    for (std::int64_t q = 0; q < n; ++q) {
        const double pq = sp * static_cast<double>(q);
        while (z[j + 1] < pq) ++j;
        const double d = sp * static_cast<double>(q - v[j]);
        f[q * stride] = d * d + in[v[j]];
    }
}

}  // namespace edt_detail

/// Squared distance (in spacing units) from every voxel to the nearest voxel
/// where `feature` is nonzero; +inf everywhere if there is none.
inline std::vector<double> squared_distance_transform(const Image<std::uint8_t>& feature,
                                                      std::array<double, 3> spacing) {
    const Dims3 d = feature.dims;
    std::vector<double> f(static_cast<std::size_t>(d.count()));
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = feature.voxels[i] ? 0.0 : edt_detail::kInf;
    std::vector<double> in, z;
    std::vector<std::int64_t> v;
    for (std::int64_t x = 0; x < d.x; ++x)
        for (std::int64_t y = 0; y < d.y; ++y) edt_detail::transform_line(&f[d.index(x, y, 0)], d.z, 1, spacing[2], in, v, z);
    for (std::int64_t x = 0; x < d.x; ++x)
        for (std::int64_t k = 0; k < d.z; ++k)
            edt_detail::transform_line(&f[d.index(x, 0, k)], d.y, d.z, spacing[1], in, v, z);
    for (std::int64_t y = 0; y < d.y; ++y)
        for (std::int64_t k = 0; k < d.z; ++k)
            edt_detail::transform_line(&f[d.index(0, y, k)], d.x, d.y * d.z, spacing[0], in, v, z);
    return f;
}

}  // namespace brainunet
