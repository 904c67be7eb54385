#pragma once
// Independent reference implementations used as test oracles. Deliberately
// naive: direct sums and all-pairs searches.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "brainunet/tensor.hpp"
#include "brainunet/volume.hpp"

namespace oracles {

using brainunet::Dims3;
using brainunet::Image;
using brainunet::Tensor;

// Tversky index per class: (sum y p + s) / (sum y p + a sum p(1-y) + b sum y(1-p) + s).
template <class T>
double tversky_class(const Tensor<T>& pred, const Tensor<T>& truth, int c, double a, double b, double s) {
    const auto n = pred.size() / pred.dim(0);
    double tp = 0, fp = 0, fn = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double p = pred[c * n + i], y = truth[c * n + i];
        tp += y * p;
        fp += p * (1 - y);
        fn += y * (1 - p);
    }
    return (tp + s) / (tp + a * fp + b * fn + s);
}

// Mean soft Dice (2 sum yp + 2s) / (sum p + sum y + 2s) over classes first..K-1.
template <class T>
double soft_dice_mean(const Tensor<T>& pred, const Tensor<T>& truth, double s, int first) {
    const auto k = pred.dim(0);
    const auto n = pred.size() / k;
    double total = 0;
    for (std::int64_t c = first; c < k; ++c) {
        double inter = 0, sp = 0, sy = 0;
        for (std::int64_t i = 0; i < n; ++i) {
            inter += pred[c * n + i] * truth[c * n + i];
            sp += pred[c * n + i];
            sy += truth[c * n + i];
        }
        total += (2 * inter + 2 * s) / (sp + sy + 2 * s);
    }
    return total / static_cast<double>(k - first);
}

inline double dice(const Image<std::uint8_t>& a, const Image<std::uint8_t>& b) {
    double both = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.voxels.size(); ++i) {
        na += a.voxels[i] != 0;
        nb += b.voxels[i] != 0;
        both += a.voxels[i] && b.voxels[i];
    }
    if (na + nb == 0) return 1.0;
    return 2 * both / (na + nb);
}

// Boundary voxel coordinates: foreground with a 6-neighbour outside the mask.
inline std::vector<std::array<std::int64_t, 3>> boundary_points(const Image<std::uint8_t>& m) {
    std::vector<std::array<std::int64_t, 3>> out;
    const Dims3 d = m.dims;
    auto fg = [&](std::int64_t x, std::int64_t y, std::int64_t z) {
        return x >= 0 && y >= 0 && z >= 0 && x < d.x && y < d.y && z < d.z && m(x, y, z) != 0;
    };
    for (std::int64_t x = 0; x < d.x; ++x)
        for (std::int64_t y = 0; y < d.y; ++y)
            for (std::int64_t z = 0; z < d.z; ++z) {
                if (!fg(x, y, z)) continue;
                if (!fg(x - 1, y, z) || !fg(x + 1, y, z) || !fg(x, y - 1, z) || !fg(x, y + 1, z) || !fg(x, y, z - 1) ||
                    !fg(x, y, z + 1)) {
                    out.push_back({x, y, z});
                }
            }
    return out;
}

// All-pairs nearest boundary distances, pooled both ways, 95th percentile by
// linear interpolation between closest ranks.
inline double hd95_brute_force(const Image<std::uint8_t>& a, const Image<std::uint8_t>& b,
                               std::array<double, 3> sp, double empty_sentinel = 373.13) {
    const auto pa = boundary_points(a), pb = boundary_points(b);
    if (pa.empty() && pb.empty()) return 0.0;
    if (pa.empty() || pb.empty()) return empty_sentinel;
    std::vector<double> d;
    auto nearest = [&](const auto& from, const auto& to) {
        for (const auto& p : from) {
            double best = INFINITY;
            for (const auto& q : to) {
                double s = 0;
                for (int ax = 0; ax < 3; ++ax) {
                    const double t = static_cast<double>(p[ax] - q[ax]) * sp[ax];
                    s += t * t;
                }
                best = std::min(best, s);
            }
            d.push_back(std::sqrt(best));
        }
    };
    nearest(pa, pb);
    nearest(pb, pa);
    std::sort(d.begin(), d.end());
    const double pos = 0.95 * static_cast<double>(d.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, d.size() - 1);
    return d[lo] + (d[hi] - d[lo]) * (pos - static_cast<double>(lo));
}

}  // namespace oracles
