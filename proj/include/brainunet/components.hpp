#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "brainunet/volume.hpp"

namespace brainunet {

struct Components {
    std::vector<std::int32_t> labels;  // 0 = background, 1..count
    std::int32_t count = 0;
};

/// 26-connected components of the nonzero voxels, numbered in raster order
/// of their first voxel.
inline Components connected_components(const Image<std::uint8_t>& mask) {
    const Dims3 d = mask.dims;
    Components out;
    out.labels.assign(mask.voxels.size(), 0);
    std::vector<std::int64_t> stack;
    for (std::int64_t start = 0; start < d.count(); ++start) {
        if (!mask.voxels[start] || out.labels[start]) continue;
        const std::int32_t id = ++out.count;
        out.labels[start] = id;
        stack.push_back(start);
        while (!stack.empty()) {
            const std::int64_t p = stack.back();
            stack.pop_back();
            const std::int64_t x = p / (d.y * d.z), y = (p / d.z) % d.y, z = p % d.z;
            for (std::int64_t dx = -1; dx <= 1; ++dx) {
                const std::int64_t nx = x + dx;
                if (nx < 0 || nx >= d.x) continue;
                for (std::int64_t dy = -1; dy <= 1; ++dy) {
                    const std::int64_t ny = y + dy;
                    if (ny < 0 || ny >= d.y) continue;
                    for (std::int64_t dz = -1; dz <= 1; ++dz) {
                        const std::int64_t nz = z + dz;
                        if (nz < 0 || nz >= d.z) continue;
                        const std::int64_t q = d.index(nx, ny, nz);
                        if (mask.voxels[q] && !out.labels[q]) {
                            out.labels[q] = id;
                            stack.push_back(q);
                        }
                    }
                }
            }
        }
    }
    return out;
}

/// Binary dilation by a 3x3x3 cube.
inline Image<std::uint8_t> dilate_cube(const Image<std::uint8_t>& mask) {
    const Dims3 d = mask.dims;
    Image<std::uint8_t> out(d, 0, mask.geometry);
    for (std::int64_t x = 0; x < d.x; ++x)
        for (std::int64_t y = 0; y < d.y; ++y)
            for (std::int64_t z = 0; z < d.z; ++z) {
                if (!mask(x, y, z)) continue;
                for (std::int64_t i = std::max<std::int64_t>(0, x - 1); i <= std::min(d.x - 1, x + 1); ++i)
                    for (std::int64_t j = std::max<std::int64_t>(0, y - 1); j <= std::min(d.y - 1, y + 1); ++j)
                        for (std::int64_t k = std::max<std::int64_t>(0, z - 1); k <= std::min(d.z - 1, z + 1); ++k)
                            out(i, j, k) = 1;
            }
    return out;
}

}  // namespace brainunet
