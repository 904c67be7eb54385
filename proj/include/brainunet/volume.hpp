#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "brainunet/error.hpp"
#include "brainunet/tensor.hpp"

namespace brainunet {

/// Tumor subregion labels (BraTS convention). This is the only place the
/// integer assignment is defined.
enum Label : std::uint8_t {
    kBackground = 0,
    kNetc = 1,  // non-enhancing tumor core
    kSnfh = 2,  // surrounding non-enhancing FLAIR hyperintensity
    kEt = 3,    // enhancing tumor
};
inline constexpr int kNumClasses = 4;

/// Input channel order of every MultiModalVolume.
enum Modality : int { kFlair = 0, kT1ce = 1, kT2w = 2 };
inline constexpr int kNumModalities = 3;
inline constexpr std::array<const char*, kNumModalities> kModalityNames{"flair", "t1ce", "t2w"};

/// Voxel spacing and voxel-to-world affine (row-major 4x4).
struct Geometry {
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    std::array<double, 16> affine{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};

    static Geometry from_spacing(std::array<double, 3> s) {
        Geometry g;
        g.spacing = s;
        g.affine = {s[0], 0, 0, 0, 0, s[1], 0, 0, 0, 0, s[2], 0, 0, 0, 0, 1};
        return g;
    }

    /// Shifts the origin so that voxel `offset` becomes the new (0,0,0).
    Geometry translated(std::array<std::int64_t, 3> offset) const {
        Geometry g = *this;
        for (int r = 0; r < 3; ++r) {
            double t = 0;
            for (int c = 0; c < 3; ++c) t += affine[r * 4 + c] * static_cast<double>(offset[c]);
            g.affine[r * 4 + 3] += t;
        }
        return g;
    }

    void validate() const {
        for (double s : spacing) {
            if (!(s > 0) || !std::isfinite(s)) throw ValueError("voxel spacing must be strictly positive");
        }
    }
};

inline bool geometry_close(const Geometry& a, const Geometry& b, double tol = 1e-4) {
    for (int i = 0; i < 3; ++i) {
        if (std::abs(a.spacing[i] - b.spacing[i]) > tol) return false;
    }
    for (int i = 0; i < 16; ++i) {
        if (std::abs(a.affine[i] - b.affine[i]) > tol) return false;
    }
    return true;
}

/// A single 3D image with geometry.
template <class T>
struct Image {
    Dims3 dims;
    std::vector<T> voxels;
    Geometry geometry;

    Image() = default;
    explicit Image(Dims3 d, T fill = T{}, Geometry g = {})
        : dims(d), voxels(static_cast<std::size_t>(d.count()), fill), geometry(g) {}

    T& operator()(std::int64_t i, std::int64_t j, std::int64_t k) { return voxels[dims.index(i, j, k)]; }
    const T& operator()(std::int64_t i, std::int64_t j, std::int64_t k) const {
        return voxels[dims.index(i, j, k)];
    }
    std::int64_t size() const { return static_cast<std::int64_t>(voxels.size()); }
};

/// One MRI modality.
using ScalarVolume = Image<float>;

/// Integer tumor map with values in {0,1,2,3}.
using LabelMask = Image<std::uint8_t>;

/// Binary region mask (0/1).
using BinaryMask = Image<std::uint8_t>;

/// Stacked (FLAIR, T1CE, T2W) input, stored as a [3, x, y, z] tensor.
struct MultiModalVolume {
    Tensor<float> data;
    Geometry geometry;

    Dims3 dims() const { return data.spatial(); }
    std::int64_t channels() const { return data.channels(); }

    ScalarVolume channel(int c) const {
        ScalarVolume v(dims(), 0.0f, geometry);
        std::copy(data.channel(c), data.channel(c) + data.voxels(), v.voxels.begin());
        return v;
    }
};

inline void validate_finite(const ScalarVolume& v) {
    for (float x : v.voxels) {
        if (!std::isfinite(x)) throw ValueError("volume contains non-finite values");
    }
}

inline void validate_labels(const LabelMask& m, int num_classes = kNumClasses) {
    for (auto v : m.voxels) {
        if (v >= num_classes) {
            throw ValueError("label value " + std::to_string(int(v)) + " outside [0," +
                             std::to_string(num_classes - 1) + "]");
        }
    }
}

/// Stacks three co-registered modalities in the fixed order FLAIR, T1CE, T2W.
inline MultiModalVolume stack_modalities(const ScalarVolume& flair, const ScalarVolume& t1ce,
                                         const ScalarVolume& t2w, double affine_tolerance = 1e-4) {
    const std::array<const ScalarVolume*, 3> mods{&flair, &t1ce, &t2w};
    for (int c = 0; c < kNumModalities; ++c) {
        if (static_cast<std::int64_t>(mods[c]->voxels.size()) != mods[c]->dims.count()) {
            throw ShapeError(std::string(kModalityNames[c]) + ": voxel buffer does not match its dims");
        }
        validate_finite(*mods[c]);
        mods[c]->geometry.validate();
    }
    for (int c = 1; c < kNumModalities; ++c) {
        if (!(mods[c]->dims == flair.dims)) {
            throw ShapeError(std::string("dimension mismatch: ") + kModalityNames[c] + " is " +
                             to_string(mods[c]->dims) + " but flair is " + to_string(flair.dims));
        }
        if (!geometry_close(mods[c]->geometry, flair.geometry, affine_tolerance)) {
            throw ShapeError(std::string("geometry mismatch: ") + kModalityNames[c] +
                             " affine differs from flair");
        }
    }
    MultiModalVolume out{Tensor<float>(kNumModalities, flair.dims), flair.geometry};
    for (int c = 0; c < kNumModalities; ++c) {
        std::copy(mods[c]->voxels.begin(), mods[c]->voxels.end(), out.data.channel(c));
    }
    return out;
}

}  // namespace brainunet
