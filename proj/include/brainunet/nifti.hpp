#pragma once
// NIfTI-1 single-file (.nii / .nii.gz) reader and writer.
//
// Only the parts of the format needed for co-registered structural scans are
// handled: 3D payloads (trailing singleton dimensions are accepted), the
// common integer/float datatypes, scl_slope/scl_inter, and sform/qform
// geometry. Files are written with sform_code = 1 and float32 (volumes) or
// uint8 (masks) payloads. gzip is selected by a ".gz" suffix on write and
// detected transparently on read.

#include <zlib.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "brainunet/error.hpp"
#include "brainunet/volume.hpp"

namespace brainunet {

namespace nifti {

inline constexpr int kHeaderSize = 348;
inline constexpr int kVoxOffset = 352;

enum Datatype : std::int16_t {
    kUint8 = 2,
    kInt16 = 4,
    kInt32 = 8,
    kFloat32 = 16,
    kFloat64 = 64,
    kInt8 = 256,
    kUint16 = 512,
    kUint32 = 768,
};

inline int datatype_bytes(int dt) {
    switch (dt) {
        case kUint8:
        case kInt8: return 1;
        case kInt16:
        case kUint16: return 2;
        case kInt32:
        case kUint32:
        case kFloat32: return 4;
        case kFloat64: return 8;
        default: return 0;
    }
}

namespace detail {

template <class T>
T read_raw(const unsigned char* p, bool swap) {
    std::array<unsigned char, sizeof(T)> b;
    std::memcpy(b.data(), p, sizeof(T));
    if (swap) std::reverse(b.begin(), b.end());
    T v;
    std::memcpy(&v, b.data(), sizeof(T));
    return v;
}

template <class T>
void write_le(unsigned char* p, T v) {
    std::array<unsigned char, sizeof(T)> b;
    std::memcpy(b.data(), &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b.begin(), b.end());
    std::memcpy(p, b.data(), sizeof(T));
}

inline bool has_gz_suffix(const std::filesystem::path& p) {
    const auto s = p.string();
    return s.size() >= 3 && s.compare(s.size() - 3, 3, ".gz") == 0;
}

inline std::vector<unsigned char> read_all(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw IoError("file not found: " + path.string());
    gzFile f = gzopen(path.string().c_str(), "rb");
    if (!f) throw IoError("cannot open: " + path.string());
    std::vector<unsigned char> bytes;
    std::array<unsigned char, 1 << 16> buf;
    for (;;) {
        int n = gzread(f, buf.data(), static_cast<unsigned>(buf.size()));
        if (n < 0) {
            gzclose(f);
            throw FormatError("malformed header: corrupt compressed stream in " + path.string());
        }
        if (n == 0) break;
        bytes.insert(bytes.end(), buf.begin(), buf.begin() + n);
    }
    gzclose(f);
    return bytes;
}

inline void write_all(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
    if (has_gz_suffix(path)) {
        gzFile f = gzopen(path.string().c_str(), "wb6");
        if (!f) throw IoError("cannot open for writing: " + path.string());
        std::size_t done = 0;
        while (done < bytes.size()) {
            auto chunk = static_cast<unsigned>(std::min<std::size_t>(bytes.size() - done, 1u << 30));
            if (gzwrite(f, bytes.data() + done, chunk) != static_cast<int>(chunk)) {
                gzclose(f);
                throw IoError("write failed: " + path.string());
            }
            done += chunk;
        }
        if (gzclose(f) != Z_OK) throw IoError("write failed: " + path.string());
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

// Quaternion parameters to a voxel-to-world matrix (NIfTI-1 method 2).
inline std::array<double, 16> qform_to_affine(double b, double c, double d, double qx, double qy, double qz,
                                              std::array<double, 3> pix, double qfac) {
    double a = 1.0 - (b * b + c * c + d * d);
    if (a < 1e-7) {
        const double s = 1.0 / std::sqrt(b * b + c * c + d * d);
        b *= s;
        c *= s;
        d *= s;
        a = 0.0;
    } else {
        a = std::sqrt(a);
    }
    const double zs = qfac < 0 ? -pix[2] : pix[2];
    return {(a * a + b * b - c * c - d * d) * pix[0], 2 * (b * c - a * d) * pix[1], 2 * (b * d + a * c) * zs, qx,
            2 * (b * c + a * d) * pix[0], (a * a + c * c - b * b - d * d) * pix[1], 2 * (c * d - a * b) * zs, qy,
            2 * (b * d - a * c) * pix[0], 2 * (c * d + a * b) * pix[1], (a * a + d * d - c * c - b * b) * zs, qz,
            0, 0, 0, 1};
}

struct Parsed {
    Dims3 dims;
    Geometry geometry;
    int datatype = 0;
    double slope = 1.0;
    double inter = 0.0;
    std::size_t offset = kVoxOffset;
    bool swap = false;
};

inline Parsed parse_header(const std::vector<unsigned char>& bytes, const std::filesystem::path& path) {
    const auto where = " in " + path.string();
    if (bytes.size() < static_cast<std::size_t>(kHeaderSize)) {
        throw FormatError("malformed header: file shorter than 348 bytes" + where);
    }
    const unsigned char* h = bytes.data();
    Parsed p;
    const auto hdr = read_raw<std::int32_t>(h, false);
    if (hdr != kHeaderSize) {
        if (read_raw<std::int32_t>(h, true) != kHeaderSize) {
            throw FormatError("malformed header: sizeof_hdr is not 348" + where);
        }
        p.swap = true;
    }
    if (std::memcmp(h + 344, "n+1", 4) != 0 && std::memcmp(h + 344, "ni1", 4) != 0) {
        throw FormatError("malformed header: missing NIfTI-1 magic" + where);
    }
    std::array<std::int16_t, 8> dim{};
    for (int i = 0; i < 8; ++i) dim[i] = read_raw<std::int16_t>(h + 40 + 2 * i, p.swap);
    if (dim[0] < 1 || dim[0] > 7) throw FormatError("malformed header: dim[0] out of range" + where);
    for (int i = 1; i <= dim[0]; ++i) {
        if (dim[i] < 1) throw FormatError("malformed header: non-positive dimension" + where);
    }
    if (dim[0] < 3) throw ShapeError("non-3D payload (" + std::to_string(dim[0]) + "D)" + where);
    for (int i = 4; i <= dim[0]; ++i) {
        if (dim[i] != 1) throw ShapeError("non-3D payload (dim[" + std::to_string(i) + "] > 1)" + where);
    }
    p.dims = {dim[1], dim[2], dim[3]};
    p.datatype = read_raw<std::int16_t>(h + 70, p.swap);
    if (datatype_bytes(p.datatype) == 0) {
        throw FormatError("malformed header: unsupported datatype " + std::to_string(p.datatype) + where);
    }
    std::array<double, 3> pix{};
    for (int i = 0; i < 3; ++i) pix[i] = std::abs(read_raw<float>(h + 80 + 4 * i, p.swap));
    for (double& s : pix) {
        if (!(s > 0) || !std::isfinite(s)) s = 1.0;
    }
    const double qfac = read_raw<float>(h + 76, p.swap);
    const float vox_offset = read_raw<float>(h + 108, p.swap);
    p.offset = vox_offset >= kHeaderSize ? static_cast<std::size_t>(vox_offset) : kVoxOffset;
    const float slope = read_raw<float>(h + 112, p.swap);
    const float inter = read_raw<float>(h + 116, p.swap);
    if (std::isfinite(slope) && slope != 0.0f) {
        p.slope = slope;
        p.inter = std::isfinite(inter) ? inter : 0.0;
    }
    const auto qform_code = read_raw<std::int16_t>(h + 252, p.swap);
    const auto sform_code = read_raw<std::int16_t>(h + 254, p.swap);
    p.geometry.spacing = pix;
    if (sform_code > 0) {
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 4; ++c) p.geometry.affine[r * 4 + c] = read_raw<float>(h + 280 + 16 * r + 4 * c, p.swap);
        }
    } else if (qform_code > 0) {
        auto q = [&](int off) { return static_cast<double>(read_raw<float>(h + off, p.swap)); };
        p.geometry.affine = qform_to_affine(q(256), q(260), q(264), q(268), q(272), q(276), pix, qfac);
    } else {
        p.geometry = Geometry::from_spacing(pix);
    }
    return p;
}

template <class T>
std::vector<unsigned char> encode(const Image<T>& img, std::int16_t datatype) {
    const int bytes_per = datatype_bytes(datatype);
    std::vector<unsigned char> out(kVoxOffset + static_cast<std::size_t>(img.dims.count()) * bytes_per, 0);
    unsigned char* h = out.data();
    write_le<std::int32_t>(h, kHeaderSize);
    const std::array<std::int16_t, 8> dim{3, static_cast<std::int16_t>(img.dims.x), static_cast<std::int16_t>(img.dims.y),
                                          static_cast<std::int16_t>(img.dims.z), 1, 1, 1, 1};
    for (int i = 0; i < 8; ++i) write_le<std::int16_t>(h + 40 + 2 * i, dim[i]);
    write_le<std::int16_t>(h + 70, datatype);
    write_le<std::int16_t>(h + 72, static_cast<std::int16_t>(bytes_per * 8));
    write_le<float>(h + 76, 1.0f);
    for (int i = 0; i < 3; ++i) write_le<float>(h + 80 + 4 * i, static_cast<float>(img.geometry.spacing[i]));
    write_le<float>(h + 108, static_cast<float>(kVoxOffset));
    write_le<float>(h + 112, 1.0f);
    h[123] = 2;  // xyzt_units: millimetres
    write_le<std::int16_t>(h + 254, 1);
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 4; ++c) {
            write_le<float>(h + 280 + 16 * r + 4 * c, static_cast<float>(img.geometry.affine[r * 4 + c]));
        }
    }
    std::memcpy(h + 344, "n+1", 4);
    // Payload: file order has i fastest; memory order has k fastest.
    unsigned char* dst = h + kVoxOffset;
    for (std::int64_t k = 0; k < img.dims.z; ++k) {
        for (std::int64_t j = 0; j < img.dims.y; ++j) {
            for (std::int64_t i = 0; i < img.dims.x; ++i, dst += bytes_per) {
                const T v = img(i, j, k);
                if (datatype == kFloat32) {
                    write_le<float>(dst, static_cast<float>(v));
                } else {
                    *dst = static_cast<std::uint8_t>(v);
                }
            }
        }
    }
    return out;
}

inline std::vector<double> decode_payload(const std::vector<unsigned char>& bytes, const Parsed& p,
                                          const std::filesystem::path& path) {
    const auto n = static_cast<std::size_t>(p.dims.count());
    const int bpv = datatype_bytes(p.datatype);
    if (bytes.size() < p.offset + n * bpv) {
        throw FormatError("malformed file: voxel payload truncated in " + path.string());
    }
    std::vector<double> file_order(n);
    const unsigned char* src = bytes.data() + p.offset;
    for (std::size_t i = 0; i < n; ++i, src += bpv) {
        double v = 0;
        switch (p.datatype) {
            case kUint8: v = *src; break;
            case kInt8: v = static_cast<std::int8_t>(*src); break;
            case kInt16: v = read_raw<std::int16_t>(src, p.swap); break;
            case kUint16: v = read_raw<std::uint16_t>(src, p.swap); break;
            case kInt32: v = read_raw<std::int32_t>(src, p.swap); break;
            case kUint32: v = read_raw<std::uint32_t>(src, p.swap); break;
            case kFloat32: v = read_raw<float>(src, p.swap); break;
            case kFloat64: v = read_raw<double>(src, p.swap); break;
        }
        file_order[i] = v;
    }
    return file_order;
}

}  // namespace detail
}  // namespace nifti

/// Loads a 3D NIfTI-1 volume as float32 voxels.
inline ScalarVolume load_volume(const std::filesystem::path& path) {
    const auto bytes = nifti::detail::read_all(path);
    const auto parsed = nifti::detail::parse_header(bytes, path);
    const auto raw = nifti::detail::decode_payload(bytes, parsed, path);
    ScalarVolume vol(parsed.dims, 0.0f, parsed.geometry);
    const bool scaled = parsed.slope != 1.0 || parsed.inter != 0.0;
    std::size_t n = 0;
    for (std::int64_t k = 0; k < parsed.dims.z; ++k) {
        for (std::int64_t j = 0; j < parsed.dims.y; ++j) {
            for (std::int64_t i = 0; i < parsed.dims.x; ++i, ++n) {
                const double v = scaled ? raw[n] * parsed.slope + parsed.inter : raw[n];
                vol(i, j, k) = static_cast<float>(v);
            }
        }
    }
    validate_finite(vol);
    return vol;
}

/// Loads a label map; every voxel must be an integer in [0, num_classes).
inline LabelMask load_mask(const std::filesystem::path& path, int num_classes = kNumClasses) {
    const ScalarVolume vol = load_volume(path);
    LabelMask mask(vol.dims, 0, vol.geometry);
    for (std::size_t i = 0; i < vol.voxels.size(); ++i) {
        const float v = vol.voxels[i];
        if (v != std::floor(v) || v < 0 || v >= static_cast<float>(num_classes)) {
            throw FormatError("mask " + path.string() + " contains value " + std::to_string(v) +
                              " outside the label set");
        }
        mask.voxels[i] = static_cast<std::uint8_t>(v);
    }
    return mask;
}

/// Writes a float32 volume.
inline void save_volume(const ScalarVolume& vol, const std::filesystem::path& path) {
    if (vol.dims.count() != vol.size()) throw ShapeError("volume buffer does not match its dims");
    nifti::detail::write_all(path, nifti::detail::encode(vol, nifti::kFloat32));
}

/// Writes a label map with a uint8 payload.
inline void save_volume(const LabelMask& mask, const std::filesystem::path& path) {
    if (mask.dims.count() != mask.size()) throw ShapeError("mask buffer does not match its dims");
    nifti::detail::write_all(path, nifti::detail::encode(mask, nifti::kUint8));
}

inline void save_mask(const LabelMask& mask, const std::filesystem::path& path) { save_volume(mask, path); }

}  // namespace brainunet
