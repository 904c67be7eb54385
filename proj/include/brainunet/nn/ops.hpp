#pragma once
// Forward and backward kernels for the 3D layers used by the network.
//
// Feature maps are rank-4 tensors [C, X, Y, Z] (single sample). Convolutions
// lower to GEMM over bounded column chunks.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <vector>

#if defined(__SSE__)
#include <xmmintrin.h>
#endif

#include "brainunet/error.hpp"
#include "brainunet/tensor.hpp"

namespace brainunet::nn {

/// Flushes subnormals to zero (FTZ + DAZ) on this thread while alive.
class DenormalGuard {
public:
#if defined(__SSE__)
    DenormalGuard() : saved_(_mm_getcsr()) { _mm_setcsr(saved_ | 0x8040u); }
    ~DenormalGuard() { _mm_setcsr(saved_); }

private:
    unsigned saved_;
#endif
public:
    DenormalGuard(const DenormalGuard&) = delete;
    DenormalGuard& operator=(const DenormalGuard&) = delete;
};

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatrixMap = Eigen::Map<RowMatrix<T>, Eigen::Unaligned, Eigen::OuterStride<>>;
template <class T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>, Eigen::Unaligned, Eigen::OuterStride<>>;

template <class T>
MatrixMap<T> matrix(T* p, std::int64_t rows, std::int64_t cols, std::int64_t stride) {
    return MatrixMap<T>(p, rows, cols, Eigen::OuterStride<>(stride));
}
template <class T>
ConstMatrixMap<T> matrix(const T* p, std::int64_t rows, std::int64_t cols, std::int64_t stride) {
    return ConstMatrixMap<T>(p, rows, cols, Eigen::OuterStride<>(stride));
}

/// Upper bound on im2col buffer elements per slab.
inline constexpr std::int64_t kColumnBudget = std::int64_t{1} << 22;

inline std::int64_t slab_planes(std::int64_t rows, std::int64_t plane, std::int64_t planes) {
    return std::clamp<std::int64_t>(kColumnBudget / std::max<std::int64_t>(1, rows * plane), 1, planes);
}

// ---------------------------------------------------------------------------
// Same-padded stride-1 convolution with an odd cubic kernel.
// Weight layout [Cout, Cin, k, k, k].
//
// The input is copied once into a zero-padded grid (plus slack planes). On
// that grid every kernel tap is a constant linear offset, so each im2col row
// of a column chunk is one contiguous copy. Chunks are whole padded z-lines
// and are sized to stay cache resident; output columns that fall on the
// padding are computed and discarded.

namespace detail {

struct PaddedGrid {
    Dims3 dims;
    std::int64_t pad = 0, py = 0, pz = 0, plane = 0;
    std::int64_t slack = 0, stride = 0;  // per-channel elements before data; channel stride

    PaddedGrid(Dims3 d, int k) : dims(d), pad(k / 2) {
        py = d.y + 2 * pad;
        pz = d.z + 2 * pad;
        plane = py * pz;
        slack = (pad + 1) * plane;
        stride = (d.x + 2 * pad) * plane + 2 * slack;
    }
    // Padded-grid index of voxel (x, y, z), relative to the channel origin.
    std::int64_t at(std::int64_t x, std::int64_t y, std::int64_t z) const {
        return slack + (x + pad) * plane + (y + pad) * pz + z + pad;
    }
    std::int64_t tap(int dx, int dy, int dz) const { return (dx - pad) * plane + (dy - pad) * pz + (dz - pad); }
    // Padded z-lines spanning the interior x-planes.
    std::int64_t first_line() const { return pad * py; }
    std::int64_t end_line() const { return (dims.x + pad) * py; }
    std::int64_t chunk_lines(std::int64_t rows) const {
        constexpr std::int64_t kCacheFloats = std::int64_t{1} << 19;
        const std::int64_t cols = std::clamp<std::int64_t>(kCacheFloats / std::max<std::int64_t>(1, rows), 256, 4096);
        return std::max<std::int64_t>(1, cols / pz);
    }
};

template <class T>
std::vector<T> pad_channels(const Tensor<T>& in, const PaddedGrid& g) {
    const Dims3 d = g.dims;
    std::vector<T> out(static_cast<std::size_t>(in.channels() * g.stride), T(0));
    for (std::int64_t c = 0; c < in.channels(); ++c) {
        const T* s = in.channel(c);
        T* o = out.data() + c * g.stride;
        for (std::int64_t x = 0; x < d.x; ++x)
            for (std::int64_t y = 0; y < d.y; ++y) std::copy_n(s + (x * d.y + y) * d.z, d.z, o + g.at(x, y, 0));
    }
    return out;
}

// Fills a [rows, cols] column matrix for padded lines [l0, l0 + lines).
template <class T>
void gather_columns(const T* padded, std::int64_t channels, int k, const PaddedGrid& g, std::int64_t l0,
                    std::int64_t cols, T* col) {
    const std::int64_t base = g.slack + l0 * g.pz;
    std::int64_t row = 0;
    for (std::int64_t c = 0; c < channels; ++c) {
        const T* src = padded + c * g.stride + base;
        for (int dx = 0; dx < k; ++dx)
            for (int dy = 0; dy < k; ++dy)
                for (int dz = 0; dz < k; ++dz, ++row) std::copy_n(src + g.tap(dx, dy, dz), cols, col + row * cols);
    }
}

template <class T>
void scatter_columns(const T* col, std::int64_t channels, int k, const PaddedGrid& g, std::int64_t l0,
                     std::int64_t cols, T* padded) {
    const std::int64_t base = g.slack + l0 * g.pz;
    std::int64_t row = 0;
    for (std::int64_t c = 0; c < channels; ++c) {
        T* dst = padded + c * g.stride + base;
        for (int dx = 0; dx < k; ++dx)
            for (int dy = 0; dy < k; ++dy)
                for (int dz = 0; dz < k; ++dz, ++row) {
                    T* t = dst + g.tap(dx, dy, dz);
                    const T* s = col + row * cols;
                    for (std::int64_t j = 0; j < cols; ++j) t[j] += s[j];
                }
    }
}

// Visits the interior runs of padded lines [l0, l1): f(column offset, voxel offset).
template <class F>
void for_interior_lines(const PaddedGrid& g, std::int64_t l0, std::int64_t l1, F&& f) {
    for (std::int64_t l = l0; l < l1; ++l) {
        const std::int64_t xp = l / g.py, yp = l % g.py;
        if (yp < g.pad || yp >= g.dims.y + g.pad) continue;
        f((l - l0) * g.pz + g.pad, ((xp - g.pad) * g.dims.y + (yp - g.pad)) * g.dims.z);
    }
}

template <class T>
void add_bias(Tensor<T>& out, const T* bias) {
    if (!bias) return;
    const auto n = out.voxels();
    for (std::int64_t c = 0; c < out.channels(); ++c) {
        T* p = out.channel(c);
        const T b = bias[c];
        for (std::int64_t i = 0; i < n; ++i) p[i] += b;
    }
}

template <class T>
void accumulate_bias_grad(const Tensor<T>& dout, T* dbias) {
    if (!dbias) return;
    const auto n = dout.voxels();
    for (std::int64_t c = 0; c < dout.channels(); ++c) {
        const T* p = dout.channel(c);
        double s = 0;
        for (std::int64_t i = 0; i < n; ++i) s += p[i];
        dbias[c] += static_cast<T>(s);
    }
}

}  // namespace detail

template <class T>
Tensor<T> conv3d_forward(const Tensor<T>& in, const T* weight, const T* bias, std::int64_t cout, int k) {
    const Dims3 d = in.spatial();
    const std::int64_t cin = in.channels(), v = d.count();
    Tensor<T> out(cout, d);
    if (k == 1) {
        matrix(out.data(), cout, v, v).noalias() = matrix(weight, cout, cin, cin) * matrix(in.data(), cin, v, v);
    } else {
        const detail::PaddedGrid g(d, k);
        const std::vector<T> padded = detail::pad_channels(in, g);
        const std::int64_t rows = cin * k * k * k, lines = g.chunk_lines(rows);
        std::vector<T> col(static_cast<std::size_t>(rows * lines * g.pz));
        std::vector<T> res(static_cast<std::size_t>(cout * lines * g.pz));
        for (std::int64_t l0 = g.first_line(); l0 < g.end_line(); l0 += lines) {
            const std::int64_t l1 = std::min(g.end_line(), l0 + lines), cols = (l1 - l0) * g.pz;
            detail::gather_columns(padded.data(), cin, k, g, l0, cols, col.data());
            matrix(res.data(), cout, cols, cols).noalias() =
                matrix(weight, cout, rows, rows) * matrix(col.data(), rows, cols, cols);
            detail::for_interior_lines(g, l0, l1, [&](std::int64_t cj, std::int64_t vi) {
                for (std::int64_t c = 0; c < cout; ++c) std::copy_n(res.data() + c * cols + cj, d.z, out.channel(c) + vi);
            });
        }
    }
    detail::add_bias(out, bias);
    return out;
}

/// Accumulates weight/bias gradients; returns dL/d(in) when `want_input_grad`.
template <class T>
Tensor<T> conv3d_backward(const Tensor<T>& in, const T* weight, int k, const Tensor<T>& dout, T* dweight, T* dbias,
                          bool want_input_grad = true) {
    const Dims3 d = in.spatial();
    const std::int64_t cin = in.channels(), cout = dout.channels(), v = d.count();
    Tensor<T> din;
    if (want_input_grad) din = Tensor<T>(cin, d);
    detail::accumulate_bias_grad(dout, dbias);
    if (k == 1) {
        matrix(dweight, cout, cin, cin).noalias() +=
            matrix(dout.data(), cout, v, v) * matrix(in.data(), cin, v, v).transpose();
        if (want_input_grad) {
            matrix(din.data(), cin, v, v).noalias() =
                matrix(weight, cout, cin, cin).transpose() * matrix(dout.data(), cout, v, v);
        }
        return din;
    }
    const detail::PaddedGrid g(d, k);
    const std::vector<T> padded = detail::pad_channels(in, g);
    std::vector<T> dpadded;
    if (want_input_grad) dpadded.assign(static_cast<std::size_t>(cin * g.stride), T(0));
    const std::int64_t rows = cin * k * k * k, lines = g.chunk_lines(rows);
    std::vector<T> col(static_cast<std::size_t>(rows * lines * g.pz));
    std::vector<T> dres(static_cast<std::size_t>(cout * lines * g.pz));
    for (std::int64_t l0 = g.first_line(); l0 < g.end_line(); l0 += lines) {
        const std::int64_t l1 = std::min(g.end_line(), l0 + lines), cols = (l1 - l0) * g.pz;
        std::fill_n(dres.data(), cout * cols, T(0));
        detail::for_interior_lines(g, l0, l1, [&](std::int64_t cj, std::int64_t vi) {
            for (std::int64_t c = 0; c < cout; ++c) std::copy_n(dout.channel(c) + vi, d.z, dres.data() + c * cols + cj);
        });
        const auto dslab = matrix(dres.data(), cout, cols, cols);
        detail::gather_columns(padded.data(), cin, k, g, l0, cols, col.data());
        matrix(dweight, cout, rows, rows).noalias() += dslab * matrix(col.data(), rows, cols, cols).transpose();
        if (want_input_grad) {
            matrix(col.data(), rows, cols, cols).noalias() = matrix(weight, cout, rows, rows).transpose() * dslab;
            detail::scatter_columns(col.data(), cin, k, g, l0, cols, dpadded.data());
        }
    }
    if (want_input_grad) {
        for (std::int64_t c = 0; c < cin; ++c) {
            const T* s = dpadded.data() + c * g.stride;
            T* o = din.channel(c);
            for (std::int64_t x = 0; x < d.x; ++x)
                for (std::int64_t y = 0; y < d.y; ++y) std::copy_n(s + g.at(x, y, 0), d.z, o + (x * d.y + y) * d.z);
        }
    }
    return din;
}

// ---------------------------------------------------------------------------
// 2x2x2 stride-2 convolution (downsampling). Weight layout [Cout, Cin, 2, 2, 2].

namespace detail {

inline void require_even(Dims3 d) {
    if (d.x % 2 || d.y % 2 || d.z % 2) throw ShapeError("downsampling requires even spatial dims, got " + to_string(d));
}

// Gathers (scatter when `Scatter`) 2x2x2 blocks for output planes [x0, x1).
template <bool Scatter, class T>
void space_to_depth(std::conditional_t<Scatter, Tensor<T>&, const Tensor<T>&> fine, std::int64_t x0, std::int64_t x1,
                    std::conditional_t<Scatter, const T*, T*> col) {
    const Dims3 d = fine.spatial();
    const Dims3 o{d.x / 2, d.y / 2, d.z / 2};
    const std::int64_t cols = (x1 - x0) * o.y * o.z;
    std::int64_t row = 0;
    for (std::int64_t ci = 0; ci < fine.channels(); ++ci) {
        auto* ch = fine.channel(ci);
        for (int dx = 0; dx < 2; ++dx) {
            for (int dy = 0; dy < 2; ++dy) {
                for (int dz = 0; dz < 2; ++dz, ++row) {
                    auto* line = col + row * cols;
                    std::int64_t c = 0;
                    for (std::int64_t x = x0; x < x1; ++x) {
                        for (std::int64_t y = 0; y < o.y; ++y) {
                            auto* s = ch + ((2 * x + dx) * d.y + 2 * y + dy) * d.z + dz;
                            for (std::int64_t z = 0; z < o.z; ++z, ++c) {
                                if constexpr (Scatter) {
                                    s[2 * z] += line[c];
                                } else {
                                    line[c] = s[2 * z];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

}  // namespace detail

template <class T>
Tensor<T> down_conv_forward(const Tensor<T>& in, const T* weight, const T* bias, std::int64_t cout) {
    const Dims3 d = in.spatial();
    detail::require_even(d);
    const Dims3 o{d.x / 2, d.y / 2, d.z / 2};
    const std::int64_t rows = in.channels() * 8, plane = o.y * o.z, v = o.count();
    Tensor<T> out(cout, o);
    const std::int64_t step = slab_planes(rows, plane, o.x);
    std::vector<T> col(static_cast<std::size_t>(rows * step * plane));
    for (std::int64_t x0 = 0; x0 < o.x; x0 += step) {
        const std::int64_t x1 = std::min(o.x, x0 + step), cols = (x1 - x0) * plane;
        detail::space_to_depth<false, T>(in, x0, x1, col.data());
        matrix(out.data() + x0 * plane, cout, cols, v).noalias() =
            matrix(weight, cout, rows, rows) * matrix(col.data(), rows, cols, cols);
    }
    detail::add_bias(out, bias);
    return out;
}

template <class T>
Tensor<T> down_conv_backward(const Tensor<T>& in, const T* weight, const Tensor<T>& dout, T* dweight, T* dbias) {
    const Dims3 d = in.spatial();
    const Dims3 o{d.x / 2, d.y / 2, d.z / 2};
    const std::int64_t cout = dout.channels(), rows = in.channels() * 8, plane = o.y * o.z, v = o.count();
    Tensor<T> din(in.channels(), d);
    detail::accumulate_bias_grad(dout, dbias);
    const std::int64_t step = slab_planes(rows, plane, o.x);
    std::vector<T> col(static_cast<std::size_t>(rows * step * plane));
    for (std::int64_t x0 = 0; x0 < o.x; x0 += step) {
        const std::int64_t x1 = std::min(o.x, x0 + step), cols = (x1 - x0) * plane;
        const auto dout_slab = matrix(dout.data() + x0 * plane, cout, cols, v);
        detail::space_to_depth<false, T>(in, x0, x1, col.data());
        matrix(dweight, cout, rows, rows).noalias() += dout_slab * matrix(col.data(), rows, cols, cols).transpose();
        matrix(col.data(), rows, cols, cols).noalias() = matrix(weight, cout, rows, rows).transpose() * dout_slab;
        detail::space_to_depth<true, T>(din, x0, x1, col.data());
    }
    return din;
}

// ---------------------------------------------------------------------------
// 2x2x2 stride-2 transposed convolution (upsampling). Weight layout
// [Cin, Cout, 2, 2, 2], i.e. a [Cin, Cout*8] matrix.

template <class T>
Tensor<T> up_conv_forward(const Tensor<T>& in, const T* weight, const T* bias, std::int64_t cout) {
    const Dims3 d = in.spatial();
    const Dims3 o{d.x * 2, d.y * 2, d.z * 2};
    const std::int64_t cin = in.channels(), rows = cout * 8, plane = d.y * d.z, v = d.count();
    Tensor<T> out(cout, o);
    const std::int64_t step = slab_planes(rows, plane, d.x);
    std::vector<T> col(static_cast<std::size_t>(rows * step * plane));
    for (std::int64_t x0 = 0; x0 < d.x; x0 += step) {
        const std::int64_t x1 = std::min(d.x, x0 + step), cols = (x1 - x0) * plane;
        matrix(col.data(), rows, cols, cols).noalias() =
            matrix(weight, cin, rows, rows).transpose() * matrix(in.data() + x0 * plane, cin, cols, v);
        detail::space_to_depth<true, T>(out, x0, x1, col.data());
    }
    detail::add_bias(out, bias);
    return out;
}

template <class T>
Tensor<T> up_conv_backward(const Tensor<T>& in, const T* weight, const Tensor<T>& dout, T* dweight, T* dbias) {
    const Dims3 d = in.spatial();
    const std::int64_t cin = in.channels(), cout = dout.channels(), rows = cout * 8, plane = d.y * d.z, v = d.count();
    Tensor<T> din(cin, d);
    detail::accumulate_bias_grad(dout, dbias);
    const std::int64_t step = slab_planes(rows, plane, d.x);
    std::vector<T> col(static_cast<std::size_t>(rows * step * plane));
    for (std::int64_t x0 = 0; x0 < d.x; x0 += step) {
        const std::int64_t x1 = std::min(d.x, x0 + step), cols = (x1 - x0) * plane;
        detail::space_to_depth<false, T>(dout, x0, x1, col.data());
        const auto in_slab = matrix(in.data() + x0 * plane, cin, cols, v);
        const auto dcol = matrix(col.data(), rows, cols, cols);
        matrix(dweight, cin, rows, rows).noalias() += in_slab * dcol.transpose();
        matrix(din.data() + x0 * plane, cin, cols, v).noalias() = matrix(weight, cin, rows, rows) * dcol;
    }
    return din;
}

// ---------------------------------------------------------------------------
// Batch normalization over the spatial axes of a single sample.

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

template <class T>
struct BatchNormCache {
    Tensor<T> xhat;
    std::vector<T> inv_std;
    bool training = true;
};

/// In training mode statistics come from the input (and running statistics
/// are updated when `running_mean` is non-null and `update_running`); in
/// evaluation mode the running statistics are used.
template <class T>
void batch_norm_forward(Tensor<T>& x, const T* gamma, const T* beta, T* running_mean, T* running_var, bool training,
                        bool update_running, BatchNormCache<T>* cache) {
    const auto n = x.voxels();
    const auto channels = x.channels();
    if (cache) {
        cache->training = training;
        cache->inv_std.assign(static_cast<std::size_t>(channels), T(0));
        cache->xhat = Tensor<T>(x.shape());
    }
    for (std::int64_t c = 0; c < channels; ++c) {
        T* p = x.channel(c);
        double mean, var;
        if (training) {
            double s = 0;
            for (std::int64_t i = 0; i < n; ++i) s += p[i];
            mean = s / static_cast<double>(n);
            double ss = 0;
            for (std::int64_t i = 0; i < n; ++i) {
                const double t = p[i] - mean;
                ss += t * t;
            }
            var = ss / static_cast<double>(n);
            if (update_running && running_mean) {
                const double unbiased = n > 1 ? ss / static_cast<double>(n - 1) : var;
                running_mean[c] = static_cast<T>((1 - kBatchNormMomentum) * running_mean[c] + kBatchNormMomentum * mean);
                running_var[c] = static_cast<T>((1 - kBatchNormMomentum) * running_var[c] + kBatchNormMomentum * unbiased);
            }
        } else {
            mean = running_mean[c];
            var = running_var[c];
        }
        const T inv = static_cast<T>(1.0 / std::sqrt(var + kBatchNormEps));
        const T m = static_cast<T>(mean), g = gamma[c], b = beta[c];
        if (cache) {
            cache->inv_std[c] = inv;
            T* xh = cache->xhat.channel(c);
            for (std::int64_t i = 0; i < n; ++i) {
                xh[i] = (p[i] - m) * inv;
                p[i] = g * xh[i] + b;
            }
        } else {
            for (std::int64_t i = 0; i < n; ++i) p[i] = g * ((p[i] - m) * inv) + b;
        }
    }
}

/// `dy` is overwritten with dL/dx.
template <class T>
void batch_norm_backward(Tensor<T>& dy, const BatchNormCache<T>& cache, const T* gamma, T* dgamma, T* dbeta) {
    const auto n = dy.voxels();
    for (std::int64_t c = 0; c < dy.channels(); ++c) {
        T* g = dy.channel(c);
        const T* xh = cache.xhat.channel(c);
        double sum_dy = 0, sum_dy_xhat = 0;
        for (std::int64_t i = 0; i < n; ++i) {
            sum_dy += g[i];
            sum_dy_xhat += static_cast<double>(g[i]) * xh[i];
        }
        dgamma[c] += static_cast<T>(sum_dy_xhat);
        dbeta[c] += static_cast<T>(sum_dy);
        const T scale = gamma[c] * cache.inv_std[c];
        if (cache.training) {
            const T mean_dy = static_cast<T>(sum_dy / static_cast<double>(n));
            const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / static_cast<double>(n));
            for (std::int64_t i = 0; i < n; ++i) g[i] = scale * (g[i] - mean_dy - xh[i] * mean_dy_xhat);
        } else {
            for (std::int64_t i = 0; i < n; ++i) g[i] *= scale;
        }
    }
}

// ---------------------------------------------------------------------------
// Pointwise helpers.

template <class T>
void relu_inplace(Tensor<T>& x) {
    for (auto& v : x.storage()) v = v > T(0) ? v : T(0);
}

/// Zeroes gradient entries where the ReLU output was not positive.
template <class T>
void relu_backward_inplace(Tensor<T>& grad, const Tensor<T>& output) {
    for (std::int64_t i = 0; i < grad.size(); ++i) {
        if (!(output[i] > T(0))) grad[i] = T(0);
    }
}

template <class T>
T sigmoid(T v) {
    if (v >= T(0)) {
        const T e = std::exp(-v);
        return T(1) / (T(1) + e);
    }
    const T e = std::exp(v);
    return e / (T(1) + e);
}

/// Per-voxel softmax over channels, in place.
template <class T>
void softmax_channels_inplace(Tensor<T>& x) {
    const auto n = x.voxels();
    const auto k = x.channels();
    for (std::int64_t i = 0; i < n; ++i) {
        T m = x[i];
        for (std::int64_t c = 1; c < k; ++c) m = std::max(m, x[c * n + i]);
        T s = 0;
        for (std::int64_t c = 0; c < k; ++c) {
            T& v = x[c * n + i];
            v = std::exp(v - m);
            s += v;
        }
        for (std::int64_t c = 0; c < k; ++c) x[c * n + i] /= s;
    }
}

/// Given probabilities p and dL/dp, returns dL/dlogits.
template <class T>
Tensor<T> softmax_backward(const Tensor<T>& probs, const Tensor<T>& dprobs) {
    const auto n = probs.voxels();
    const auto k = probs.channels();
    Tensor<T> out(probs.shape());
    for (std::int64_t i = 0; i < n; ++i) {
        T dot = 0;
        for (std::int64_t c = 0; c < k; ++c) dot += probs[c * n + i] * dprobs[c * n + i];
        for (std::int64_t c = 0; c < k; ++c) out[c * n + i] = probs[c * n + i] * (dprobs[c * n + i] - dot);
    }
    return out;
}

/// Nearest-neighbour upsampling by integer factors per axis.
template <class T>
Tensor<T> upsample_nearest(const Tensor<T>& in, Dims3 target) {
    const Dims3 d = in.spatial();
    if (target.x % d.x || target.y % d.y || target.z % d.z) {
        throw ShapeError("cannot resample " + to_string(d) + " to " + to_string(target));
    }
    const std::int64_t fx = target.x / d.x, fy = target.y / d.y, fz = target.z / d.z;
    Tensor<T> out(in.channels(), target);
    for (std::int64_t c = 0; c < in.channels(); ++c) {
        const T* s = in.channel(c);
        T* o = out.channel(c);
        for (std::int64_t x = 0; x < target.x; ++x) {
            for (std::int64_t y = 0; y < target.y; ++y) {
                const T* line = s + ((x / fx) * d.y + y / fy) * d.z;
                T* dst = o + (x * target.y + y) * target.z;
                for (std::int64_t z = 0; z < target.z; ++z) dst[z] = line[z / fz];
            }
        }
    }
    return out;
}

/// Adjoint of upsample_nearest: sums each block.
template <class T>
Tensor<T> upsample_nearest_backward(const Tensor<T>& dout, Dims3 coarse) {
    const Dims3 t = dout.spatial();
    const std::int64_t fx = t.x / coarse.x, fy = t.y / coarse.y, fz = t.z / coarse.z;
    Tensor<T> out(dout.channels(), coarse);
    for (std::int64_t c = 0; c < dout.channels(); ++c) {
        const T* s = dout.channel(c);
        T* o = out.channel(c);
        for (std::int64_t x = 0; x < t.x; ++x) {
            for (std::int64_t y = 0; y < t.y; ++y) {
                T* line = o + ((x / fx) * coarse.y + y / fy) * coarse.z;
                const T* src = s + (x * t.y + y) * t.z;
                for (std::int64_t z = 0; z < t.z; ++z) line[z / fz] += src[z];
            }
        }
    }
    return out;
}

}  // namespace brainunet::nn
