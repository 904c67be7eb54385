#pragma once
// Residual convolution block and attention gate, with explicit backward passes.
//
// Both operate on named tensors of a ParameterSet under a common prefix, e.g.
// "enc0.conv1.weight". Gradients accumulate into a second ParameterSet with
// the same trainable names.

#include <string>
#include <vector>

#include "brainunet/error.hpp"
#include "brainunet/nn/ops.hpp"
#include "brainunet/parameters.hpp"
#include "brainunet/tensor.hpp"

namespace brainunet {

/// How batch normalization behaves during a forward pass.
struct NormMode {
    bool training = false;
    bool update_running_stats = true;
};

// ---------------------------------------------------------------------------
// Residual block:
//   out = ReLU(BN2(Conv2(ReLU(BN1(Conv1(x))))) + Proj(x))
// Proj is the identity when cin == cout and a biased 1x1x1 convolution
// otherwise. With residual disabled the skip term is dropped.

struct ResidualBlockSpec {
    std::string prefix;
    std::int64_t in_channels = 0;
    std::int64_t out_channels = 0;
    bool residual = true;

    bool has_projection() const { return residual && in_channels != out_channels; }
    std::string name(const char* suffix) const { return prefix + "." + suffix; }
};

template <class T>
struct ResidualBlockCache {
    nn::BatchNormCache<T> bn1, bn2;
    Tensor<T> hidden;  // ReLU(BN1(Conv1(x))), the input of Conv2
    Tensor<T> out;
};

template <class T>
Tensor<T> residual_block_forward(const ResidualBlockSpec& spec, ParameterSet<T>& params, const Tensor<T>& x,
                                 NormMode mode, ResidualBlockCache<T>* cache) {
    if (x.channels() != spec.in_channels) {
        throw ShapeError(spec.prefix + ": expected " + std::to_string(spec.in_channels) + " input channels, got " +
                         std::to_string(x.channels()));
    }
    auto bn = [&](Tensor<T>& h, const char* which, nn::BatchNormCache<T>* c) {
        const std::string p = spec.prefix + "." + which;
        nn::batch_norm_forward(h, params.data(p + ".weight"), params.data(p + ".bias"), params.data(p + ".running_mean"),
                               params.data(p + ".running_var"), mode.training, mode.update_running_stats, c);
    };
    Tensor<T> h = nn::conv3d_forward<T>(x, params.data(spec.name("conv1.weight")), nullptr, spec.out_channels, 3);
    bn(h, "bn1", cache ? &cache->bn1 : nullptr);
    nn::relu_inplace(h);
    Tensor<T> out = nn::conv3d_forward<T>(h, params.data(spec.name("conv2.weight")), nullptr, spec.out_channels, 3);
    if (cache) {
        cache->hidden = std::move(h);
    } else {
        h = Tensor<T>();
    }
    bn(out, "bn2", cache ? &cache->bn2 : nullptr);
    if (spec.residual) {
        if (spec.has_projection()) {
            const Tensor<T> skip = nn::conv3d_forward<T>(x, params.data(spec.name("proj.weight")),
                                                         params.data(spec.name("proj.bias")), spec.out_channels, 1);
            for (std::int64_t i = 0; i < out.size(); ++i) out[i] += skip[i];
        } else {
            for (std::int64_t i = 0; i < out.size(); ++i) out[i] += x[i];
        }
    }
    nn::relu_inplace(out);
    if (cache) cache->out = out;
    return out;
}

/// Returns dL/dx and accumulates parameter gradients into `grads`.
template <class T>
Tensor<T> residual_block_backward(const ResidualBlockSpec& spec, const ParameterSet<T>& params,
                                  ParameterSet<T>& grads, const Tensor<T>& x, const ResidualBlockCache<T>& cache,
                                  Tensor<T> dout) {
    nn::relu_backward_inplace(dout, cache.out);
    Tensor<T> dx;
    if (spec.residual) {
        if (spec.has_projection()) {
            dx = nn::conv3d_backward<T>(x, params.data(spec.name("proj.weight")), 1, dout,
                                        grads.data(spec.name("proj.weight")), grads.data(spec.name("proj.bias")));
        } else {
            dx = dout;
        }
    }
    nn::batch_norm_backward(dout, cache.bn2, params.data(spec.name("bn2.weight")), grads.data(spec.name("bn2.weight")),
                            grads.data(spec.name("bn2.bias")));
    Tensor<T> dh = nn::conv3d_backward<T>(cache.hidden, params.data(spec.name("conv2.weight")), 3, dout,
                                          grads.data(spec.name("conv2.weight")), nullptr);
    dout = Tensor<T>();
    nn::relu_backward_inplace(dh, cache.hidden);
    nn::batch_norm_backward(dh, cache.bn1, params.data(spec.name("bn1.weight")), grads.data(spec.name("bn1.weight")),
                            grads.data(spec.name("bn1.bias")));
    Tensor<T> dconv = nn::conv3d_backward<T>(x, params.data(spec.name("conv1.weight")), 3, dh,
                                             grads.data(spec.name("conv1.weight")), nullptr);
    if (dx.empty()) return dconv;
    for (std::int64_t i = 0; i < dx.size(); ++i) dx[i] += dconv[i];
    return dx;
}

// ---------------------------------------------------------------------------
// Attention gate on a skip connection:
//   q     = ReLU(Wx x + bx + upsample(Wg g + bg))
//   alpha = sigmoid(psi q + b_psi)              one coefficient per voxel
//   out   = alpha * x                           broadcast over channels
// g is the coarser decoder feature map; the gating term is computed at g's
// resolution and nearest-neighbour upsampled to x's grid.

struct AttentionGateSpec {
    std::string prefix;
    std::int64_t skip_channels = 0;
    std::int64_t gate_channels = 0;
    std::int64_t inter_channels = 0;

    std::string name(const char* suffix) const { return prefix + "." + suffix; }
};

template <class T>
struct AttentionGateCache {
    Tensor<T> hidden;  // q
    Tensor<T> alpha;   // [1, x, y, z]
};

template <class T>
Tensor<T> attention_gate_forward(const AttentionGateSpec& spec, const ParameterSet<T>& params, const Tensor<T>& x,
                                 const Tensor<T>& g, AttentionGateCache<T>* cache, Tensor<T>* alpha_out = nullptr) {
    if (x.channels() != spec.skip_channels || g.channels() != spec.gate_channels) {
        throw ShapeError(spec.prefix + ": channel mismatch");
    }
    const Dims3 xd = x.spatial(), gd = g.spatial();
    if (gd.x > xd.x || gd.y > xd.y || gd.z > xd.z || xd.x % gd.x || xd.y % gd.y || xd.z % gd.z) {
        throw ShapeError(spec.prefix + ": gating grid " + to_string(gd) + " incompatible with skip grid " +
                         to_string(xd));
    }
    Tensor<T> q = nn::conv3d_forward<T>(x, params.data(spec.name("wx.weight")), params.data(spec.name("wx.bias")),
                                        spec.inter_channels, 1);
    {
        const Tensor<T> qg = nn::conv3d_forward<T>(g, params.data(spec.name("wg.weight")),
                                                   params.data(spec.name("wg.bias")), spec.inter_channels, 1);
        const Tensor<T> up = gd == xd ? qg : nn::upsample_nearest(qg, xd);
        for (std::int64_t i = 0; i < q.size(); ++i) q[i] += up[i];
    }
    nn::relu_inplace(q);
    Tensor<T> alpha =
        nn::conv3d_forward<T>(q, params.data(spec.name("psi.weight")), params.data(spec.name("psi.bias")), 1, 1);
    for (auto& v : alpha.storage()) v = nn::sigmoid(v);
    Tensor<T> out(x.shape());
    const auto n = x.voxels();
    for (std::int64_t c = 0; c < x.channels(); ++c) {
        const T* xs = x.channel(c);
        T* o = out.channel(c);
        for (std::int64_t i = 0; i < n; ++i) o[i] = alpha[i] * xs[i];
    }
    if (alpha_out) *alpha_out = alpha;
    if (cache) {
        cache->hidden = std::move(q);
        cache->alpha = std::move(alpha);
    }
    return out;
}

template <class T>
struct AttentionGateGrads {
    Tensor<T> dx;
    Tensor<T> dg;
};

template <class T>
AttentionGateGrads<T> attention_gate_backward(const AttentionGateSpec& spec, const ParameterSet<T>& params,
                                              ParameterSet<T>& grads, const Tensor<T>& x, const Tensor<T>& g,
                                              const AttentionGateCache<T>& cache, const Tensor<T>& dout) {
    const auto n = x.voxels();
    AttentionGateGrads<T> r;
    r.dx = Tensor<T>(x.shape());
    Tensor<T> ds(std::vector<std::int64_t>{1, x.spatial().x, x.spatial().y, x.spatial().z});
    for (std::int64_t c = 0; c < x.channels(); ++c) {
        const T* xs = x.channel(c);
        const T* d = dout.channel(c);
        T* dxs = r.dx.channel(c);
        for (std::int64_t i = 0; i < n; ++i) {
            dxs[i] = cache.alpha[i] * d[i];
            ds[i] += d[i] * xs[i];
        }
    }
    for (std::int64_t i = 0; i < n; ++i) ds[i] *= cache.alpha[i] * (T(1) - cache.alpha[i]);
    Tensor<T> dq = nn::conv3d_backward<T>(cache.hidden, params.data(spec.name("psi.weight")), 1, ds,
                                          grads.data(spec.name("psi.weight")), grads.data(spec.name("psi.bias")));
    nn::relu_backward_inplace(dq, cache.hidden);
    const Tensor<T> dx_gate = nn::conv3d_backward<T>(x, params.data(spec.name("wx.weight")), 1, dq,
                                                     grads.data(spec.name("wx.weight")), grads.data(spec.name("wx.bias")));
    for (std::int64_t i = 0; i < r.dx.size(); ++i) r.dx[i] += dx_gate[i];
    const Dims3 gd = g.spatial();
    const Tensor<T> dqg = gd == x.spatial() ? dq : nn::upsample_nearest_backward(dq, gd);
    r.dg = nn::conv3d_backward<T>(g, params.data(spec.name("wg.weight")), 1, dqg, grads.data(spec.name("wg.weight")),
                                  grads.data(spec.name("wg.bias")));
    return r;
}

}  // namespace brainunet
