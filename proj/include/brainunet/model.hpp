#pragma once
// BrainUNet: a 3D U-shaped encoder-decoder with residual blocks and
// attention-gated skip connections.
//
// With depth L and base width F, stage i has F * 2^i filters:
//
//   enc_i        residual block            -> F*2^i
//   down_i       2x2x2 stride-2 conv       (keeps channels)
//   bottleneck   residual block            -> F*2^L
//   up_i         2x2x2 transposed conv     F*2^(i+1) -> F*2^i
//   att_i        gate(skip = enc_i output, gating = decoder features below)
//   dec_i        residual block on [up_i, gated skip] -> F*2^i
//   head         1x1x1 conv -> classes, softmax over channels
//
// Tensors are serialized in layout() order.

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "brainunet/blocks.hpp"
#include "brainunet/error.hpp"
#include "brainunet/nn/ops.hpp"
#include "brainunet/parameters.hpp"
#include "brainunet/tensor.hpp"
#include "brainunet/volume.hpp"

namespace brainunet {

struct ModelConfig {
    int in_channels = kNumModalities;
    int out_classes = kNumClasses;
    int depth = 4;
    int base_filters = 32;
    bool attention_enabled = true;
    bool residual_enabled = true;

    std::int64_t filters(int stage) const { return static_cast<std::int64_t>(base_filters) << stage; }
    /// Attention intermediate width: half the skip channels (at least 1).
    std::int64_t attention_channels(int stage) const { return std::max<std::int64_t>(1, filters(stage) / 2); }

    void validate() const {
        if (in_channels < 1 || out_classes < 1) throw ValueError("channel counts must be positive");
        if (depth < 1 || depth > 8) throw ValueError("depth must lie in [1, 8]");
        if (base_filters < 1) throw ValueError("base_filters must be at least 1");
    }

    /// Input spatial dims must be divisible by 2^depth.
    void check_input(Dims3 d) const {
        const std::int64_t m = std::int64_t{1} << depth;
        if (d.x % m || d.y % m || d.z % m || d.x < m || d.y < m || d.z < m) {
            throw ShapeError("input dims " + to_string(d) + " are not divisible by 2^depth = " + std::to_string(m));
        }
    }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline nlohmann::json to_json(const ModelConfig& c) {
    return {{"in_channels", c.in_channels},         {"out_classes", c.out_classes},
            {"depth", c.depth},                     {"base_filters", c.base_filters},
            {"attention_enabled", c.attention_enabled}, {"residual_enabled", c.residual_enabled},
            {"normalization", "batch"}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.in_channels = j.value("in_channels", c.in_channels);
    c.out_classes = j.value("out_classes", c.out_classes);
    c.depth = j.value("depth", c.depth);
    c.base_filters = j.value("base_filters", c.base_filters);
    c.attention_enabled = j.value("attention_enabled", c.attention_enabled);
    c.residual_enabled = j.value("residual_enabled", c.residual_enabled);
    c.validate();
    return c;
}

enum class InitKind { HeNormal, Zeros, Ones };

struct TensorSpec {
    std::string name;
    std::vector<std::int64_t> shape;
    bool trainable = true;
    InitKind init = InitKind::Zeros;
    std::int64_t fan_in = 1;
};

namespace model_detail {

inline ResidualBlockSpec block(const ModelConfig& c, std::string prefix, std::int64_t cin, std::int64_t cout) {
    return {std::move(prefix), cin, cout, c.residual_enabled};
}

inline void append_block(std::vector<TensorSpec>& out, const ResidualBlockSpec& b) {
    const auto cin = b.in_channels, cout = b.out_channels;
    auto bn = [&](const char* which) {
        const std::string p = b.prefix + "." + which;
        out.push_back({p + ".weight", {cout}, true, InitKind::Ones, 1});
        out.push_back({p + ".bias", {cout}, true, InitKind::Zeros, 1});
        out.push_back({p + ".running_mean", {cout}, false, InitKind::Zeros, 1});
        out.push_back({p + ".running_var", {cout}, false, InitKind::Ones, 1});
    };
    out.push_back({b.name("conv1.weight"), {cout, cin, 3, 3, 3}, true, InitKind::HeNormal, cin * 27});
    bn("bn1");
    out.push_back({b.name("conv2.weight"), {cout, cout, 3, 3, 3}, true, InitKind::HeNormal, cout * 27});
    bn("bn2");
    if (b.has_projection()) {
        out.push_back({b.name("proj.weight"), {cout, cin, 1, 1, 1}, true, InitKind::HeNormal, cin});
        out.push_back({b.name("proj.bias"), {cout}, true, InitKind::Zeros, 1});
    }
}

}  // namespace model_detail

inline ResidualBlockSpec encoder_block(const ModelConfig& c, int i) {
    return model_detail::block(c, "enc" + std::to_string(i), i == 0 ? c.in_channels : c.filters(i - 1), c.filters(i));
}
inline ResidualBlockSpec bottleneck_block(const ModelConfig& c) {
    return model_detail::block(c, "bottleneck", c.filters(c.depth - 1), c.filters(c.depth));
}
inline ResidualBlockSpec decoder_block(const ModelConfig& c, int i) {
    return model_detail::block(c, "dec" + std::to_string(i), 2 * c.filters(i), c.filters(i));
}
inline AttentionGateSpec attention_gate(const ModelConfig& c, int i) {
    return {"att" + std::to_string(i), c.filters(i), c.filters(i + 1), c.attention_channels(i)};
}

/// Every tensor of the network, in serialization order.
inline std::vector<TensorSpec> layout(const ModelConfig& c) {
    c.validate();
    std::vector<TensorSpec> out;
    for (int i = 0; i < c.depth; ++i) {
        model_detail::append_block(out, encoder_block(c, i));
        const auto f = c.filters(i);
        const std::string p = "down" + std::to_string(i);
        out.push_back({p + ".weight", {f, f, 2, 2, 2}, true, InitKind::HeNormal, f * 8});
        out.push_back({p + ".bias", {f}, true, InitKind::Zeros, 1});
    }
    model_detail::append_block(out, bottleneck_block(c));
    for (int i = c.depth - 1; i >= 0; --i) {
        const auto f = c.filters(i), fg = c.filters(i + 1);
        const std::string up = "up" + std::to_string(i);
        out.push_back({up + ".weight", {fg, f, 2, 2, 2}, true, InitKind::HeNormal, fg});
        out.push_back({up + ".bias", {f}, true, InitKind::Zeros, 1});
        if (c.attention_enabled) {
            const auto a = attention_gate(c, i);
            out.push_back({a.name("wx.weight"), {a.inter_channels, f, 1, 1, 1}, true, InitKind::HeNormal, f});
            out.push_back({a.name("wx.bias"), {a.inter_channels}, true, InitKind::Zeros, 1});
            out.push_back({a.name("wg.weight"), {a.inter_channels, fg, 1, 1, 1}, true, InitKind::HeNormal, fg});
            out.push_back({a.name("wg.bias"), {a.inter_channels}, true, InitKind::Zeros, 1});
            out.push_back({a.name("psi.weight"), {1, a.inter_channels, 1, 1, 1}, true, InitKind::HeNormal,
                           a.inter_channels});
            out.push_back({a.name("psi.bias"), {1}, true, InitKind::Zeros, 1});
        }
        model_detail::append_block(out, decoder_block(c, i));
    }
    out.push_back({"head.weight", {c.out_classes, c.filters(0), 1, 1, 1}, true, InitKind::HeNormal, c.filters(0)});
    out.push_back({"head.bias", {c.out_classes}, true, InitKind::Zeros, 1});
    return out;
}

/// Exact trainable-parameter count for a configuration.
inline std::int64_t count_parameters(const ModelConfig& c) {
    std::int64_t n = 0;
    for (const auto& t : layout(c)) {
        if (t.trainable) n += Tensor<float>::element_count(t.shape);
    }
    return n;
}

/// Fresh tensor for one layout entry. The RNG stream depends only on
/// (seed, tensor name), so re-initializing a subset is reproducible.
template <class T>
Tensor<T> initialize_tensor(const TensorSpec& spec, std::uint64_t seed) {
    Tensor<T> t(spec.shape);
    switch (spec.init) {
        case InitKind::Zeros: break;
        case InitKind::Ones: t.fill(T(1)); break;
        case InitKind::HeNormal: {
            std::mt19937_64 rng(fnv1a(spec.name, seed ^ 0x2545F4914F6CDD1Dull));
            std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(spec.fan_in)));
            for (auto& v : t.storage()) v = static_cast<T>(dist(rng));
            break;
        }
    }
    return t;
}

template <class T>
ParameterSet<T> initialize_parameters(const ModelConfig& c, std::uint64_t seed) {
    ParameterSet<T> p;
    for (const auto& spec : layout(c)) p.add(spec.name, initialize_tensor<T>(spec, seed), spec.trainable);
    return p;
}

/// Intermediate activations kept for the backward pass.
template <class T>
struct ForwardCache {
    Tensor<T> input;
    std::vector<Tensor<T>> enc_out, down_out;
    std::vector<ResidualBlockCache<T>> enc_cache;
    ResidualBlockCache<T> bottleneck_cache;
    std::vector<Tensor<T>> dec_in_coarse;  // decoder features entering stage i (gating signal)
    std::vector<Tensor<T>> concat;         // [up_i, gated skip]
    std::vector<ResidualBlockCache<T>> dec_cache;
    std::vector<AttentionGateCache<T>> att_cache;
    Tensor<T> head_in;
    Tensor<T> probs;
};

template <class T>
class BrainUNet {
public:
    BrainUNet() : BrainUNet(ModelConfig{}) {}
    explicit BrainUNet(const ModelConfig& config, std::uint64_t seed = 0)
        : config_(config), params_(initialize_parameters<T>(config, seed)) {}
    BrainUNet(const ModelConfig& config, ParameterSet<T> params) : config_(config), params_(std::move(params)) {
        check_parameters();
    }

    const ModelConfig& config() const { return config_; }
    ParameterSet<T>& parameters() { return params_; }
    const ParameterSet<T>& parameters() const { return params_; }

    /// Names starting with one of these prefixes keep their running statistics
    /// fixed during training-mode forward passes.
    void set_frozen_prefixes(std::vector<std::string> p) { frozen_ = std::move(p); }
    const std::vector<std::string>& frozen_prefixes() const { return frozen_; }
    bool is_frozen(const std::string& name) const {
        for (const auto& p : frozen_) {
            if (name.compare(0, p.size(), p) == 0) return true;
        }
        return false;
    }

    /// Class probabilities [classes, x, y, z]. Pass a cache to enable backward().
    /// Attention maps are appended to `attention_maps` (deepest stage first) when given.
    Tensor<T> forward(const Tensor<T>& input, NormMode mode = {}, ForwardCache<T>* cache = nullptr,
                      std::vector<Tensor<T>>* attention_maps = nullptr) {
        if (input.rank() != 4 || input.channels() != config_.in_channels) {
            throw ShapeError("model input must be [" + std::to_string(config_.in_channels) + ", x, y, z], got " +
                             shape_string(input.shape()));
        }
        config_.check_input(input.spatial());
        const nn::DenormalGuard ftz;
        const int depth = config_.depth;
        std::vector<Tensor<T>> skips(depth);
        if (cache) {
            cache->input = input;
            cache->enc_out.assign(depth, {});
            cache->down_out.assign(depth, {});
            cache->enc_cache.assign(depth, {});
            cache->dec_in_coarse.assign(depth, {});
            cache->concat.assign(depth, {});
            cache->dec_cache.assign(depth, {});
            cache->att_cache.assign(depth, {});
        }
        Tensor<T> cur;
        const Tensor<T>* level_in = &input;
        for (int i = 0; i < depth; ++i) {
            const auto spec = encoder_block(config_, i);
            skips[i] = residual_block_forward(spec, params_, *level_in, block_mode(spec.prefix, mode),
                                              cache ? &cache->enc_cache[i] : nullptr);
            const std::string p = "down" + std::to_string(i);
            cur = nn::down_conv_forward<T>(skips[i], params_.data(p + ".weight"), params_.data(p + ".bias"),
                                           config_.filters(i));
            if (cache) cache->down_out[i] = cur;
            level_in = &cur;
        }
        const auto bspec = bottleneck_block(config_);
        Tensor<T> dec = residual_block_forward(bspec, params_, cur, block_mode(bspec.prefix, mode),
                                               cache ? &cache->bottleneck_cache : nullptr);
        cur = Tensor<T>();
        for (int i = depth - 1; i >= 0; --i) {
            const auto f = config_.filters(i);
            const Dims3 fine = skips[i].spatial();
            Tensor<T> concat(2 * f, fine);
            {
                const std::string p = "up" + std::to_string(i);
                const Tensor<T> up = nn::up_conv_forward<T>(dec, params_.data(p + ".weight"), params_.data(p + ".bias"), f);
                std::copy(up.storage().begin(), up.storage().end(), concat.data());
            }
            if (config_.attention_enabled) {
                Tensor<T> alpha;
                const Tensor<T> gated = attention_gate_forward(attention_gate(config_, i), params_, skips[i], dec,
                                                               cache ? &cache->att_cache[i] : nullptr,
                                                               attention_maps ? &alpha : nullptr);
                if (attention_maps) attention_maps->push_back(std::move(alpha));
                std::copy(gated.storage().begin(), gated.storage().end(), concat.data() + f * fine.count());
            } else {
                std::copy(skips[i].storage().begin(), skips[i].storage().end(), concat.data() + f * fine.count());
            }
            if (cache) {
                cache->dec_in_coarse[i] = std::move(dec);
                cache->enc_out[i] = std::move(skips[i]);
            } else {
                skips[i] = Tensor<T>();
            }
            const auto dspec = decoder_block(config_, i);
            dec = residual_block_forward(dspec, params_, concat, block_mode(dspec.prefix, mode),
                                         cache ? &cache->dec_cache[i] : nullptr);
            if (cache) cache->concat[i] = std::move(concat);
        }
        Tensor<T> probs = nn::conv3d_forward<T>(dec, params_.data("head.weight"), params_.data("head.bias"),
                                                config_.out_classes, 1);
        if (cache) cache->head_in = std::move(dec);
        nn::softmax_channels_inplace(probs);
        if (cache) cache->probs = probs;
        return probs;
    }

    /// Backpropagates dL/dprobs; accumulates into `grads` (see gradient_buffers())
    /// and returns dL/dinput.
    Tensor<T> backward(const ForwardCache<T>& cache, const Tensor<T>& dprobs, ParameterSet<T>& grads) const {
        const nn::DenormalGuard ftz;
        const int depth = config_.depth;
        Tensor<T> dlogits = nn::softmax_backward(cache.probs, dprobs);
        Tensor<T> ddec = nn::conv3d_backward<T>(cache.head_in, params_.data("head.weight"), 1, dlogits,
                                                grads.data("head.weight"), grads.data("head.bias"));
        dlogits = Tensor<T>();
        std::vector<Tensor<T>> dskip(depth);
        for (int i = 0; i < depth; ++i) {
            const auto f = config_.filters(i);
            const Dims3 fine = cache.enc_out[i].spatial();
            const Tensor<T> dconcat = residual_block_backward(decoder_block(config_, i), params_, grads,
                                                              cache.concat[i], cache.dec_cache[i], std::move(ddec));
            Tensor<T> dup(f, fine), dgated(f, fine);
            std::copy(dconcat.data(), dconcat.data() + f * fine.count(), dup.data());
            std::copy(dconcat.data() + f * fine.count(), dconcat.data() + 2 * f * fine.count(), dgated.data());
            const Tensor<T>& coarse = cache.dec_in_coarse[i];
            const std::string p = "up" + std::to_string(i);
            ddec = nn::up_conv_backward<T>(coarse, params_.data(p + ".weight"), dup, grads.data(p + ".weight"),
                                           grads.data(p + ".bias"));
            if (config_.attention_enabled) {
                auto g = attention_gate_backward(attention_gate(config_, i), params_, grads, cache.enc_out[i], coarse,
                                                 cache.att_cache[i], dgated);
                for (std::int64_t k = 0; k < ddec.size(); ++k) ddec[k] += g.dg[k];
                dskip[i] = std::move(g.dx);
            } else {
                dskip[i] = std::move(dgated);
            }
        }
        Tensor<T> dcur = residual_block_backward(bottleneck_block(config_), params_, grads, cache.down_out[depth - 1],
                                                 cache.bottleneck_cache, std::move(ddec));
        for (int i = depth - 1; i >= 0; --i) {
            const std::string p = "down" + std::to_string(i);
            Tensor<T> denc = nn::down_conv_backward<T>(cache.enc_out[i], params_.data(p + ".weight"), dcur,
                                                       grads.data(p + ".weight"), grads.data(p + ".bias"));
            for (std::int64_t k = 0; k < denc.size(); ++k) denc[k] += dskip[i][k];
            dskip[i] = Tensor<T>();
            const Tensor<T>& block_in = i == 0 ? cache.input : cache.down_out[i - 1];
            dcur = residual_block_backward(encoder_block(config_, i), params_, grads, block_in, cache.enc_cache[i],
                                           std::move(denc));
        }
        return dcur;
    }

    ParameterSet<T> gradient_buffers() const { return params_.zeros_like_trainable(); }

private:
    NormMode block_mode(const std::string& prefix, NormMode mode) const {
        if (is_frozen(prefix + ".")) mode.update_running_stats = false;
        return mode;
    }

    void check_parameters() const {
        for (const auto& spec : layout(config_)) {
            if (!params_.contains(spec.name)) throw ValueError("missing parameter '" + spec.name + "'");
            if (params_[spec.name].shape() != spec.shape) {
                throw ShapeError("parameter '" + spec.name + "' has shape " + shape_string(params_[spec.name].shape()) +
                                 ", expected " + shape_string(spec.shape));
            }
        }
    }

    ModelConfig config_;
    ParameterSet<T> params_;
    std::vector<std::string> frozen_;
};

}  // namespace brainunet
