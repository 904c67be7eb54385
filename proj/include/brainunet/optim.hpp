#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "brainunet/error.hpp"
#include "brainunet/parameters.hpp"

namespace brainunet {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam with bias correction. Moments are kept in double.
template <class T>
class Adam {
public:
    struct Moments {
        std::vector<double> m, v;
    };

    explicit Adam(AdamConfig config = {}) : config_(config) {
        if (!(config.lr > 0)) throw ValueError("learning rate must be positive");
    }

    const AdamConfig& config() const { return config_; }
    void set_lr(double lr) { config_.lr = lr; }
    std::int64_t steps() const { return steps_; }

    /// Applies one update to every trainable tensor named in `grads`, except
    /// those for which `skip` returns true.
    void step(ParameterSet<T>& params, const ParameterSet<T>& grads,
              const std::function<bool(const std::string&)>& skip = {}) {
        for (const auto& g : grads.entries()) {
            for (std::int64_t i = 0; i < g.value.size(); ++i) {
                if (!std::isfinite(static_cast<double>(g.value[i]))) {
                    throw TrainingError("non-finite gradient in parameter '" + g.name + "'");
                }
            }
        }
        ++steps_;
        const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
        const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
        for (const auto& g : grads.entries()) {
            if (skip && skip(g.name)) continue;
            auto& st = state_[g.name];
            const auto n = static_cast<std::size_t>(g.value.size());
            if (st.m.size() != n) {
                st.m.assign(n, 0.0);
                st.v.assign(n, 0.0);
            }
            auto& p = params[g.name];
            if (p.size() != g.value.size()) throw ShapeError("gradient shape mismatch for '" + g.name + "'");
            for (std::size_t i = 0; i < n; ++i) {
                const double gi = g.value[i];
                st.m[i] = config_.beta1 * st.m[i] + (1 - config_.beta1) * gi;
                st.v[i] = config_.beta2 * st.v[i] + (1 - config_.beta2) * gi * gi;
                const double mhat = st.m[i] / c1, vhat = st.v[i] / c2;
                p[i] = static_cast<T>(p[i] - config_.lr * mhat / (std::sqrt(vhat) + config_.eps));
            }
        }
    }

    const std::unordered_map<std::string, Moments>& state() const { return state_; }

private:
    AdamConfig config_;
    std::int64_t steps_ = 0;
    std::unordered_map<std::string, Moments> state_;
};

}  // namespace brainunet
