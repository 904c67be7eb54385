#pragma once
// Tversky loss over soft class-probability maps.
//
//   TI_k = (sum y p + s) / (sum y p + alpha sum p (1 - y) + beta sum y (1 - p) + s)
//   loss = 1 - mean_k TI_k
//
// By default the mean runs over the tumor classes 1..K-1.

#include <cmath>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "brainunet/error.hpp"
#include "brainunet/tensor.hpp"

namespace brainunet {

struct TverskyParams {
    double alpha = 0.3;
    double beta = 0.7;
    double smooth = 1e-6;
    bool include_background = false;

    void validate() const {
        if (!(alpha >= 0) || !(beta >= 0)) throw ValueError("Tversky alpha and beta must be non-negative");
        if (!(alpha + beta > 0)) throw ValueError("Tversky alpha + beta must be positive");
        if (!(smooth > 0)) throw ValueError("Tversky smoothing must be positive");
    }
};

inline nlohmann::json to_json(const TverskyParams& p) {
    return {{"alpha", p.alpha}, {"beta", p.beta}, {"smooth", p.smooth}, {"include_background", p.include_background}};
}

inline TverskyParams tversky_params_from_json(const nlohmann::json& j) {
    TverskyParams p;
    p.alpha = j.value("alpha", p.alpha);
    p.beta = j.value("beta", p.beta);
    p.smooth = j.value("smooth", p.smooth);
    p.include_background = j.value("include_background", p.include_background);
    p.validate();
    return p;
}

struct TverskyResult {
    std::vector<double> per_class;  // indexed by class; background entry is NaN when excluded
    double mean = 0;
    double loss() const { return 1.0 - mean; }
};

namespace loss_detail {

struct ClassSums {
    double tp = 0, fp = 0, fn = 0;
};

template <class T>
std::vector<ClassSums> class_sums(const Tensor<T>& pred, const Tensor<T>& truth) {
    if (pred.shape() != truth.shape()) {
        throw ShapeError("prediction " + shape_string(pred.shape()) + " and truth " + shape_string(truth.shape()) +
                         " differ in shape");
    }
    if (pred.rank() < 2) throw ShapeError("expected a [classes, ...] tensor");
    const auto n = pred.size() / pred.dim(0);
    std::vector<ClassSums> s(static_cast<std::size_t>(pred.dim(0)));
    for (std::int64_t c = 0; c < pred.dim(0); ++c) {
        const T* p = pred.data() + c * n;
        const T* y = truth.data() + c * n;
        double tp = 0, sp = 0, sy = 0;
        for (std::int64_t i = 0; i < n; ++i) {
            tp += static_cast<double>(p[i]) * y[i];
            sp += p[i];
            sy += y[i];
        }
        s[c] = {tp, sp - tp, sy - tp};
    }
    return s;
}

inline int first_class(const TverskyParams& p, std::int64_t classes) {
    if (p.include_background || classes == 1) return 0;
    return 1;
}

}  // namespace loss_detail

/// pred and truth are [classes, ...] maps with values in [0, 1].
template <class T>
TverskyResult tversky_index(const Tensor<T>& pred, const Tensor<T>& truth, const TverskyParams& params = {}) {
    params.validate();
    const auto sums = loss_detail::class_sums(pred, truth);
    const int c0 = loss_detail::first_class(params, pred.dim(0));
    TverskyResult r;
    r.per_class.assign(sums.size(), std::nan(""));
    double total = 0;
    for (std::size_t c = c0; c < sums.size(); ++c) {
        const auto& s = sums[c];
        r.per_class[c] = (s.tp + params.smooth) / (s.tp + params.alpha * s.fp + params.beta * s.fn + params.smooth);
        total += r.per_class[c];
    }
    r.mean = total / static_cast<double>(sums.size() - c0);
    return r;
}

template <class T>
double tversky_loss(const Tensor<T>& pred, const Tensor<T>& truth, const TverskyParams& params = {}) {
    return tversky_index(pred, truth, params).loss();
}

/// dLoss/dpred for tversky_loss.
template <class T>
Tensor<T> tversky_loss_gradient(const Tensor<T>& pred, const Tensor<T>& truth, const TverskyParams& params = {}) {
    params.validate();
    const auto sums = loss_detail::class_sums(pred, truth);
    const int c0 = loss_detail::first_class(params, pred.dim(0));
    const double scale = -1.0 / static_cast<double>(sums.size() - c0);
    const double a = params.alpha, b = params.beta;
    Tensor<T> grad(pred.shape());
    const auto n = pred.size() / pred.dim(0);
    for (std::size_t c = c0; c < sums.size(); ++c) {
        const auto& s = sums[c];
        const double num = s.tp + params.smooth;
        const double den = s.tp + a * s.fp + b * s.fn + params.smooth;
        // d num/dp = y, d den/dp = y + a (1 - y) - b y
        const double inv_den = 1.0 / den, ratio = num / (den * den);
        const T* y = truth.data() + c * n;
        T* g = grad.data() + c * n;
        for (std::int64_t i = 0; i < n; ++i) {
            const double yi = y[i];
            g[i] = static_cast<T>(scale * (yi * inv_den - ratio * (yi + a * (1 - yi) - b * yi)));
        }
    }
    return grad;
}

/// Soft Dice per class, (2 sum y p + 2 s) / (sum p + sum y + 2 s), averaged the
/// same way as the Tversky index. Equals the Tversky index at alpha = beta = 0.5.
template <class T>
TverskyResult soft_dice(const Tensor<T>& pred, const Tensor<T>& truth, const TverskyParams& params = {}) {
    const auto sums = loss_detail::class_sums(pred, truth);
    const int c0 = loss_detail::first_class(params, pred.dim(0));
    TverskyResult r;
    r.per_class.assign(sums.size(), std::nan(""));
    double total = 0;
    for (std::size_t c = c0; c < sums.size(); ++c) {
        const auto& s = sums[c];
        const double sp = s.tp + s.fp, sy = s.tp + s.fn;
        r.per_class[c] = (2 * s.tp + 2 * params.smooth) / (sp + sy + 2 * params.smooth);
        total += r.per_class[c];
    }
    r.mean = total / static_cast<double>(sums.size() - c0);
    return r;
}

}  // namespace brainunet
