#pragma once

#include "cbmaudit/common/error.hpp"
#include "cbmaudit/core/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <span>

namespace cbmaudit::core {

/// Probability clamp inside the binary cross entropy.
constexpr double bce_clamp = 1e-7;

template <typename T>
struct LossResult {
    double value = 0;
    Tensor<T> grad; ///< d loss / d input of the loss
};

/// Mean over batch and concepts of -[y log p + (1-y) log(1-p)], p clamped to [eps, 1-eps].
/// grad is with respect to the probabilities.
template <typename T>
LossResult<T> bce_concept_loss(const Tensor<T>& probs, std::span<const std::uint8_t> targets)
{
    require(targets.size() == probs.size(), ErrorKind::shape_mismatch, "concept targets do not match predictions");
    require(!probs.empty(), ErrorKind::invalid_argument, "empty concept batch");
    LossResult<T> r{0.0, Tensor<T>(probs.shape())};
    const double scale = 1.0 / static_cast<double>(probs.size());
    double sum = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const double raw = probs[i];
        require(!std::isnan(raw), ErrorKind::divergence, "NaN concept probability");
        const double p = std::clamp(raw, bce_clamp, 1.0 - bce_clamp);
        const double y = targets[i];
        sum += -(y * std::log(p) + (1 - y) * std::log(1 - p));
        r.grad[i] = static_cast<T>(scale * (-(y / p) + (1 - y) / (1 - p)));
    }
    r.value = sum * scale;
    return r;
}

/// Binary cross entropy given pre-sigmoid logits; grad is with respect to the logits,
/// (sigmoid(z) - y) / count. Matches bce_concept_loss wherever the clamp is inactive.
template <typename T>
LossResult<T> bce_with_logits(const Tensor<T>& logits, std::span<const std::uint8_t> targets)
{
    require(targets.size() == logits.size(), ErrorKind::shape_mismatch, "concept targets do not match predictions");
    require(!logits.empty(), ErrorKind::invalid_argument, "empty concept batch");
    LossResult<T> r{0.0, Tensor<T>(logits.shape())};
    const double scale = 1.0 / static_cast<double>(logits.size());
    double sum = 0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double z = logits[i];
        require(std::isfinite(z), ErrorKind::divergence, "non-finite concept score");
        const double p = 1.0 / (1.0 + std::exp(-z));
        const double pc = std::clamp(p, bce_clamp, 1.0 - bce_clamp);
        const double y = targets[i];
        sum += -(y * std::log(pc) + (1 - y) * std::log(1 - pc));
        r.grad[i] = static_cast<T>(scale * (p - y));
    }
    r.value = sum * scale;
    return r;
}

/// Batch mean of -log softmax(logits)[label]; grad is with respect to the logits.
template <typename T>
LossResult<T> ce_task_loss(const Tensor<T>& logits, std::span<const int> labels)
{
    const std::size_t n = logits.dim(0), classes = logits.stride();
    require(labels.size() == n && n > 0, ErrorKind::shape_mismatch, "task labels do not match logits");
    LossResult<T> r{0.0, Tensor<T>(logits.shape())};
    double sum = 0;
    for (std::size_t b = 0; b < n; ++b) {
        const int label = labels[b];
        require(label >= 0 && static_cast<std::size_t>(label) < classes, ErrorKind::invalid_argument,
                "task label out of range: " + std::to_string(label));
        auto row = logits.sample(b);
        double mx = row[0];
        for (auto v : row) {
            require(std::isfinite(v), ErrorKind::divergence, "non-finite task logit");
            mx = std::max(mx, static_cast<double>(v));
        }
        double z = 0;
        for (auto v : row) z += std::exp(v - mx);
        const double lse = mx + std::log(z);
        sum += lse - row[static_cast<std::size_t>(label)];
        for (std::size_t c = 0; c < classes; ++c) {
            const double soft = std::exp(row[c] - lse);
            r.grad[b * classes + c] = static_cast<T>((soft - (static_cast<int>(c) == label ? 1.0 : 0.0)) / n);
        }
    }
    r.value = sum / static_cast<double>(n);
    return r;
}

enum class JointLossForm {
    convex,   ///< lambda * concept + (1 - lambda) * task
    additive, ///< task + lambda * concept
};

inline double combined_loss(double lambda, double concept_loss, double task_loss,
                            JointLossForm form = JointLossForm::convex)
{
    require(lambda >= 0.0 && lambda <= 1.0, ErrorKind::invalid_argument, "lambda must lie in [0,1]");
    if (form == JointLossForm::additive) return task_loss + lambda * concept_loss;
    return lambda * concept_loss + (1.0 - lambda) * task_loss;
}

/// Weights applied to the (concept, task) gradients by combined_loss.
inline std::pair<double, double> combined_weights(double lambda, JointLossForm form)
{
    combined_loss(lambda, 0, 0, form);
    if (form == JointLossForm::additive) return {lambda, 1.0};
    return {lambda, 1.0 - lambda};
}

} // namespace cbmaudit::core
