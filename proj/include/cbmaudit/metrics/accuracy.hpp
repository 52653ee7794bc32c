#pragma once

#include "cbmaudit/common/error.hpp"

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace cbmaudit::metrics {

/// Mean over samples x concepts of [(p >= 0.5) == target].
inline double concept_accuracy(std::span<const float> probabilities, std::span<const std::uint8_t> targets)
{
    require(!probabilities.empty(), ErrorKind::invalid_argument, "concept accuracy of an empty set");
    require(probabilities.size() == targets.size(), ErrorKind::shape_mismatch, "probabilities and targets differ in size");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < probabilities.size(); ++i) hit += (probabilities[i] >= 0.5f) == (targets[i] != 0);
    return static_cast<double>(hit) / static_cast<double>(probabilities.size());
}

inline double task_accuracy(std::span<const int> predicted, std::span<const int> labels)
{
    require(!labels.empty(), ErrorKind::invalid_argument, "task accuracy of an empty set");
    require(predicted.size() == labels.size(), ErrorKind::shape_mismatch, "predictions and labels differ in size");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) hit += predicted[i] == labels[i];
    return static_cast<double>(hit) / static_cast<double>(labels.size());
}

/// Row-wise argmax of an n x classes logit matrix.
inline std::vector<int> argmax_rows(std::span<const float> logits, std::size_t classes)
{
    require(classes > 0 && logits.size() % classes == 0, ErrorKind::shape_mismatch, "logits are not n x classes");
    std::vector<int> out(logits.size() / classes);
    for (std::size_t i = 0; i < out.size(); ++i) {
        auto row = logits.subspan(i * classes, classes);
        out[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    }
    return out;
}

/// Probability that a random positive outranks a random negative, ties counted
/// one half. nullopt when only one class is present. Optional weights count
/// each point that many times.
inline std::optional<double> roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels,
                                     std::span<const double> weights = {})
{
    require(scores.size() == labels.size(), ErrorKind::shape_mismatch, "scores and labels differ in size");
    require(weights.empty() || weights.size() == scores.size(), ErrorKind::shape_mismatch, "weights differ in size");
    const std::size_t n = scores.size();
    auto weight = [&](std::size_t i) { return weights.empty() ? 1.0 : weights[i]; };
    double pos = 0, neg = 0;
    for (std::size_t i = 0; i < n; ++i) (labels[i] ? pos : neg) += weight(i);
    if (pos <= 0 || neg <= 0) return std::nullopt;
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // sweep groups of tied scores in ascending order
    double neg_below = 0, wins = 0;
    for (std::size_t g = 0; g < n;) {
        std::size_t e = g;
        double gp = 0, gn = 0;
        while (e < n && scores[order[e]] == scores[order[g]]) {
            (labels[order[e]] ? gp : gn) += weight(order[e]);
            ++e;
        }
        wins += gp * (neg_below + 0.5 * gn);
        neg_below += gn;
        g = e;
    }
    return wins / (pos * neg);
}

} // namespace cbmaudit::metrics
