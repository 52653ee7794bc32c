#pragma once

#include "cbmaudit/common/error.hpp"
#include "cbmaudit/core/network.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace cbmaudit::core {

enum class OptimizerKind { sgd, adam };

inline std::string optimizer_name(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

inline OptimizerKind optimizer_from_name(const std::string& s)
{
    if (s == "sgd" || s == "SGD") return OptimizerKind::sgd;
    if (s == "adam" || s == "Adam") return OptimizerKind::adam;
    fail(ErrorKind::config, "unknown optimizer: " + s);
}

/// SGD with momentum, or Adam. One instance per network being trained.
template <typename T>
class Optimizer {
public:
    Optimizer(const Network<T>& net, OptimizerKind kind, double lr, double momentum = 0.9)
        : kind_(kind)
        , lr_(lr)
        , momentum_(momentum)
        , first_(net.zero_gradients())
        , second_(kind == OptimizerKind::adam ? net.zero_gradients() : Gradients<T>{})
    {
    }

    double learning_rate() const noexcept { return lr_; }
    void set_learning_rate(double lr) noexcept { lr_ = lr; }

    void step(Network<T>& net, const Gradients<T>& grads)
    {
        ++steps_;
        const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
        for (std::size_t l = 0; l < grads.size(); ++l)
            for (std::size_t p = 0; p < grads[l].size(); ++p) {
                auto& w = net.layers()[l].params[p];
                const auto& g = grads[l][p];
                auto& m = first_[l][p];
                if (kind_ == OptimizerKind::sgd) {
                    for (std::size_t i = 0; i < w.size(); ++i) {
                        m[i] = static_cast<T>(momentum_ * m[i] + g[i]);
                        w[i] -= static_cast<T>(lr_ * m[i]);
                    }
                } else {
                    auto& v = second_[l][p];
                    for (std::size_t i = 0; i < w.size(); ++i) {
                        m[i] = static_cast<T>(b1 * m[i] + (1 - b1) * g[i]);
                        v[i] = static_cast<T>(b2 * v[i] + (1 - b2) * g[i] * g[i]);
                        w[i] -= static_cast<T>(lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps));
                    }
                }
            }
    }

private:
    OptimizerKind kind_;
    double lr_;
    double momentum_;
    long steps_ = 0;
    Gradients<T> first_;
    Gradients<T> second_;
};

/// Multiplies the learning rate by `factor` once `patience` consecutive epochs
/// pass without the monitored loss improving by more than `threshold`.
class PlateauScheduler {
public:
    PlateauScheduler(int patience, double factor = 0.1, double threshold = 1e-4)
        : patience_(patience)
        , factor_(factor)
        , threshold_(threshold)
    {
        require(patience >= 1, ErrorKind::invalid_argument, "patience must be at least 1");
        require(factor > 0 && factor <= 1, ErrorKind::invalid_argument, "reduction factor must lie in (0,1]");
    }

    /// Returns the (possibly reduced) learning rate.
    double step(double loss, double lr)
    {
        if (loss < best_ - threshold_) {
            best_ = loss;
            bad_epochs_ = 0;
            return lr;
        }
        if (++bad_epochs_ >= patience_) {
            bad_epochs_ = 0;
            return lr * factor_;
        }
        return lr;
    }

    int bad_epochs() const noexcept { return bad_epochs_; }

private:
    int patience_;
    double factor_;
    double threshold_;
    double best_ = std::numeric_limits<double>::infinity();
    int bad_epochs_ = 0;
};

} // namespace cbmaudit::core
