#pragma once

// Small MLP probes (d -> 32 -> 1, ReLU, sigmoid) trained full-batch with Adam
// on weighted points. Identical (input, label) rows are merged into one
// weighted point, which leaves the loss and its gradients unchanged.

#include "cbmaudit/common/error.hpp"
#include "cbmaudit/common/seed.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <vector>

namespace cbmaudit::metrics {

struct ProbeConfig {
    std::size_t hidden = 32;
    int epochs = 200;
    double learning_rate = 1e-2;
    double train_fraction = 0.7;
};

struct ProbeData {
    std::size_t dim = 0;
    std::vector<double> x;  ///< n x dim
    std::vector<double> y;  ///< 0 or 1
    std::vector<double> w;  ///< multiplicity

    std::size_t size() const { return y.size(); }
};

inline ProbeData merge_duplicates(std::size_t dim, std::span<const double> x, std::span<const std::uint8_t> y)
{
    require(dim > 0 && x.size() == y.size() * dim, ErrorKind::shape_mismatch, "probe inputs are not n x dim");
    std::map<std::vector<double>, std::size_t> seen;
    ProbeData d;
    d.dim = dim;
    for (std::size_t i = 0; i < y.size(); ++i) {
        std::vector<double> key(x.begin() + static_cast<std::ptrdiff_t>(i * dim),
                                x.begin() + static_cast<std::ptrdiff_t>((i + 1) * dim));
        key.push_back(y[i]);
        auto [it, fresh] = seen.try_emplace(std::move(key), d.y.size());
        if (fresh) {
            d.x.insert(d.x.end(), it->first.begin(), it->first.end() - 1);
            d.y.push_back(y[i]);
            d.w.push_back(1.0);
        } else {
            d.w[it->second] += 1.0;
        }
    }
    return d;
}

class Probe {
public:
    Probe() = default;
    Probe(std::size_t dim, std::size_t hidden, std::uint64_t seed)
        : dim_(dim)
        , hidden_(hidden)
        , w1_(dim * hidden)
        , b1_(hidden, 0.0)
        , w2_(hidden)
        , b2_(0.0)
    {
        Rng rng(stable_hash(seed, "probe-init"));
        std::normal_distribution<double> n1(0.0, std::sqrt(2.0 / static_cast<double>(dim)));
        std::normal_distribution<double> n2(0.0, std::sqrt(1.0 / static_cast<double>(hidden)));
        for (auto& v : w1_) v = n1(rng);
        for (auto& v : w2_) v = n2(rng);
    }

    std::size_t dim() const { return dim_; }

    double logit(const double* x) const
    {
        double z = b2_;
        for (std::size_t h = 0; h < hidden_; ++h) {
            double a = b1_[h];
            for (std::size_t d = 0; d < dim_; ++d) a += w1_[h * dim_ + d] * x[d];
            if (a > 0) z += w2_[h] * a;
        }
        return z;
    }

    double predict(const double* x) const { return 1.0 / (1.0 + std::exp(-logit(x))); }

    /// Weighted mean BCE, Adam on all parameters.
    void fit(const ProbeData& data, const ProbeConfig& cfg)
    {
        require(data.dim == dim_, ErrorKind::shape_mismatch, "probe input width mismatch");
        const std::size_t n = data.size(), np = w1_.size() + b1_.size() + w2_.size() + 1;
        double total = 0;
        for (double v : data.w) total += v;
        require(total > 0, ErrorKind::invalid_argument, "probe fitted on no data");
        std::vector<double> grad(np), m(np, 0.0), v(np, 0.0), act(hidden_);
        const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        for (int e = 1; e <= cfg.epochs; ++e) {
            std::fill(grad.begin(), grad.end(), 0.0);
            double* gw1 = grad.data();
            double* gb1 = gw1 + w1_.size();
            double* gw2 = gb1 + b1_.size();
            double& gb2 = grad[np - 1];
            for (std::size_t i = 0; i < n; ++i) {
                const double* x = &data.x[i * dim_];
                double z = b2_;
                for (std::size_t h = 0; h < hidden_; ++h) {
                    double a = b1_[h];
                    for (std::size_t d = 0; d < dim_; ++d) a += w1_[h * dim_ + d] * x[d];
                    act[h] = a > 0 ? a : 0.0;
                    z += w2_[h] * act[h];
                }
                const double p = 1.0 / (1.0 + std::exp(-z));
                const double dz = data.w[i] * (p - data.y[i]) / total;
                gb2 += dz;
                for (std::size_t h = 0; h < hidden_; ++h) {
                    gw2[h] += dz * act[h];
                    if (act[h] > 0) {
                        const double da = dz * w2_[h];
                        gb1[h] += da;
                        for (std::size_t d = 0; d < dim_; ++d) gw1[h * dim_ + d] += da * x[d];
                    }
                }
            }
            const double c1 = 1 - std::pow(b1, e), c2 = 1 - std::pow(b2, e);
            std::size_t k = 0;
            auto step = [&](double& param) {
                m[k] = b1 * m[k] + (1 - b1) * grad[k];
                v[k] = b2 * v[k] + (1 - b2) * grad[k] * grad[k];
                param -= cfg.learning_rate * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps);
                ++k;
            };
            for (auto& p : w1_) step(p);
            for (auto& p : b1_) step(p);
            for (auto& p : w2_) step(p);
            step(b2_);
        }
    }

    friend bool operator==(const Probe&, const Probe&) = default;

private:
    std::size_t dim_ = 0, hidden_ = 0;
    std::vector<double> w1_, b1_, w2_;
    double b2_ = 0;
};

inline bool has_both_classes(std::span<const std::uint8_t> y)
{
    bool pos = false, neg = false;
    for (auto v : y) (v ? pos : neg) = true;
    return pos && neg;
}

/// Trains a probe from n x dim inputs to binary targets; nullopt when the
/// targets hold a single class.
inline std::optional<Probe> train_probe(std::size_t dim, std::span<const double> x, std::span<const std::uint8_t> y,
                                        std::uint64_t seed, const ProbeConfig& cfg = {})
{
    if (!has_both_classes(y)) return std::nullopt;
    Probe p(dim, cfg.hidden, seed);
    p.fit(merge_duplicates(dim, x, y), cfg);
    return p;
}

} // namespace cbmaudit::metrics
