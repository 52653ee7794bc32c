#pragma once

// Layered network with a recording forward pass (the tape) and reverse-mode
// gradients. The same tape drives training and relevance propagation.

#include "cbmaudit/common/error.hpp"
#include "cbmaudit/common/seed.hpp"
#include "cbmaudit/core/layers.hpp"
#include "cbmaudit/core/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace cbmaudit::core {

enum class Mode { train, eval };
enum class Role { encoder, predictor, generic };

inline std::string role_name(Role r)
{
    switch (r) {
    case Role::encoder: return "encoder";
    case Role::predictor: return "predictor";
    case Role::generic: return "generic";
    }
    return "generic";
}

inline Role role_from_name(const std::string& s)
{
    if (s == "encoder") return Role::encoder;
    if (s == "predictor") return Role::predictor;
    return Role::generic;
}

/// Trainable parameters and non-trained buffers of one layer.
/// Conv2d/Linear: {weight, bias?}. BatchNorm2d: {scale, shift}, buffers {running mean, running var}.
template <typename T>
struct Layer {
    LayerSpec spec;
    std::vector<Tensor<T>> params;
    std::vector<Tensor<T>> buffers;
};

/// Activations of one forward pass. activations[i] is the input of layer i,
/// activations[i + 1] its output.
template <typename T>
struct Tape {
    Mode mode = Mode::eval;
    std::vector<Tensor<T>> activations;
    std::vector<std::vector<T>> stats;                  ///< batch-norm batch mean / inverse std (train)
    std::vector<std::vector<std::uint32_t>> winners;    ///< max-pool argmax routing

    const Tensor<T>& input(std::size_t layer) const { return activations.at(layer); }
    const Tensor<T>& output(std::size_t layer) const { return activations.at(layer + 1); }
    const Tensor<T>& final_output() const { return activations.back(); }
    std::size_t layer_count() const { return activations.empty() ? 0 : activations.size() - 1; }
};

template <typename T>
using Gradients = std::vector<std::vector<Tensor<T>>>;

template <typename T>
class Network {
public:
    Network() = default;
    Network(std::vector<LayerSpec> specs, Role role)
        : role_(role)
    {
        for (auto& s : specs) layers_.push_back(make_layer(s));
    }

    Role role() const noexcept { return role_; }
    std::size_t size() const noexcept { return layers_.size(); }
    std::vector<Layer<T>>& layers() noexcept { return layers_; }
    const std::vector<Layer<T>>& layers() const noexcept { return layers_; }
    const LayerSpec& spec(std::size_t i) const { return layers_.at(i).spec; }

    std::vector<LayerSpec> specs() const
    {
        std::vector<LayerSpec> out;
        for (const auto& l : layers_) out.push_back(l.spec);
        return out;
    }

    /// Output shape for a given input shape; throws on a composition error.
    Shape output_shape_for(Shape in) const
    {
        for (const auto& l : layers_) in = output_shape(l.spec, in);
        return in;
    }

    std::optional<std::size_t> sigmoid_index() const
    {
        for (std::size_t i = 0; i < layers_.size(); ++i)
            if (std::holds_alternative<Sigmoid>(layers_[i].spec)) return i;
        return std::nullopt;
    }

    /// Kaiming fan-in normal weights, zero biases, unit batch-norm scale.
    void initialize(std::uint64_t seed)
    {
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            auto& l = layers_[i];
            Rng rng(stable_hash(seed, "layer-init", i));
            auto init_weight = [&](Tensor<T>& w, std::size_t fan_in) {
                std::normal_distribution<double> nd(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
                for (std::size_t j = 0; j < w.size(); ++j) w[j] = static_cast<T>(nd(rng));
            };
            if (auto* c = std::get_if<Conv2d>(&l.spec)) {
                init_weight(l.params[0], c->in * c->kernel * c->kernel);
                if (c->bias) l.params[1].fill(T(0));
            } else if (auto* f = std::get_if<Linear>(&l.spec)) {
                init_weight(l.params[0], f->in);
                if (f->bias) l.params[1].fill(T(0));
            } else if (std::holds_alternative<BatchNorm2d>(l.spec)) {
                l.params[0].fill(T(1));
                l.params[1].fill(T(0));
                l.buffers[0].fill(T(0));
                l.buffers[1].fill(T(1));
            }
        }
    }

    Tape<T> forward(const Tensor<T>& x, Mode mode) const { return forward_range(x, mode, 0, layers_.size()); }

    /// Runs layers [begin, end) on x, which is the input of layer `begin`.
    Tape<T> forward_range(const Tensor<T>& x, Mode mode, std::size_t begin, std::size_t end) const
    {
        Tape<T> tape;
        tape.mode = mode;
        tape.activations.reserve(end - begin + 1);
        tape.activations.push_back(x);
        tape.stats.resize(layers_.size());
        tape.winners.resize(layers_.size());
        for (std::size_t i = begin; i < end; ++i) {
            Tensor<T> y = layer_forward(i, tape.activations.back(), mode, tape.stats[i], tape.winners[i]);
            if (!y.all_finite())
                fail(ErrorKind::divergence, "non-finite activation after layer " + std::to_string(i) + " (" +
                                                layer_name(layers_[i].spec) + ")");
            tape.activations.push_back(std::move(y));
        }
        // keep the index arithmetic of input()/output() valid for partial tapes
        if (begin > 0) tape.activations.insert(tape.activations.begin(), begin, Tensor<T>());
        return tape;
    }

    Tensor<T> infer(const Tensor<T>& x) const { return forward(x, Mode::eval).final_output(); }

    Gradients<T> zero_gradients() const
    {
        Gradients<T> g(layers_.size());
        for (std::size_t i = 0; i < layers_.size(); ++i)
            for (const auto& p : layers_[i].params) g[i].emplace_back(p.shape());
        return g;
    }

    /// grad is dL/d(output of layer end-1). Propagates down to the input of layer
    /// `begin` and returns that gradient. Parameter gradients are accumulated into
    /// `grads` when it is non-null. With input_grad false the last step only
    /// produces parameter gradients and an empty tensor is returned.
    Tensor<T> backward(const Tape<T>& tape, Tensor<T> grad, std::size_t end, std::size_t begin = 0,
                       Gradients<T>* grads = nullptr, bool input_grad = true) const
    {
        require(end <= layers_.size() && begin < end, ErrorKind::invalid_argument, "bad backward range");
        require(tape.layer_count() >= end, ErrorKind::invalid_argument, "missing tape records for backward");
        require(grad.shape() == tape.output(end - 1).shape(), ErrorKind::shape_mismatch,
                "output gradient " + shape_string(grad.shape()) + " does not match tape " +
                    shape_string(tape.output(end - 1).shape()));
        for (std::size_t i = end; i-- > begin;) {
            if (i == begin && !input_grad && grads) {
                const auto& l = layers_[i];
                const Tensor<T>& x = tape.input(i);
                auto& pg = (*grads)[i];
                if (auto* c = std::get_if<Conv2d>(&l.spec)) {
                    conv2d_backward_params(x, grad, *c, pg[0].data(), c->bias ? pg[1].data() : nullptr);
                    return {};
                }
                if (auto* f = std::get_if<Linear>(&l.spec)) {
                    linear_backward_params(x, grad, *f, pg[0].data(), f->bias ? pg[1].data() : nullptr);
                    return {};
                }
            }
            grad = layer_backward(i, tape, grad, grads ? &(*grads)[i] : nullptr);
        }
        return grad;
    }

    /// Folds the batch statistics of a training tape into the running averages.
    void update_running_stats(const Tape<T>& tape)
    {
        require(tape.mode == Mode::train, ErrorKind::invalid_argument, "running stats need a training tape");
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            auto* bn = std::get_if<BatchNorm2d>(&layers_[i].spec);
            if (!bn || tape.stats[i].empty()) continue;
            const auto& in = tape.input(i);
            const std::size_t c = bn->channels;
            const double count = static_cast<double>(in.dim(0) * in.dim(2) * in.dim(3));
            for (std::size_t ch = 0; ch < c; ++ch) {
                const double mean = tape.stats[i][ch];
                const double inv = tape.stats[i][c + ch];
                const double var = 1.0 / (inv * inv) - bn->eps;
                const double unbiased = count > 1 ? var * count / (count - 1) : var;
                auto& rm = layers_[i].buffers[0][ch];
                auto& rv = layers_[i].buffers[1][ch];
                rm = static_cast<T>((1 - bn->momentum) * rm + bn->momentum * mean);
                rv = static_cast<T>((1 - bn->momentum) * rv + bn->momentum * unbiased);
            }
        }
    }

    std::size_t parameter_count() const
    {
        std::size_t n = 0;
        for (const auto& l : layers_)
            for (const auto& p : l.params) n += p.size();
        return n;
    }

    template <typename U>
    Network<U> cast() const
    {
        Network<U> out(specs(), role_);
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            for (std::size_t p = 0; p < layers_[i].params.size(); ++p)
                out.layers()[i].params[p] = layers_[i].params[p].template cast<U>();
            for (std::size_t b = 0; b < layers_[i].buffers.size(); ++b)
                out.layers()[i].buffers[b] = layers_[i].buffers[b].template cast<U>();
        }
        return out;
    }

private:
    static Layer<T> make_layer(const LayerSpec& spec)
    {
        Layer<T> l{spec, {}, {}};
        if (auto* c = std::get_if<Conv2d>(&spec)) {
            require(c->in > 0 && c->out > 0 && c->kernel > 0 && c->stride > 0, ErrorKind::invalid_argument,
                    "degenerate Conv2d");
            l.params.emplace_back(Shape{c->out, c->in, c->kernel, c->kernel});
            if (c->bias) l.params.emplace_back(Shape{c->out, 1, 1, 1});
        } else if (auto* f = std::get_if<Linear>(&spec)) {
            require(f->in > 0 && f->out > 0, ErrorKind::invalid_argument, "degenerate Linear");
            l.params.emplace_back(Shape{f->out, f->in, 1, 1});
            if (f->bias) l.params.emplace_back(Shape{f->out, 1, 1, 1});
        } else if (auto* b = std::get_if<BatchNorm2d>(&spec)) {
            l.params.emplace_back(Shape{b->channels, 1, 1, 1}, T(1));
            l.params.emplace_back(Shape{b->channels, 1, 1, 1}, T(0));
            l.buffers.emplace_back(Shape{b->channels, 1, 1, 1}, T(0));
            l.buffers.emplace_back(Shape{b->channels, 1, 1, 1}, T(1));
        } else if (auto* p = std::get_if<MaxPool2d>(&spec)) {
            require(p->kernel > 0 && p->stride > 0, ErrorKind::invalid_argument, "degenerate MaxPool2d");
        }
        return l;
    }

    Tensor<T> layer_forward(std::size_t i, const Tensor<T>& x, Mode mode, std::vector<T>& stats,
                            std::vector<std::uint32_t>& winners) const
    {
        const auto& l = layers_[i];
        if (auto* c = std::get_if<Conv2d>(&l.spec))
            return conv2d_forward(x, l.params[0].data(), c->bias ? l.params[1].data() : nullptr, *c);
        if (auto* f = std::get_if<Linear>(&l.spec))
            return linear_forward(x, l.params[0].data(), f->bias ? l.params[1].data() : nullptr, *f);
        if (auto* b = std::get_if<BatchNorm2d>(&l.spec)) return batchnorm_forward(l, *b, x, mode, stats);
        if (auto* p = std::get_if<MaxPool2d>(&l.spec)) return maxpool_forward(x, *p, winners);
        if (std::holds_alternative<Flatten>(l.spec)) return x.reshaped(output_shape(l.spec, x.shape()));
        Tensor<T> y = x;
        if (std::holds_alternative<ReLU>(l.spec)) {
            for (auto& v : y.values()) v = v > T(0) ? v : T(0);
        } else {
            // keep the bottleneck strictly inside (0, 1) even where the sigmoid saturates
            constexpr T lo = std::numeric_limits<T>::epsilon() / 2;
            for (auto& v : y.values()) v = std::clamp(T(1) / (T(1) + std::exp(-v)), lo, T(1) - lo);
        }
        return y;
    }

    static Tensor<T> batchnorm_forward(const Layer<T>& l, const BatchNorm2d& b, const Tensor<T>& x, Mode mode,
                                       std::vector<T>& stats)
    {
        output_shape(l.spec, x.shape());
        Tensor<T> y(x.shape());
        const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
        std::vector<double> mean(c), inv(c);
        if (mode == Mode::train) {
            const double count = static_cast<double>(n * hw);
            for (std::size_t ch = 0; ch < c; ++ch) {
                // shifted sums keep the one-pass variance accurate
                const double shift = x.data()[ch * hw];
                double s = 0, s2 = 0;
                for (std::size_t bi = 0; bi < n; ++bi) {
                    const T* p = x.data() + (bi * c + ch) * hw;
                    for (std::size_t k = 0; k < hw; ++k) {
                        const double d = p[k] - shift;
                        s += d;
                        s2 += d * d;
                    }
                }
                mean[ch] = shift + s / count;
                const double var = std::max(0.0, s2 / count - (s / count) * (s / count));
                inv[ch] = 1.0 / std::sqrt(var + b.eps);
            }
            stats.assign(2 * c, T(0));
            for (std::size_t ch = 0; ch < c; ++ch) {
                stats[ch] = static_cast<T>(mean[ch]);
                stats[c + ch] = static_cast<T>(inv[ch]);
            }
        } else {
            for (std::size_t ch = 0; ch < c; ++ch) {
                mean[ch] = l.buffers[0][ch];
                inv[ch] = 1.0 / std::sqrt(static_cast<double>(l.buffers[1][ch]) + b.eps);
            }
        }
        for (std::size_t bi = 0; bi < n; ++bi)
            for (std::size_t ch = 0; ch < c; ++ch) {
                const T scale = static_cast<T>(l.params[0][ch] * inv[ch]);
                const T shift = static_cast<T>(l.params[1][ch] - mean[ch] * l.params[0][ch] * inv[ch]);
                const T* p = x.data() + (bi * c + ch) * hw;
                T* q = y.data() + (bi * c + ch) * hw;
                for (std::size_t k = 0; k < hw; ++k) q[k] = p[k] * scale + shift;
            }
        return y;
    }

    Tensor<T> layer_backward(std::size_t i, const Tape<T>& tape, const Tensor<T>& g, std::vector<Tensor<T>>* pg) const
    {
        const auto& l = layers_[i];
        const Tensor<T>& x = tape.input(i);
        const Tensor<T>& y = tape.output(i);
        if (auto* c = std::get_if<Conv2d>(&l.spec)) {
            if (pg) conv2d_backward_params(x, g, *c, (*pg)[0].data(), c->bias ? (*pg)[1].data() : nullptr);
            return conv2d_backward_input(g, l.params[0].data(), *c, x.shape());
        }
        if (auto* f = std::get_if<Linear>(&l.spec)) {
            if (pg) linear_backward_params(x, g, *f, (*pg)[0].data(), f->bias ? (*pg)[1].data() : nullptr);
            return linear_backward_input(g, l.params[0].data(), *f, x.shape());
        }
        if (auto* b = std::get_if<BatchNorm2d>(&l.spec)) return batchnorm_backward(l, *b, tape, i, g, pg);
        if (std::holds_alternative<MaxPool2d>(l.spec)) return maxpool_route(g, tape.winners[i], x.shape());
        if (std::holds_alternative<Flatten>(l.spec)) return g.reshaped(x.shape());
        Tensor<T> gx = g;
        if (std::holds_alternative<ReLU>(l.spec)) {
            for (std::size_t k = 0; k < gx.size(); ++k)
                if (!(x[k] > T(0))) gx[k] = T(0);
        } else {
            for (std::size_t k = 0; k < gx.size(); ++k) gx[k] *= y[k] * (T(1) - y[k]);
        }
        return gx;
    }

    static Tensor<T> batchnorm_backward(const Layer<T>& l, const BatchNorm2d& b, const Tape<T>& tape, std::size_t i,
                                        const Tensor<T>& g, std::vector<Tensor<T>>* pg)
    {
        const Tensor<T>& x = tape.input(i);
        const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
        Tensor<T> gx(x.shape());
        const bool train = tape.mode == Mode::train;
        const double count = static_cast<double>(n * hw);
        for (std::size_t ch = 0; ch < c; ++ch) {
            double mean, inv;
            if (train) {
                mean = tape.stats[i][ch];
                inv = tape.stats[i][c + ch];
            } else {
                mean = l.buffers[0][ch];
                inv = 1.0 / std::sqrt(static_cast<double>(l.buffers[1][ch]) + b.eps);
            }
            const double gamma = l.params[0][ch];
            double sum_g = 0, sum_gx = 0;
            for (std::size_t bi = 0; bi < n; ++bi) {
                const T* gp = g.data() + (bi * c + ch) * hw;
                const T* xp = x.data() + (bi * c + ch) * hw;
                for (std::size_t k = 0; k < hw; ++k) {
                    sum_g += gp[k];
                    sum_gx += gp[k] * (xp[k] - mean) * inv;
                }
            }
            if (pg) {
                (*pg)[0][ch] += static_cast<T>(sum_gx);
                (*pg)[1][ch] += static_cast<T>(sum_g);
            }
            for (std::size_t bi = 0; bi < n; ++bi) {
                const T* gp = g.data() + (bi * c + ch) * hw;
                const T* xp = x.data() + (bi * c + ch) * hw;
                T* out = gx.data() + (bi * c + ch) * hw;
                for (std::size_t k = 0; k < hw; ++k) {
                    if (train) {
                        const double xhat = (xp[k] - mean) * inv;
                        out[k] = static_cast<T>(gamma * inv * (gp[k] - sum_g / count - xhat * sum_gx / count));
                    } else {
                        out[k] = static_cast<T>(gamma * inv * gp[k]);
                    }
                }
            }
        }
        return gx;
    }

    Role role_ = Role::generic;
    std::vector<Layer<T>> layers_;
};

} // namespace cbmaudit::core
