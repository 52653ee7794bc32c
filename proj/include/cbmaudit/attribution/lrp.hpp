#pragma once

// Layer-wise relevance propagation with a rule per weighted layer. Batch norm
// is folded into the preceding convolution, ReLU passes relevance unchanged and
// max-pool hands it to the window winner.

#include "cbmaudit/attribution/map.hpp"
#include "cbmaudit/core/model.hpp"

#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace cbmaudit::attribution {

struct LrpRule {
    enum class Kind { zero, epsilon, alpha_beta };
    Kind kind = Kind::zero;
    double epsilon = 0.0;  ///< absolute, or a multiple of std(z) when relative
    bool relative = false;
    double alpha = 1.0, beta = 0.0;

    static LrpRule zero() { return {}; }
    static LrpRule eps(double e)
    {
        require(e >= 0, ErrorKind::invalid_argument, "epsilon must be non-negative");
        return {Kind::epsilon, e, false, 1, 0};
    }
    /// epsilon = factor * std of the layer's pre-activations, per sample.
    static LrpRule relative_epsilon(double factor = 0.25)
    {
        require(factor >= 0, ErrorKind::invalid_argument, "epsilon factor must be non-negative");
        return {Kind::epsilon, factor, true, 1, 0};
    }
    static LrpRule alpha_beta(double alpha = 1, double beta = 0)
    {
        require(alpha >= 1 && beta >= 0 && std::abs(alpha - beta - 1) < 1e-12, ErrorKind::invalid_argument,
                "alpha-beta rule needs alpha - beta = 1 and alpha >= 1");
        return {Kind::alpha_beta, 0, false, alpha, beta};
    }

    std::string name() const
    {
        std::ostringstream s;
        switch (kind) {
        case Kind::zero: s << "LRP-0"; break;
        case Kind::epsilon: s << "LRP-eps(" << epsilon << (relative ? "*std" : "") << ")"; break;
        case Kind::alpha_beta: s << "LRP-ab(" << alpha << "," << beta << ")"; break;
        }
        return s.str();
    }
};

/// One rule per Conv2d/Linear layer, in forward order.
struct RuleAssignment {
    std::vector<LrpRule> rules;

    /// Alpha-beta(1,0) on the first four convolutions, relative epsilon on the
    /// remaining convolutions, LRP-0 on linear layers.
    template <typename T>
    static RuleAssignment default_for(const core::Network<T>& encoder, const core::Network<T>* predictor = nullptr,
                                      double epsilon_factor = 0.25)
    {
        RuleAssignment a;
        int convs = 0;
        auto add = [&](const core::Network<T>& net) {
            for (const auto& l : net.layers()) {
                if (std::holds_alternative<core::Conv2d>(l.spec))
                    a.rules.push_back(convs++ < 4 ? LrpRule::alpha_beta(1, 0) : LrpRule::relative_epsilon(epsilon_factor));
                else if (std::holds_alternative<core::Linear>(l.spec))
                    a.rules.push_back(LrpRule::zero());
            }
        };
        add(encoder);
        if (predictor) add(*predictor);
        return a;
    }

    /// The same rule on every weighted layer.
    template <typename T>
    static RuleAssignment uniform(const core::Network<T>& net, LrpRule rule)
    {
        RuleAssignment a;
        for (const auto& l : net.layers())
            if (core::is_weighted(l.spec)) a.rules.push_back(rule);
        return a;
    }
};

template <typename T>
std::size_t weighted_layer_count(const core::Network<T>& net)
{
    std::size_t n = 0;
    for (const auto& l : net.layers()) n += core::is_weighted(l.spec);
    return n;
}

namespace detail {

template <typename T>
void check_tape(const core::Network<T>& net, const core::Tape<T>& tape)
{
    require(tape.layer_count() == net.size(), ErrorKind::shape_mismatch, "tape does not belong to this network");
    for (std::size_t i = 0; i < net.size(); ++i)
        require(core::output_shape(net.spec(i), tape.input(i).shape()) == tape.output(i).shape(),
                ErrorKind::shape_mismatch, "tape activations do not match layer " + std::to_string(i));
}

/// Effective weights of a conv or linear layer, optionally with a following batch norm folded in.
template <typename T>
struct Affine {
    std::vector<T> weight;
    std::vector<T> bias;
    bool conv = false;
    core::Conv2d conv_spec{};
    core::Linear linear_spec{};
};

template <typename T>
Affine<T> effective_affine(const core::Network<T>& net, std::size_t i, bool fold_bn)
{
    const auto& l = net.layers()[i];
    Affine<T> a;
    std::size_t out = 0, per = 0;
    bool has_bias = false;
    if (auto* c = std::get_if<core::Conv2d>(&l.spec)) {
        a.conv = true;
        a.conv_spec = *c;
        out = c->out;
        per = c->in * c->kernel * c->kernel;
        has_bias = c->bias;
    } else {
        const auto& f = std::get<core::Linear>(l.spec);
        a.linear_spec = f;
        out = f.out;
        per = f.in;
        has_bias = f.bias;
    }
    a.weight = l.params[0].values();
    a.bias.assign(out, T(0));
    if (has_bias) a.bias = l.params[1].values();
    if (fold_bn) {
        const auto& bl = net.layers()[i + 1];
        const auto& bn = std::get<core::BatchNorm2d>(bl.spec);
        for (std::size_t o = 0; o < out; ++o) {
            const double scale = bl.params[0][o] / std::sqrt(static_cast<double>(bl.buffers[1][o]) + bn.eps);
            for (std::size_t k = 0; k < per; ++k) a.weight[o * per + k] = static_cast<T>(a.weight[o * per + k] * scale);
            a.bias[o] = static_cast<T>((a.bias[o] - bl.buffers[0][o]) * scale + bl.params[1][o]);
        }
        if (a.conv) a.conv_spec.bias = true;
        else a.linear_spec.bias = true;
    }
    return a;
}

template <typename T>
core::Tensor<T> affine_forward(const Affine<T>& a, const core::Tensor<T>& x, const std::vector<T>& w, bool bias)
{
    const T* b = bias ? a.bias.data() : nullptr;
    if (a.conv) {
        auto s = a.conv_spec;
        s.bias = bias;
        return core::conv2d_forward(x, w.data(), b, s);
    }
    auto s = a.linear_spec;
    s.bias = bias;
    return core::linear_forward(x, w.data(), b, s);
}

template <typename T>
core::Tensor<T> affine_backward(const Affine<T>& a, const core::Tensor<T>& g, const std::vector<T>& w, const core::Shape& in)
{
    if (a.conv) return core::conv2d_backward_input(g, w.data(), a.conv_spec, in);
    return core::linear_backward_input(g, w.data(), a.linear_spec, in);
}

template <typename T>
T stabilized_ratio(T r, T z, T eps)
{
    const T denom = z + (z >= T(0) ? eps : -eps);
    return denom == T(0) ? T(0) : r / denom;
}

template <typename T>
core::Tensor<T> relevance_through_affine(const Affine<T>& a, const LrpRule& rule, const core::Tensor<T>& x,
                                         const core::Tensor<T>& r)
{
    const auto in_shape = x.shape();
    core::Tensor<T> out(in_shape);
    if (rule.kind != LrpRule::Kind::alpha_beta) {
        core::Tensor<T> z = affine_forward(a, x, a.weight, true);
        core::Tensor<T> s(z.shape());
        const std::size_t per = z.stride();
        for (std::size_t n = 0; n < z.dim(0); ++n) {
            T eps = static_cast<T>(rule.kind == LrpRule::Kind::epsilon ? rule.epsilon : 0.0);
            if (rule.kind == LrpRule::Kind::epsilon && rule.relative) {
                double m = 0, m2 = 0;
                for (auto v : z.sample(n)) m += v;
                m /= static_cast<double>(per);
                for (auto v : z.sample(n)) m2 += (v - m) * (v - m);
                eps = static_cast<T>(rule.epsilon * std::sqrt(m2 / static_cast<double>(per)));
            }
            for (std::size_t j = n * per; j < (n + 1) * per; ++j) s[j] = stabilized_ratio(r[j], z[j], eps);
        }
        core::Tensor<T> c = affine_backward(a, s, a.weight, in_shape);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * c[i];
        return out;
    }

    std::vector<T> wp(a.weight.size()), wn(a.weight.size());
    for (std::size_t i = 0; i < wp.size(); ++i) {
        wp[i] = std::max(a.weight[i], T(0));
        wn[i] = std::min(a.weight[i], T(0));
    }
    core::Tensor<T> xp(in_shape), xn(in_shape);
    for (std::size_t i = 0; i < x.size(); ++i) {
        xp[i] = std::max(x[i], T(0));
        xn[i] = std::min(x[i], T(0));
    }
    auto zp = affine_forward(a, xp, wp, false);
    auto zpn = affine_forward(a, xn, wn, false);
    auto zn = affine_forward(a, xp, wn, false);
    auto znp = affine_forward(a, xn, wp, false);
    core::Tensor<T> sp(zp.shape()), sn(zp.shape());
    for (std::size_t j = 0; j < zp.size(); ++j) {
        const T pos = zp[j] + zpn[j], neg = zn[j] + znp[j];
        sp[j] = pos == T(0) ? T(0) : r[j] / pos;
        sn[j] = neg == T(0) ? T(0) : r[j] / neg;
    }
    const T alpha = static_cast<T>(rule.alpha), beta = static_cast<T>(rule.beta);
    auto c_pp = affine_backward(a, sp, wp, in_shape);
    auto c_pn = affine_backward(a, sp, wn, in_shape);
    core::Tensor<T> c_np, c_nn;
    if (beta != T(0)) {
        c_np = affine_backward(a, sn, wn, in_shape);
        c_nn = affine_backward(a, sn, wp, in_shape);
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
        T v = alpha * (xp[i] * c_pp[i] + xn[i] * c_pn[i]);
        if (beta != T(0)) v -= beta * (xp[i] * c_np[i] + xn[i] * c_nn[i]);
        out[i] = v;
    }
    return out;
}

/// Propagates relevance r (at the output of layer end-1) down to the network input.
/// `rules` covers the weighted layers of [0, end) in forward order.
template <typename T>
core::Tensor<T> propagate(const core::Network<T>& net, const core::Tape<T>& tape, core::Tensor<T> r, std::size_t end,
                          std::span<const LrpRule> rules)
{
    std::size_t weighted = 0;
    for (std::size_t i = 0; i < end; ++i) weighted += core::is_weighted(net.spec(i));
    require(rules.size() == weighted, ErrorKind::invalid_argument,
            "rule assignment covers " + std::to_string(rules.size()) + " layers, network has " +
                std::to_string(weighted) + " weighted layers");
    std::size_t rule = weighted;
    for (std::size_t i = end; i-- > 0;) {
        const auto& spec = net.spec(i);
        if (std::holds_alternative<core::BatchNorm2d>(spec)) {
            require(i > 0 && std::holds_alternative<core::Conv2d>(net.spec(i - 1)), ErrorKind::invalid_argument,
                    "batch norm must follow a convolution for relevance propagation");
            require(tape.mode == core::Mode::eval, ErrorKind::invalid_argument,
                    "relevance propagation needs an evaluation-mode tape");
            --i;
            const auto a = effective_affine(net, i, true);
            r = relevance_through_affine(a, rules[--rule], tape.input(i), r);
        } else if (core::is_weighted(spec)) {
            const auto a = effective_affine(net, i, false);
            r = relevance_through_affine(a, rules[--rule], tape.input(i), r);
        } else if (std::holds_alternative<core::MaxPool2d>(spec)) {
            r = core::maxpool_route(r, tape.winners[i], tape.input(i).shape());
        } else if (std::holds_alternative<core::Flatten>(spec)) {
            r = r.reshaped(tape.input(i).shape());
        }
        // ReLU and sigmoid pass relevance through unchanged
    }
    return r;
}

template <typename T>
core::Tensor<T> target_relevance(const core::Tensor<T>& scores, std::size_t target)
{
    require(target < scores.stride(), ErrorKind::invalid_argument, "target index out of range");
    core::Tensor<T> r(scores.shape());
    for (std::size_t n = 0; n < scores.dim(0); ++n) r[n * scores.stride() + target] = scores[n * scores.stride() + target];
    return r;
}

} // namespace detail

/// Relevance of concept `target`, starting from its pre-sigmoid score. One map per batch entry.
template <typename T>
std::vector<AttributionMap> lrp(const core::Network<T>& encoder, const core::Tape<T>& tape, std::size_t target,
                                const RuleAssignment& rules)
{
    detail::check_tape(encoder, tape);
    const std::size_t score = score_layer_of(encoder);
    auto r = detail::target_relevance(tape.output(score), target);
    require(rules.rules.size() == weighted_layer_count(encoder), ErrorKind::invalid_argument,
            "rule assignment must cover exactly the encoder's weighted layers");
    r = detail::propagate(encoder, tape, std::move(r), score + 1, rules.rules);
    return split_maps(r, static_cast<int>(target), "lrp");
}

/// Convenience: evaluation forward pass plus lrp for a single image.
template <typename T>
AttributionMap lrp(const core::Network<T>& encoder, const core::Tensor<T>& image, std::size_t target,
                   const RuleAssignment& rules)
{
    const auto tape = encoder.forward(image, core::Mode::eval);
    return lrp(encoder, tape, target, rules).at(0);
}

/// Relevance of task class `target` through predictor and encoder. Rules cover
/// encoder then predictor weighted layers.
template <typename T>
std::vector<AttributionMap> lrp_task(const core::ConceptModel<T>& model, const core::Tape<T>& encoder_tape,
                                     const core::Tape<T>& predictor_tape, std::size_t target, const RuleAssignment& rules)
{
    detail::check_tape(model.encoder, encoder_tape);
    detail::check_tape(model.predictor, predictor_tape);
    const std::size_t ne = weighted_layer_count(model.encoder), np = weighted_layer_count(model.predictor);
    require(rules.rules.size() == ne + np, ErrorKind::invalid_argument,
            "rule assignment must cover encoder and predictor weighted layers");
    auto r = detail::target_relevance(predictor_tape.final_output(), target);
    std::span<const LrpRule> all(rules.rules);
    r = detail::propagate(model.predictor, predictor_tape, std::move(r), model.predictor.size(), all.subspan(ne));
    r = detail::propagate(model.encoder, encoder_tape, std::move(r), model.encoder.size(), all.first(ne));
    return split_maps(r, static_cast<int>(target), "lrp-task");
}

} // namespace cbmaudit::attribution
