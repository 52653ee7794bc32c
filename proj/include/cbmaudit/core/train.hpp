#pragma once

// The three concept bottleneck training methods (independent, sequential,
// joint), evaluation, and prediction.

#include "cbmaudit/common/error.hpp"
#include "cbmaudit/common/seed.hpp"
#include "cbmaudit/core/augment.hpp"
#include "cbmaudit/core/loss.hpp"
#include "cbmaudit/core/model.hpp"
#include "cbmaudit/core/optim.hpp"
#include "cbmaudit/scene/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

namespace cbmaudit::core {

enum class TrainMethod { independent, sequential, joint };

inline std::string method_name(TrainMethod m)
{
    switch (m) {
    case TrainMethod::independent: return "independent";
    case TrainMethod::sequential: return "sequential";
    case TrainMethod::joint: return "joint";
    }
    return "joint";
}

inline TrainMethod method_from_name(const std::string& s)
{
    if (s == "independent") return TrainMethod::independent;
    if (s == "sequential") return TrainMethod::sequential;
    if (s == "joint") return TrainMethod::joint;
    fail(ErrorKind::config, "unknown training method: " + s);
}

struct StageConfig {
    OptimizerKind optimizer = OptimizerKind::sgd;
    double learning_rate = 0.02;
    std::size_t batch_size = 32;
    int epochs = 30;
    int patience = 5;
    double reduction_factor = 0.1;
    double threshold = 1e-4;
    double momentum = 0.9;
};

/// Joint training uses `encoder_stage` for both networks.
struct TrainConfig {
    TrainMethod method = TrainMethod::independent;
    double lambda = 0.5;
    JointLossForm joint_form = JointLossForm::convex;
    StageConfig encoder_stage{};
    StageConfig predictor_stage{OptimizerKind::adam, 0.01, 32, 30, 5, 0.1, 1e-4, 0.9};
    AugmentConfig augment{};
    std::uint64_t seed = 0;
};

struct EpochMetrics {
    int epoch = 0;
    std::string split;
    double concept_loss = 0;
    double task_loss = 0;
    double concept_acc = 0;
    double task_acc = 0;
    double lr = 0;
};

struct EvalSummary {
    double concept_loss = 0;
    double task_loss = 0;
    double concept_acc = 0;
    double task_acc = 0;
};

struct TrainResult {
    std::vector<EpochMetrics> log;
    EvalSummary validation;
};

/// Optional per-epoch observer, e.g. for progress output.
using EpochCallback = std::function<void(const EpochMetrics&)>;

inline void write_metric_log(const std::vector<EpochMetrics>& log, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorKind::io, "cannot write metric log " + path.string());
    out << "epoch,split,concept_loss,task_loss,concept_acc,task_acc,lr\n";
    char buf[256];
    for (const auto& m : log) {
        std::snprintf(buf, sizeof buf, "%d,%s,%.9g,%.9g,%.9g,%.9g,%.9g\n", m.epoch, m.split.c_str(), m.concept_loss,
                      m.task_loss, m.concept_acc, m.task_acc, m.lr);
        out << buf;
    }
}

// ---------------------------------------------------------------------------
// Batches

template <typename T>
struct Batch {
    Tensor<T> images;
    std::vector<std::uint8_t> concepts;
    std::vector<int> labels;
};

/// Converts images to [0, 1] floats. When `augment` is set, sample i of the
/// batch is augmented with a stream seeded by augment_seeds[i].
template <typename T>
Batch<T> make_batch(const scene::LabeledImages& data, std::span<const std::size_t> indices,
                    const AugmentConfig* augment = nullptr, std::span<const std::uint64_t> augment_seeds = {})
{
    Batch<T> b;
    const std::size_t per = data.pixels_per_sample();
    b.images = Tensor<T>(Shape{indices.size(), static_cast<std::size_t>(data.channels),
                               static_cast<std::size_t>(data.size), static_cast<std::size_t>(data.size)});
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const std::uint8_t* src = data.image(indices[i]);
        T* dst = b.images.data() + i * per;
        for (std::size_t p = 0; p < per; ++p) dst[p] = static_cast<T>(src[p]) / T(255);
        if (augment) {
            Rng rng(augment_seeds[i]);
            augment_sample(dst, static_cast<std::size_t>(data.size), static_cast<std::size_t>(data.size), *augment, rng);
        }
        const auto* row = data.concept_row(indices[i]);
        b.concepts.insert(b.concepts.end(), row, row + data.k);
        b.labels.push_back(data.labels[indices[i]]);
    }
    return b;
}

template <typename T>
Tensor<T> image_tensor(const scene::LabeledImages& data, std::size_t index)
{
    const std::size_t idx[1] = {index};
    return make_batch<T>(data, idx).images;
}

// ---------------------------------------------------------------------------
// Evaluation

inline double concept_accuracy_of(std::span<const float> probs, std::span<const std::uint8_t> targets)
{
    std::size_t hit = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) hit += (probs[i] >= 0.5f) == (targets[i] != 0);
    return probs.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(probs.size());
}

inline int argmax(std::span<const float> row)
{
    return static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
}

/// Concept probabilities and task logits for every image of a split.
struct SplitOutputs {
    std::size_t k = 0, classes = 0;
    std::vector<float> probabilities; ///< n x k
    std::vector<float> logits;        ///< n x classes
};

template <typename T>
SplitOutputs run_model(const ConceptModel<T>& model, const scene::LabeledImages& data, std::size_t batch_size = 64)
{
    SplitOutputs out;
    out.k = model.concepts();
    out.classes = model.classes();
    for (std::size_t start = 0; start < data.count(); start += batch_size) {
        std::vector<std::size_t> idx(std::min(batch_size, data.count() - start));
        std::iota(idx.begin(), idx.end(), start);
        auto batch = make_batch<T>(data, idx);
        Tensor<T> probs = model.encoder.infer(batch.images);
        Tensor<T> logits = model.predictor.infer(probs);
        for (auto v : probs.values()) out.probabilities.push_back(static_cast<float>(v));
        for (auto v : logits.values()) out.logits.push_back(static_cast<float>(v));
    }
    return out;
}

template <typename T>
std::vector<float> predictor_logits(const Network<T>& predictor, std::span<const float> concepts, std::size_t k)
{
    const std::size_t n = concepts.size() / k;
    Tensor<T> in(Shape{n, k, 1, 1});
    for (std::size_t i = 0; i < concepts.size(); ++i) in[i] = static_cast<T>(concepts[i]);
    Tensor<T> out = predictor.infer(in);
    std::vector<float> r(out.size());
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = static_cast<float>(out[i]);
    return r;
}

inline EvalSummary summarize(std::span<const float> probs, std::span<const float> logits, std::size_t classes,
                             std::span<const std::uint8_t> concepts, std::span<const int> labels)
{
    EvalSummary s;
    Tensor<float> p(Shape{labels.size(), probs.size() / std::max<std::size_t>(labels.size(), 1), 1, 1},
                    std::vector<float>(probs.begin(), probs.end()));
    Tensor<float> l(Shape{labels.size(), classes, 1, 1}, std::vector<float>(logits.begin(), logits.end()));
    s.concept_loss = bce_concept_loss(p, concepts).value;
    s.task_loss = ce_task_loss(l, labels).value;
    s.concept_acc = concept_accuracy_of(probs, concepts);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) hit += argmax(logits.subspan(i * classes, classes)) == labels[i];
    s.task_acc = labels.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(labels.size());
    return s;
}

template <typename T>
EvalSummary evaluate(const ConceptModel<T>& model, const scene::LabeledImages& data)
{
    auto out = run_model(model, data);
    return summarize(out.probabilities, out.logits, out.classes, data.concepts, data.labels);
}

struct Prediction {
    std::vector<float> probabilities;
    std::vector<std::uint8_t> concepts; ///< probability >= 0.5
    int task = 0;
    std::vector<float> logits;
};

/// Prediction for a single image of shape (1, C, H, W).
template <typename T>
Prediction predict(const ConceptModel<T>& model, const Tensor<T>& image)
{
    require(image.dim(0) == 1, ErrorKind::shape_mismatch, "predict takes a single image");
    Tensor<T> probs = model.encoder.infer(image);
    Tensor<T> logits = model.predictor.infer(probs);
    Prediction p;
    for (auto v : probs.values()) {
        p.probabilities.push_back(static_cast<float>(v));
        p.concepts.push_back(v >= T(0.5) ? 1 : 0);
    }
    for (auto v : logits.values()) p.logits.push_back(static_cast<float>(v));
    p.task = argmax(p.logits);
    return p;
}

// ---------------------------------------------------------------------------
// Training

namespace detail {

inline std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed)
{
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    return idx;
}

inline void check_finite(double loss, const std::string& phase, int epoch, std::size_t batch)
{
    if (!std::isfinite(loss))
        fail(ErrorKind::divergence, "non-finite loss in " + phase + " phase at epoch " + std::to_string(epoch) +
                                        ", batch " + std::to_string(batch));
}

struct RunningMetrics {
    double concept_loss = 0, task_loss = 0, concept_hits = 0, concept_total = 0, task_hits = 0, task_total = 0;
    double batches = 0;
    EpochMetrics finish(int epoch, double lr) const
    {
        return {epoch,
                "train",
                batches ? concept_loss / batches : 0,
                batches ? task_loss / batches : 0,
                concept_total ? concept_hits / concept_total : 0,
                task_total ? task_hits / task_total : 0,
                lr};
    }
};

template <typename T>
void count_concepts(RunningMetrics& m, const Tensor<T>& probs, std::span<const std::uint8_t> targets)
{
    for (std::size_t i = 0; i < probs.size(); ++i) m.concept_hits += (probs[i] >= T(0.5)) == (targets[i] != 0);
    m.concept_total += static_cast<double>(probs.size());
}

template <typename T>
void count_tasks(RunningMetrics& m, const Tensor<T>& logits, std::span<const int> labels)
{
    for (std::size_t b = 0; b < labels.size(); ++b) {
        auto row = logits.sample(b);
        m.task_hits += static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()) == labels[b];
    }
    m.task_total += static_cast<double>(labels.size());
}

inline EpochMetrics validation_row(int epoch, const EvalSummary& s, double lr)
{
    return {epoch, "validation", s.concept_loss, s.task_loss, s.concept_acc, s.task_acc, lr};
}

inline std::vector<std::uint64_t> augment_seeds(std::uint64_t seed, const std::string& phase, int epoch,
                                         std::span<const std::size_t> idx)
{
    std::vector<std::uint64_t> s;
    for (auto i : idx) s.push_back(stable_hash(stable_hash(seed, "augment-" + phase, static_cast<std::uint64_t>(epoch)), i));
    return s;
}

/// Encoder on (x, c) with the concept loss alone.
template <typename T>
void train_encoder(ConceptModel<T>& model, const scene::LabeledImages& train, const scene::LabeledImages& val,
                   const TrainConfig& cfg, TrainResult& result, int& epoch_counter, const EpochCallback& cb)
{
    const auto& st = cfg.encoder_stage;
    Optimizer<T> opt(model.encoder, st.optimizer, st.learning_rate, st.momentum);
    PlateauScheduler sched(st.patience, st.reduction_factor, st.threshold);
    const std::size_t score_end = model.score_layer() + 1;
    for (int e = 0; e < st.epochs; ++e, ++epoch_counter) {
        const auto order = shuffled(train.count(), stable_hash(cfg.seed, "shuffle-encoder", static_cast<std::uint64_t>(e)));
        RunningMetrics rm;
        for (std::size_t start = 0, bi = 0; start < order.size(); start += st.batch_size, ++bi) {
            std::span<const std::size_t> idx(order.data() + start, std::min(st.batch_size, order.size() - start));
            const auto seeds = augment_seeds(cfg.seed, "encoder", e, idx);
            auto batch = make_batch<T>(train, idx, cfg.augment.enabled ? &cfg.augment : nullptr, seeds);
            auto tape = model.encoder.forward(batch.images, Mode::train);
            auto loss = bce_with_logits(tape.output(model.score_layer()), batch.concepts);
            check_finite(loss.value, "encoder", e, bi);
            auto grads = model.encoder.zero_gradients();
            model.encoder.backward(tape, loss.grad, score_end, 0, &grads, false);
            opt.step(model.encoder, grads);
            model.encoder.update_running_stats(tape);
            rm.concept_loss += loss.value;
            rm.batches += 1;
            count_concepts(rm, tape.final_output(), batch.concepts);
        }
        const auto summary = evaluate(model, val);
        result.log.push_back(rm.finish(epoch_counter, opt.learning_rate()));
        result.log.push_back(validation_row(epoch_counter, summary, opt.learning_rate()));
        if (cb) {
            cb(result.log[result.log.size() - 2]);
            cb(result.log.back());
        }
        opt.set_learning_rate(sched.step(summary.concept_loss, opt.learning_rate()));
    }
}

/// Predictor on (concept vectors, y). `val_inputs` drives the scheduler;
/// `val_pipeline` (encoder outputs on validation images) is only logged.
template <typename T>
void train_predictor(ConceptModel<T>& model, std::span<const float> inputs, std::span<const int> labels,
                     std::span<const float> val_inputs, std::span<const int> val_labels,
                     std::span<const float> val_pipeline, std::span<const std::uint8_t> val_concepts,
                     const TrainConfig& cfg, TrainResult& result, int& epoch_counter, const EpochCallback& cb)
{
    const auto& st = cfg.predictor_stage;
    const std::size_t k = model.concepts();
    const std::size_t n = labels.size();
    const std::size_t classes = model.classes();
    Optimizer<T> opt(model.predictor, st.optimizer, st.learning_rate, st.momentum);
    PlateauScheduler sched(st.patience, st.reduction_factor, st.threshold);
    for (int e = 0; e < st.epochs; ++e, ++epoch_counter) {
        const auto order = shuffled(n, stable_hash(cfg.seed, "shuffle-predictor", static_cast<std::uint64_t>(e)));
        RunningMetrics rm;
        for (std::size_t start = 0, bi = 0; start < n; start += st.batch_size, ++bi) {
            const std::size_t bs = std::min(st.batch_size, n - start);
            Tensor<T> x(Shape{bs, k, 1, 1});
            std::vector<int> y(bs);
            for (std::size_t i = 0; i < bs; ++i) {
                const std::size_t s = order[start + i];
                for (std::size_t c = 0; c < k; ++c) x[i * k + c] = static_cast<T>(inputs[s * k + c]);
                y[i] = labels[s];
            }
            auto tape = model.predictor.forward(x, Mode::train);
            auto loss = ce_task_loss(tape.final_output(), y);
            check_finite(loss.value, "predictor", e, bi);
            auto grads = model.predictor.zero_gradients();
            model.predictor.backward(tape, loss.grad, model.predictor.size(), 0, &grads);
            opt.step(model.predictor, grads);
            rm.task_loss += loss.value;
            rm.batches += 1;
            count_tasks(rm, tape.final_output(), y);
        }
        const auto val_logits = predictor_logits(model.predictor, val_inputs, k);
        Tensor<float> vl(Shape{val_labels.size(), classes, 1, 1}, val_logits);
        const double sched_loss = ce_task_loss(vl, val_labels).value;

        const auto pipe_logits = predictor_logits(model.predictor, val_pipeline, k);
        const auto summary = summarize(val_pipeline, pipe_logits, classes, val_concepts, val_labels);
        result.log.push_back(rm.finish(epoch_counter, opt.learning_rate()));
        result.log.push_back(validation_row(epoch_counter, summary, opt.learning_rate()));
        if (cb) {
            cb(result.log[result.log.size() - 2]);
            cb(result.log.back());
        }
        opt.set_learning_rate(sched.step(sched_loss, opt.learning_rate()));
    }
}

template <typename T>
void train_joint(ConceptModel<T>& model, const scene::LabeledImages& train, const scene::LabeledImages& val,
                 const TrainConfig& cfg, TrainResult& result, int& epoch_counter, const EpochCallback& cb)
{
    const auto& st = cfg.encoder_stage;
    const auto [w_concept, w_task] = combined_weights(cfg.lambda, cfg.joint_form);
    Optimizer<T> opt_e(model.encoder, st.optimizer, st.learning_rate, st.momentum);
    Optimizer<T> opt_p(model.predictor, st.optimizer, st.learning_rate, st.momentum);
    PlateauScheduler sched(st.patience, st.reduction_factor, st.threshold);
    const std::size_t score_end = model.score_layer() + 1;
    for (int e = 0; e < st.epochs; ++e, ++epoch_counter) {
        const auto order = shuffled(train.count(), stable_hash(cfg.seed, "shuffle-joint", static_cast<std::uint64_t>(e)));
        RunningMetrics rm;
        for (std::size_t start = 0, bi = 0; start < order.size(); start += st.batch_size, ++bi) {
            std::span<const std::size_t> idx(order.data() + start, std::min(st.batch_size, order.size() - start));
            const auto seeds = augment_seeds(cfg.seed, "joint", e, idx);
            auto batch = make_batch<T>(train, idx, cfg.augment.enabled ? &cfg.augment : nullptr, seeds);
            auto tape_e = model.encoder.forward(batch.images, Mode::train);
            const Tensor<T>& probs = tape_e.final_output();
            auto tape_p = model.predictor.forward(probs, Mode::train);
            auto closs = bce_with_logits(tape_e.output(model.score_layer()), batch.concepts);
            auto tloss = ce_task_loss(tape_p.final_output(), batch.labels);
            const double total = combined_loss(cfg.lambda, closs.value, tloss.value, cfg.joint_form);
            check_finite(total, "joint", e, bi);

            for (auto& g : tloss.grad.values()) g *= static_cast<T>(w_task);
            auto grads_p = model.predictor.zero_gradients();
            Tensor<T> g_probs = model.predictor.backward(tape_p, tloss.grad, model.predictor.size(), 0, &grads_p);
            Tensor<T> g_scores(closs.grad.shape());
            for (std::size_t i = 0; i < g_scores.size(); ++i)
                g_scores[i] = static_cast<T>(w_concept) * closs.grad[i] + g_probs[i] * probs[i] * (T(1) - probs[i]);
            auto grads_e = model.encoder.zero_gradients();
            model.encoder.backward(tape_e, g_scores, score_end, 0, &grads_e, false);
            opt_e.step(model.encoder, grads_e);
            opt_p.step(model.predictor, grads_p);
            model.encoder.update_running_stats(tape_e);

            rm.concept_loss += closs.value;
            rm.task_loss += tloss.value;
            rm.batches += 1;
            count_concepts(rm, probs, batch.concepts);
            count_tasks(rm, tape_p.final_output(), batch.labels);
        }
        const auto summary = evaluate(model, val);
        result.log.push_back(rm.finish(epoch_counter, opt_e.learning_rate()));
        result.log.push_back(validation_row(epoch_counter, summary, opt_e.learning_rate()));
        if (cb) {
            cb(result.log[result.log.size() - 2]);
            cb(result.log.back());
        }
        const double lr = sched.step(combined_loss(cfg.lambda, summary.concept_loss, summary.task_loss, cfg.joint_form),
                                     opt_e.learning_rate());
        opt_e.set_learning_rate(lr);
        opt_p.set_learning_rate(lr);
    }
}

inline std::vector<float> as_floats(std::span<const std::uint8_t> bits) { return {bits.begin(), bits.end()}; }

} // namespace detail

/// Trains the predictor alone on ground-truth concepts, as in the independent method.
template <typename T>
void train_predictor_on_ground_truth(ConceptModel<T>& model, const scene::LabeledImages& train,
                                     const scene::LabeledImages& val, const TrainConfig& cfg, TrainResult& result,
                                     int& epoch_counter, const EpochCallback& cb = {})
{
    const auto gt = detail::as_floats(train.concepts);
    const auto gt_val = detail::as_floats(val.concepts);
    const auto pipeline = run_model(model, val).probabilities;
    detail::train_predictor(model, gt, train.labels, gt_val, val.labels, pipeline, val.concepts, cfg, result,
                            epoch_counter, cb);
}

/// Trains encoder and predictor with the configured method.
template <typename T>
TrainResult train(ConceptModel<T>& model, const scene::LabeledImages& train_split,
                  const scene::LabeledImages& val_split, const TrainConfig& cfg, const EpochCallback& cb = {})
{
    require(train_split.count() > 0 && val_split.count() > 0, ErrorKind::invalid_argument, "empty split");
    require(static_cast<std::size_t>(train_split.k) == model.concepts(), ErrorKind::shape_mismatch,
            "dataset concept count does not match the encoder");
    model.validate();
    TrainResult result;
    int epoch = 0;
    switch (cfg.method) {
    case TrainMethod::independent:
        detail::train_encoder(model, train_split, val_split, cfg, result, epoch, cb);
        train_predictor_on_ground_truth(model, train_split, val_split, cfg, result, epoch, cb);
        break;
    case TrainMethod::sequential: {
        detail::train_encoder(model, train_split, val_split, cfg, result, epoch, cb);
        const auto train_hat = run_model(model, train_split).probabilities;
        const auto val_hat = run_model(model, val_split).probabilities;
        detail::train_predictor(model, train_hat, train_split.labels, val_hat, val_split.labels, val_hat,
                                val_split.concepts, cfg, result, epoch, cb);
        break;
    }
    case TrainMethod::joint: detail::train_joint(model, train_split, val_split, cfg, result, epoch, cb); break;
    }
    result.validation = evaluate(model, val_split);
    return result;
}

} // namespace cbmaudit::core
