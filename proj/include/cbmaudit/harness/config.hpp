#pragma once

// Experiment configuration: one JSON document, every field defaulted. Unknown
// keys are rejected so that typos do not silently fall back to defaults.

#include "cbmaudit/attribution/gradients.hpp"
#include "cbmaudit/attribution/lrp.hpp"
#include "cbmaudit/common/error.hpp"
#include "cbmaudit/common/seed.hpp"
#include "cbmaudit/core/train.hpp"
#include "cbmaudit/metrics/probe.hpp"
#include "cbmaudit/metrics/proportion.hpp"
#include "cbmaudit/scene/dataset.hpp"

#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

namespace cbmaudit::harness {

using nlohmann::json;

struct DatasetBlock {
    scene::ConceptScheme scheme = scene::ConceptScheme::full52;
    scene::SamplingRegime regime = scene::SamplingRegime::poker_balanced;
    int count = 2000;
    int image_size = 96;
    double split_ratio = 0.7;
    scene::LayoutOptions layout{};
};

struct ModelBlock {
    std::vector<core::ConvBlock> blocks{{16, true}, {32, true}, {64, true}, {128, true}};
    bool global_pool = true;
    std::vector<std::size_t> hidden;
    bool batch_norm = true;
    bool bias = true;
    std::size_t predictor_hidden = 64;
    std::size_t classes = 6;
    int concepts = 0; ///< 0 = derived from the concept scheme
};

struct TrainingBlock {
    core::TrainConfig train{};
    int repeats = 5;
};

struct AttributionBlock {
    std::vector<std::string> methods{"lrp", "ig+smoothgrad", "ig+smoothgrad_sq"};
    std::vector<attribution::LrpRule> rules; ///< empty = default assignment
    double epsilon_factor = 0.25;
    std::size_t ig_steps = 32;
    std::string baseline = "zeros";
    attribution::NoiseTunnelConfig noise_tunnel{};
    std::vector<std::string> samples; ///< explain targets; empty = first validation sample
    std::string concepts = "present"; ///< "present", "all", or comma-separated indices
    bool dump_raw = true;
};

struct MetricsBlock {
    metrics::ReferenceMode proportion_mode = metrics::ReferenceMode::union_of_concept_regions;
    std::vector<std::string> proportion_methods{"lrp"};
    int max_samples = 200; ///< validation samples used by eval; 0 = all
    int ois_repeats = 3;
    metrics::ProbeConfig probe{};
};

struct ExperimentConfig {
    std::string name = "experiment";
    std::uint64_t seed = 0;
    DatasetBlock dataset;
    ModelBlock model;
    TrainingBlock training;
    AttributionBlock attribution;
    MetricsBlock metrics;
    std::string output = "runs";
    unsigned threads = 1;

    std::size_t concepts() const { return static_cast<std::size_t>(scene::concept_count(dataset.scheme)); }
};

// ---------------------------------------------------------------------------
// JSON mapping

namespace detail {

inline void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed)
{
    require(j.is_object(), ErrorKind::config, where + " must be a JSON object");
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [key, value] : j.items())
        require(ok.count(key) > 0, ErrorKind::config, "unknown key '" + key + "' in " + where);
}

template <typename V>
void read(const json& j, const char* key, V& out, const std::string& where)
{
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<V>();
    } catch (const json::exception& e) {
        fail(ErrorKind::config, where + "." + key + ": " + e.what());
    }
}

inline json stage_to_json(const core::StageConfig& s)
{
    return {{"optimizer", core::optimizer_name(s.optimizer)},
            {"learning_rate", s.learning_rate},
            {"batch_size", s.batch_size},
            {"epochs", s.epochs},
            {"patience", s.patience},
            {"reduction_factor", s.reduction_factor},
            {"threshold", s.threshold},
            {"momentum", s.momentum}};
}

inline core::StageConfig stage_from_json(const json& j, core::StageConfig s, const std::string& where)
{
    check_keys(j, where,
               {"optimizer", "learning_rate", "batch_size", "epochs", "patience", "reduction_factor", "threshold",
                "momentum"});
    std::string opt = core::optimizer_name(s.optimizer);
    read(j, "optimizer", opt, where);
    s.optimizer = core::optimizer_from_name(opt);
    read(j, "learning_rate", s.learning_rate, where);
    read(j, "batch_size", s.batch_size, where);
    read(j, "epochs", s.epochs, where);
    read(j, "patience", s.patience, where);
    read(j, "reduction_factor", s.reduction_factor, where);
    read(j, "threshold", s.threshold, where);
    read(j, "momentum", s.momentum, where);
    require(s.learning_rate > 0 && s.batch_size > 0 && s.epochs >= 0 && s.patience >= 1, ErrorKind::config,
            where + ": learning_rate, batch_size and patience must be positive");
    return s;
}

inline json rule_to_json(const attribution::LrpRule& r)
{
    switch (r.kind) {
    case attribution::LrpRule::Kind::zero: return {{"rule", "zero"}};
    case attribution::LrpRule::Kind::epsilon:
        return {{"rule", r.relative ? "epsilon_relative" : "epsilon"}, {"epsilon", r.epsilon}};
    case attribution::LrpRule::Kind::alpha_beta: return {{"rule", "alpha_beta"}, {"alpha", r.alpha}, {"beta", r.beta}};
    }
    return {};
}

inline attribution::LrpRule rule_from_json(const json& j)
{
    check_keys(j, "attribution.rules[]", {"rule", "epsilon", "alpha", "beta"});
    const std::string kind = j.value("rule", "zero");
    try {
        if (kind == "zero") return attribution::LrpRule::zero();
        if (kind == "epsilon") return attribution::LrpRule::eps(j.value("epsilon", 0.0));
        if (kind == "epsilon_relative") return attribution::LrpRule::relative_epsilon(j.value("epsilon", 0.25));
        if (kind == "alpha_beta") return attribution::LrpRule::alpha_beta(j.value("alpha", 1.0), j.value("beta", 0.0));
    } catch (const Error& e) {
        fail(ErrorKind::config, std::string("attribution.rules: ") + e.what());
    }
    fail(ErrorKind::config, "unknown LRP rule: " + kind);
}

} // namespace detail

inline json to_json(const ExperimentConfig& c)
{
    json blocks = json::array();
    for (const auto& b : c.model.blocks) blocks.push_back({{"channels", b.channels}, {"pool", b.pool}});
    json rules = json::array();
    for (const auto& r : c.attribution.rules) rules.push_back(detail::rule_to_json(r));
    const auto& t = c.training.train;
    const auto& a = t.augment;
    return {
        {"name", c.name},
        {"seed", c.seed},
        {"output", c.output},
        {"threads", c.threads},
        {"dataset",
         {{"scheme", scene::scheme_name(c.dataset.scheme)},
          {"regime", scene::regime_name(c.dataset.regime)},
          {"count", c.dataset.count},
          {"image_size", c.dataset.image_size},
          {"split_ratio", c.dataset.split_ratio},
          {"layout",
           {{"min_scale", c.dataset.layout.min_scale},
            {"max_scale", c.dataset.layout.max_scale},
            {"max_rotation_deg", c.dataset.layout.max_rotation_deg},
            {"allow_overlap", c.dataset.layout.allow_overlap}}}}},
        {"model",
         {{"blocks", blocks},
          {"global_pool", c.model.global_pool},
          {"hidden", c.model.hidden},
          {"batch_norm", c.model.batch_norm},
          {"bias", c.model.bias},
          {"predictor_hidden", c.model.predictor_hidden},
          {"classes", c.model.classes},
          {"concepts", c.concepts()}}},
        {"training",
         {{"method", core::method_name(t.method)},
          {"lambda", t.lambda},
          {"joint_form", t.joint_form == core::JointLossForm::convex ? "convex" : "additive"},
          {"repeats", c.training.repeats},
          {"encoder_stage", detail::stage_to_json(t.encoder_stage)},
          {"predictor_stage", detail::stage_to_json(t.predictor_stage)},
          {"augment",
           {{"enabled", a.enabled},
            {"horizontal_flip", a.horizontal_flip},
            {"vertical_flip", a.vertical_flip},
            {"brightness", a.brightness},
            {"contrast", a.contrast},
            {"saturation", a.saturation},
            {"hue", a.hue},
            {"grayscale_probability", a.grayscale_probability}}}}},
        {"attribution",
         {{"methods", c.attribution.methods},
          {"rules", rules},
          {"epsilon_factor", c.attribution.epsilon_factor},
          {"ig_steps", c.attribution.ig_steps},
          {"baseline", c.attribution.baseline},
          {"noise_tunnel",
           {{"samples", c.attribution.noise_tunnel.samples}, {"stddev", c.attribution.noise_tunnel.stddev}}},
          {"samples", c.attribution.samples},
          {"concepts", c.attribution.concepts},
          {"dump_raw", c.attribution.dump_raw}}},
        {"metrics",
         {{"proportion_mode", metrics::reference_mode_name(c.metrics.proportion_mode)},
          {"proportion_methods", c.metrics.proportion_methods},
          {"max_samples", c.metrics.max_samples},
          {"ois_repeats", c.metrics.ois_repeats},
          {"probe",
           {{"hidden", c.metrics.probe.hidden},
            {"epochs", c.metrics.probe.epochs},
            {"learning_rate", c.metrics.probe.learning_rate},
            {"train_fraction", c.metrics.probe.train_fraction}}}}},
    };
}

inline const std::set<std::string>& known_methods()
{
    static const std::set<std::string> m{"lrp", "ig", "ig+smoothgrad", "ig+smoothgrad_sq", "gradcam"};
    return m;
}

inline ExperimentConfig config_from_json(const json& j)
{
    using detail::check_keys;
    using detail::read;
    ExperimentConfig c;
    check_keys(j, "config",
               {"name", "seed", "output", "threads", "dataset", "model", "training", "attribution", "metrics", "$schema"});
    read(j, "name", c.name, "config");
    read(j, "seed", c.seed, "config");
    read(j, "output", c.output, "config");
    read(j, "threads", c.threads, "config");

    if (j.contains("dataset")) {
        const auto& d = j["dataset"];
        check_keys(d, "dataset", {"scheme", "regime", "count", "image_size", "split_ratio", "layout"});
        std::string scheme(scene::scheme_name(c.dataset.scheme)), regime(scene::regime_name(c.dataset.regime));
        read(d, "scheme", scheme, "dataset");
        read(d, "regime", regime, "dataset");
        try {
            c.dataset.scheme = scene::scheme_from_name(scheme);
            c.dataset.regime = scene::regime_from_name(regime);
        } catch (const Error& e) {
            fail(ErrorKind::config, e.what());
        }
        read(d, "count", c.dataset.count, "dataset");
        read(d, "image_size", c.dataset.image_size, "dataset");
        read(d, "split_ratio", c.dataset.split_ratio, "dataset");
        if (d.contains("layout")) {
            const auto& l = d["layout"];
            check_keys(l, "dataset.layout", {"min_scale", "max_scale", "max_rotation_deg", "allow_overlap"});
            read(l, "min_scale", c.dataset.layout.min_scale, "dataset.layout");
            read(l, "max_scale", c.dataset.layout.max_scale, "dataset.layout");
            read(l, "max_rotation_deg", c.dataset.layout.max_rotation_deg, "dataset.layout");
            read(l, "allow_overlap", c.dataset.layout.allow_overlap, "dataset.layout");
        }
    }
    if (j.contains("model")) {
        const auto& m = j["model"];
        check_keys(m, "model",
                   {"blocks", "global_pool", "hidden", "batch_norm", "bias", "predictor_hidden", "classes", "concepts"});
        if (m.contains("blocks")) {
            c.model.blocks.clear();
            for (const auto& b : m["blocks"]) {
                check_keys(b, "model.blocks[]", {"channels", "pool"});
                core::ConvBlock cb;
                read(b, "channels", cb.channels, "model.blocks[]");
                read(b, "pool", cb.pool, "model.blocks[]");
                c.model.blocks.push_back(cb);
            }
        }
        read(m, "global_pool", c.model.global_pool, "model");
        read(m, "hidden", c.model.hidden, "model");
        read(m, "batch_norm", c.model.batch_norm, "model");
        read(m, "bias", c.model.bias, "model");
        read(m, "predictor_hidden", c.model.predictor_hidden, "model");
        read(m, "classes", c.model.classes, "model");
        read(m, "concepts", c.model.concepts, "model");
    }
    if (j.contains("training")) {
        const auto& t = j["training"];
        check_keys(t, "training",
                   {"method", "lambda", "joint_form", "repeats", "encoder_stage", "predictor_stage", "augment"});
        auto& tc = c.training.train;
        std::string method = core::method_name(tc.method), form = "convex";
        read(t, "method", method, "training");
        try {
            tc.method = core::method_from_name(method);
        } catch (const Error& e) {
            fail(ErrorKind::config, e.what());
        }
        read(t, "lambda", tc.lambda, "training");
        read(t, "joint_form", form, "training");
        require(form == "convex" || form == "additive", ErrorKind::config, "training.joint_form must be convex or additive");
        tc.joint_form = form == "convex" ? core::JointLossForm::convex : core::JointLossForm::additive;
        read(t, "repeats", c.training.repeats, "training");
        if (t.contains("encoder_stage"))
            tc.encoder_stage = detail::stage_from_json(t["encoder_stage"], tc.encoder_stage, "training.encoder_stage");
        if (t.contains("predictor_stage"))
            tc.predictor_stage =
                detail::stage_from_json(t["predictor_stage"], tc.predictor_stage, "training.predictor_stage");
        if (t.contains("augment")) {
            const auto& a = t["augment"];
            check_keys(a, "training.augment",
                       {"enabled", "horizontal_flip", "vertical_flip", "brightness", "contrast", "saturation", "hue",
                        "grayscale_probability"});
            auto& ac = tc.augment;
            read(a, "enabled", ac.enabled, "training.augment");
            read(a, "horizontal_flip", ac.horizontal_flip, "training.augment");
            read(a, "vertical_flip", ac.vertical_flip, "training.augment");
            read(a, "brightness", ac.brightness, "training.augment");
            read(a, "contrast", ac.contrast, "training.augment");
            read(a, "saturation", ac.saturation, "training.augment");
            read(a, "hue", ac.hue, "training.augment");
            read(a, "grayscale_probability", ac.grayscale_probability, "training.augment");
        }
    }
    if (j.contains("attribution")) {
        const auto& a = j["attribution"];
        check_keys(a, "attribution",
                   {"methods", "rules", "epsilon_factor", "ig_steps", "baseline", "noise_tunnel", "samples", "concepts",
                    "dump_raw"});
        read(a, "methods", c.attribution.methods, "attribution");
        if (a.contains("rules"))
            for (const auto& r : a["rules"]) c.attribution.rules.push_back(detail::rule_from_json(r));
        read(a, "epsilon_factor", c.attribution.epsilon_factor, "attribution");
        read(a, "ig_steps", c.attribution.ig_steps, "attribution");
        read(a, "baseline", c.attribution.baseline, "attribution");
        if (a.contains("noise_tunnel")) {
            const auto& n = a["noise_tunnel"];
            check_keys(n, "attribution.noise_tunnel", {"samples", "stddev"});
            read(n, "samples", c.attribution.noise_tunnel.samples, "attribution.noise_tunnel");
            read(n, "stddev", c.attribution.noise_tunnel.stddev, "attribution.noise_tunnel");
        }
        read(a, "samples", c.attribution.samples, "attribution");
        read(a, "concepts", c.attribution.concepts, "attribution");
        read(a, "dump_raw", c.attribution.dump_raw, "attribution");
    }
    if (j.contains("metrics")) {
        const auto& m = j["metrics"];
        check_keys(m, "metrics", {"proportion_mode", "proportion_methods", "max_samples", "ois_repeats", "probe"});
        std::string mode = metrics::reference_mode_name(c.metrics.proportion_mode);
        read(m, "proportion_mode", mode, "metrics");
        try {
            c.metrics.proportion_mode = metrics::reference_mode_from_name(mode);
        } catch (const Error& e) {
            fail(ErrorKind::config, e.what());
        }
        read(m, "proportion_methods", c.metrics.proportion_methods, "metrics");
        read(m, "max_samples", c.metrics.max_samples, "metrics");
        read(m, "ois_repeats", c.metrics.ois_repeats, "metrics");
        if (m.contains("probe")) {
            const auto& p = m["probe"];
            check_keys(p, "metrics.probe", {"hidden", "epochs", "learning_rate", "train_fraction"});
            read(p, "hidden", c.metrics.probe.hidden, "metrics.probe");
            read(p, "epochs", c.metrics.probe.epochs, "metrics.probe");
            read(p, "learning_rate", c.metrics.probe.learning_rate, "metrics.probe");
            read(p, "train_fraction", c.metrics.probe.train_fraction, "metrics.probe");
        }
    }
    return c;
}

/// Cross-block consistency.
inline void validate(const ExperimentConfig& c)
{
    auto check = [](bool ok, const std::string& what) { require(ok, ErrorKind::config, what); };
    try {
        scene::check_regime_scheme(c.dataset.regime, c.dataset.scheme);
    } catch (const Error& e) {
        fail(ErrorKind::config, e.what());
    }
    check(c.dataset.count >= 10, "dataset.count must be at least 10");
    check(c.dataset.image_size >= 16, "dataset.image_size must be at least 16");
    check(c.dataset.split_ratio > 0 && c.dataset.split_ratio < 1, "dataset.split_ratio must lie in (0,1)");
    check(c.model.concepts == 0 || static_cast<std::size_t>(c.model.concepts) == c.concepts(),
          "model.concepts (" + std::to_string(c.model.concepts) + ") does not match the concept scheme (" +
              std::to_string(c.concepts()) + ")");
    check(c.model.classes == scene::all_hand_ranks.size(), "model.classes must be 6 (hand ranks)");
    check(!c.model.blocks.empty(), "model.blocks must not be empty");
    check(c.training.repeats >= 1, "training.repeats must be at least 1");
    check(c.training.train.lambda >= 0 && c.training.train.lambda <= 1, "training.lambda must lie in [0,1]");
    check(c.attribution.ig_steps >= 1, "attribution.ig_steps must be at least 1");
    check(c.attribution.baseline == "zeros", "attribution.baseline supports only \"zeros\"");
    check(c.attribution.noise_tunnel.samples >= 1 && c.attribution.noise_tunnel.stddev >= 0,
          "attribution.noise_tunnel needs samples >= 1 and stddev >= 0");
    for (const auto& m : c.attribution.methods)
        check(known_methods().count(m) > 0, "unknown attribution method: " + m);
    for (const auto& m : c.metrics.proportion_methods)
        check(known_methods().count(m) > 0, "unknown proportion method: " + m);
    check(c.metrics.ois_repeats >= 1, "metrics.ois_repeats must be at least 1");
    check(c.metrics.probe.epochs >= 1 && c.metrics.probe.hidden >= 1, "metrics.probe needs epochs and hidden >= 1");
    check(c.metrics.probe.train_fraction > 0 && c.metrics.probe.train_fraction < 1,
          "metrics.probe.train_fraction must lie in (0,1)");
}

inline ExperimentConfig load_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorKind::config, "cannot read config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        fail(ErrorKind::config, "config " + path.string() + " is not valid JSON: " + e.what());
    }
    auto c = config_from_json(j);
    validate(c);
    return c;
}

// ---------------------------------------------------------------------------
// Derived settings

inline std::string hex64(std::uint64_t v)
{
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

/// Hash of a JSON value's canonical (sorted-key) serialization.
inline std::string json_hash(const json& j) { return hex64(fnv1a(j.dump())); }

inline json dataset_identity(const ExperimentConfig& c)
{
    auto j = to_json(c);
    return {{"dataset", j["dataset"]}, {"seed", c.seed}};
}

inline json model_identity(const ExperimentConfig& c)
{
    auto j = to_json(c);
    return {{"dataset", j["dataset"]}, {"model", j["model"]}, {"training", j["training"]}, {"seed", c.seed}};
}

inline json analysis_identity(const ExperimentConfig& c)
{
    auto j = model_identity(c);
    const auto full = to_json(c);
    j["attribution"] = full["attribution"];
    j["metrics"] = full["metrics"];
    return j;
}

inline scene::DatasetConfig dataset_config(const ExperimentConfig& c)
{
    scene::DatasetConfig d;
    d.scheme = c.dataset.scheme;
    d.regime = c.dataset.regime;
    d.count = c.dataset.count;
    d.split_ratio = c.dataset.split_ratio;
    d.image_size = c.dataset.image_size;
    d.master_seed = stable_hash(c.seed, "dataset");
    d.layout = c.dataset.layout;
    d.threads = c.threads;
    return d;
}

inline core::EncoderConfig encoder_config(const ExperimentConfig& c)
{
    core::EncoderConfig e;
    e.image_size = static_cast<std::size_t>(c.dataset.image_size);
    e.blocks = c.model.blocks;
    e.global_pool = c.model.global_pool;
    e.hidden = c.model.hidden;
    e.concepts = c.concepts();
    e.batch_norm = c.model.batch_norm;
    e.bias = c.model.bias;
    return e;
}

inline core::PredictorConfig predictor_config(const ExperimentConfig& c)
{
    return {c.concepts(), c.model.predictor_hidden, c.model.classes, c.model.bias};
}

inline std::uint64_t repeat_seed(const ExperimentConfig& c, int repeat)
{
    return stable_hash(c.seed, "model-repeat", static_cast<std::uint64_t>(repeat));
}

inline std::uint64_t probe_seed(const ExperimentConfig& c, int model_repeat, int probe_repeat)
{
    return stable_hash(stable_hash(c.seed, "probe-repeat", static_cast<std::uint64_t>(probe_repeat)),
                       static_cast<std::uint64_t>(model_repeat));
}

/// Label used in aggregate tables: lambda 0 joint training is the standard network.
inline std::string model_label(const ExperimentConfig& c)
{
    const auto& t = c.training.train;
    if (t.method == core::TrainMethod::joint && t.lambda == 0.0) return "standard-NN";
    return "CBM-" + core::method_name(t.method);
}

/// Command-line and environment overrides. Precedence: flag, environment, file.
struct Overrides {
    std::optional<std::string> out;
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> threads;
};

inline void apply_overrides(ExperimentConfig& c, const Overrides& o)
{
    if (const char* env = std::getenv("CBMAUDIT_OUT"); env && *env) c.output = env;
    if (const char* env = std::getenv("CBMAUDIT_THREADS"); env && *env) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        require(end && *end == '\0' && v >= 1, ErrorKind::config, std::string("bad CBMAUDIT_THREADS: ") + env);
        c.threads = static_cast<unsigned>(v);
    }
    if (o.out) c.output = *o.out;
    if (o.seed) c.seed = *o.seed;
    if (o.threads) {
        require(*o.threads >= 1, ErrorKind::config, "--threads must be at least 1");
        c.threads = *o.threads;
    }
}

} // namespace cbmaudit::harness
