#pragma once

// Orchestration of gen -> train -> explain -> eval -> purity -> report.
//
// Output root layout (content addressed by config hash):
//   datasets/<hash>/          manifest, images, masks, summaries
//   models/<hash>/repeat-<i>/ checkpoint, metric log, summary
//   analysis/<hash>/          explain/, eval/, purity/, report.md
//   records/                  one RunRecord per command invocation
// Only records carry timestamps, so everything else is reproducible bytewise.

#include "cbmaudit/attribution/gradients.hpp"
#include "cbmaudit/attribution/lrp.hpp"
#include "cbmaudit/attribution/saliency.hpp"
#include "cbmaudit/core/checkpoint.hpp"
#include "cbmaudit/core/train.hpp"
#include "cbmaudit/harness/config.hpp"
#include "cbmaudit/harness/plot.hpp"
#include "cbmaudit/metrics/ois.hpp"
#include "cbmaudit/metrics/proportion.hpp"
#include "cbmaudit/scene/dataset.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#ifndef CBMAUDIT_SOURCE_VERSION
#define CBMAUDIT_SOURCE_VERSION "unknown"
#endif

namespace cbmaudit::harness {

namespace fs = std::filesystem;
using Model = core::ConceptModel<float>;

// ---------------------------------------------------------------------------
// Files

inline void write_text(const fs::path& path, const std::string& text)
{
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorKind::io, "cannot write " + path.string());
    out << text;
    require(static_cast<bool>(out), ErrorKind::io, "failed writing " + path.string());
}

inline std::string read_text(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorKind::io, "cannot read " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

inline json read_json(const fs::path& path)
{
    try {
        return json::parse(read_text(path));
    } catch (const json::exception& e) {
        fail(ErrorKind::corrupt, path.string() + ": " + e.what());
    }
}

inline std::string fmt(const char* format, double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, format, v);
    return buf;
}

/// Directories of one experiment under an output root.
struct Layout {
    fs::path root;
    std::string dataset_hash, model_hash, analysis_hash;

    explicit Layout(const ExperimentConfig& c)
        : root(c.output)
        , dataset_hash(json_hash(dataset_identity(c)))
        , model_hash(json_hash(model_identity(c)))
        , analysis_hash(json_hash(analysis_identity(c)))
    {
    }

    fs::path dataset() const { return root / "datasets" / dataset_hash; }
    fs::path models() const { return root / "models" / model_hash; }
    fs::path repeat(int r) const { return models() / ("repeat-" + std::to_string(r)); }
    fs::path checkpoint(int r) const { return repeat(r) / "model.ckpt"; }
    fs::path analysis() const { return root / "analysis" / analysis_hash; }
    fs::path records() const { return root / "records"; }
};

inline std::string dataset_label(const ExperimentConfig& c)
{
    switch (c.dataset.regime) {
    case scene::SamplingRegime::random_uniform: return "random cards";
    case scene::SamplingRegime::poker_balanced: return "poker cards";
    case scene::SamplingRegime::class_level_table: return "class-level poker cards";
    }
    return "unknown";
}

// ---------------------------------------------------------------------------
// Run records

struct RunRecord {
    std::string command;
    std::string config_hash;
    std::string source_version = CBMAUDIT_SOURCE_VERSION;
    std::string started; ///< UTC, ISO 8601
    std::vector<std::pair<std::string, double>> timings; ///< seconds
    std::vector<fs::path> artifacts;
};

inline std::string utc_now(const char* format = "%Y-%m-%dT%H:%M:%SZ")
{
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, format, &tm);
    return buf;
}

inline RunRecord start_record(const std::string& command, const std::string& hash)
{
    RunRecord r;
    r.command = command;
    r.config_hash = hash;
    r.started = utc_now();
    return r;
}

/// Writes records/<command>-<hash>-<timestamp>[-n].json; never replaces an existing record.
inline fs::path write_record(const RunRecord& r, const fs::path& root)
{
    json timings = json::object();
    for (const auto& [k, v] : r.timings) timings[k] = v;
    json paths = json::array();
    for (const auto& p : r.artifacts) paths.push_back(p.lexically_relative(root).generic_string());
    const json j = {{"command", r.command},   {"config_hash", r.config_hash}, {"source_version", r.source_version},
                    {"started", r.started},   {"timings_seconds", timings},   {"artifacts", paths}};
    const fs::path dir = root / "records";
    fs::create_directories(dir);
    const std::string stem = r.command + "-" + r.config_hash + "-" + utc_now("%Y%m%dT%H%M%SZ");
    fs::path path = dir / (stem + ".json");
    for (int n = 1; fs::exists(path); ++n) path = dir / (stem + "-" + std::to_string(n) + ".json");
    write_json(path, j);
    return path;
}

class Stopwatch {
public:
    double seconds() const
    {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

/// Runs f(i) for i in [0, n) on up to `threads` workers. Each index writes its
/// own slot, so results do not depend on scheduling.
template <typename F>
void parallel_for(std::size_t n, unsigned threads, F&& f)
{
    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
    if (threads == 1) {
        for (std::size_t i = 0; i < n; ++i) f(i);
        return;
    }
    std::exception_ptr error;
    std::mutex m;
    {
        std::vector<std::jthread> pool;
        for (unsigned t = 0; t < threads; ++t)
            pool.emplace_back([&, t] {
                try {
                    for (std::size_t i = t; i < n; i += threads) f(i);
                } catch (...) {
                    std::lock_guard lock(m);
                    if (!error) error = std::current_exception();
                }
            });
    }
    if (error) std::rethrow_exception(error);
}

// ---------------------------------------------------------------------------
// gen

struct GenResult {
    fs::path dir;
    scene::DatasetManifest manifest;
    bool reused = false;
    std::array<int, scene::hand_rank_count> histogram{};
    std::vector<fs::path> artifacts;
};

inline void write_int_matrix_csv(const std::vector<std::vector<int>>& m, const fs::path& path)
{
    std::ostringstream s;
    for (std::size_t j = 0; j < m.size(); ++j) s << (j ? ",c" : "c") << j;
    s << '\n';
    for (const auto& row : m) {
        for (std::size_t j = 0; j < row.size(); ++j) s << (j ? "," : "") << row[j];
        s << '\n';
    }
    write_text(path, s.str());
}

inline GenResult cmd_gen(const ExperimentConfig& c)
{
    const Layout lay(c);
    const auto dcfg = dataset_config(c);
    GenResult out;
    out.dir = lay.dataset();
    const fs::path manifest_path = out.dir / "manifest.json";
    if (fs::exists(manifest_path)) {
        out.manifest = scene::read_manifest(manifest_path);
        const auto& m = out.manifest;
        require(m.scheme == dcfg.scheme && m.regime == dcfg.regime && m.count == dcfg.count &&
                    m.image_size == dcfg.image_size && m.master_seed == dcfg.master_seed,
                ErrorKind::corrupt, "existing manifest does not match its config hash: " + manifest_path.string());
        out.reused = true;
    } else {
        out.manifest = scene::generate_dataset(dcfg, out.dir);
    }
    out.histogram = scene::class_histogram(out.manifest);

    json hist = json::object();
    std::ostringstream csv;
    csv << "class,count\n";
    for (auto r : scene::all_hand_ranks) {
        const int n = out.histogram[static_cast<int>(r)];
        hist[std::string(scene::hand_rank_name(r))] = n;
        csv << scene::hand_rank_name(r) << ',' << n << '\n';
    }
    int n_train = 0;
    for (const auto& s : out.manifest.samples) n_train += s.split == scene::Split::train;
    write_text(out.dir / "class_histogram.csv", csv.str());
    write_int_matrix_csv(scene::cooccurrence_matrix(out.manifest), out.dir / "cooccurrence.csv");
    write_json(out.dir / "summary.json", {{"label", dataset_label(c)},
                                          {"scheme", scene::scheme_name(dcfg.scheme)},
                                          {"regime", scene::regime_name(dcfg.regime)},
                                          {"count", dcfg.count},
                                          {"train", n_train},
                                          {"validation", dcfg.count - n_train},
                                          {"k", out.manifest.k()},
                                          {"class_histogram", hist}});
    write_json(out.dir / "config.json", dataset_identity(c));
    out.artifacts = {manifest_path, out.dir / "class_histogram.csv", out.dir / "cooccurrence.csv",
                     out.dir / "summary.json"};
    return out;
}

inline scene::DatasetManifest require_dataset(const ExperimentConfig& c)
{
    const fs::path path = Layout(c).dataset() / "manifest.json";
    require(fs::exists(path), ErrorKind::config, "dataset not found at " + path.parent_path().string() + " (run gen first)");
    return scene::read_manifest(path);
}

// ---------------------------------------------------------------------------
// train

struct RepeatResult {
    int repeat = 0;
    std::uint64_t seed = 0;
    fs::path checkpoint;
    core::EvalSummary validation;
    bool reused = false;
    double seconds = 0;
};

struct Aggregate {
    double mean = 0, stddev = 0;
};

inline Aggregate aggregate(const std::vector<double>& v)
{
    Aggregate a;
    if (v.empty()) return a;
    for (double x : v) a.mean += x;
    a.mean /= static_cast<double>(v.size());
    if (v.size() > 1) {
        double ss = 0;
        for (double x : v) ss += (x - a.mean) * (x - a.mean);
        a.stddev = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    return a;
}

struct TrainSummary {
    fs::path dir;
    std::string label;
    std::vector<RepeatResult> repeats;
    Aggregate concept_acc, task_acc; ///< percent
    std::vector<fs::path> artifacts;
};

struct TrainOptions {
    bool force = false; ///< retrain even when a finished checkpoint exists
    std::function<void(int repeat, const core::EpochMetrics&)> progress;
};

inline json eval_json(const core::EvalSummary& s)
{
    return {{"concept_loss", s.concept_loss},
            {"task_loss", s.task_loss},
            {"concept_acc", s.concept_acc},
            {"task_acc", s.task_acc}};
}

inline core::EvalSummary eval_from_json(const json& j)
{
    core::EvalSummary s;
    s.concept_loss = j.at("concept_loss").get<double>();
    s.task_loss = j.at("task_loss").get<double>();
    s.concept_acc = j.at("concept_acc").get<double>();
    s.task_acc = j.at("task_acc").get<double>();
    return s;
}

inline TrainSummary cmd_train(const ExperimentConfig& c, const TrainOptions& opt = {})
{
    const Layout lay(c);
    const auto manifest = require_dataset(c);
    require(static_cast<std::size_t>(manifest.k()) == c.concepts(), ErrorKind::config,
            "dataset concept count does not match the model");
    const auto train_split = scene::load_split(manifest, lay.dataset(), scene::Split::train);
    const auto val_split = scene::load_split(manifest, lay.dataset(), scene::Split::validation);

    TrainSummary out;
    out.dir = lay.models();
    out.label = model_label(c);
    fs::create_directories(out.dir);
    write_json(out.dir / "config.json", model_identity(c));
    out.repeats.resize(static_cast<std::size_t>(c.training.repeats));

    const unsigned workers = std::min<unsigned>(c.threads, static_cast<unsigned>(c.training.repeats));
    parallel_for(out.repeats.size(), workers, [&](std::size_t i) {
        const int r = static_cast<int>(i);
        auto& res = out.repeats[i];
        res.repeat = r;
        res.seed = repeat_seed(c, r);
        res.checkpoint = lay.checkpoint(r);
        const fs::path summary_path = lay.repeat(r) / "summary.json";
        if (!opt.force && fs::exists(summary_path) && fs::exists(res.checkpoint)) {
            const auto j = read_json(summary_path);
            res.validation = eval_from_json(j.at("validation"));
            res.reused = true;
            return;
        }
        Stopwatch watch;
        auto tc = c.training.train;
        tc.seed = res.seed;
        auto model = core::make_model<float>(encoder_config(c), predictor_config(c), res.seed);
        core::EpochCallback cb;
        if (opt.progress) cb = [&](const core::EpochMetrics& m) { opt.progress(r, m); };
        const auto result = core::train(model, train_split, val_split, tc, cb);
        res.validation = result.validation;
        res.seconds = watch.seconds();
        const json meta = {{"config", model_identity(c)},
                           {"repeat", r},
                           {"seed", res.seed},
                           {"method", core::method_name(tc.method)},
                           {"lambda", tc.lambda},
                           {"epochs", result.log.empty() ? 0 : result.log.back().epoch + 1},
                           {"validation", eval_json(result.validation)}};
        core::save_checkpoint(model, res.checkpoint, meta);
        core::write_metric_log(result.log, lay.repeat(r) / "metrics.csv");
        write_json(summary_path, {{"repeat", r}, {"seed", res.seed}, {"validation", eval_json(result.validation)}});
    });

    std::vector<double> ca, ta;
    for (const auto& r : out.repeats) {
        ca.push_back(100.0 * r.validation.concept_acc);
        ta.push_back(100.0 * r.validation.task_acc);
        out.artifacts.push_back(r.checkpoint);
        out.artifacts.push_back(lay.repeat(r.repeat) / "metrics.csv");
    }
    out.concept_acc = aggregate(ca);
    out.task_acc = aggregate(ta);
    const auto& t = c.training.train;
    std::ostringstream csv;
    csv << "label,method,dataset,lambda,repeats,concept_acc_mean,concept_acc_std,task_acc_mean,task_acc_std\n";
    csv << out.label << ',' << core::method_name(t.method) << ',' << dataset_label(c) << ',' << fmt("%g", t.lambda)
        << ',' << out.repeats.size() << ',' << fmt("%.4f", out.concept_acc.mean) << ','
        << fmt("%.4f", out.concept_acc.stddev) << ',' << fmt("%.4f", out.task_acc.mean) << ','
        << fmt("%.4f", out.task_acc.stddev) << '\n';
    write_text(out.dir / "aggregate.csv", csv.str());
    write_json(out.dir / "aggregate.json", {{"label", out.label},
                                            {"dataset", dataset_label(c)},
                                            {"concept_acc_pct", ca},
                                            {"task_acc_pct", ta},
                                            {"concept_acc_mean", out.concept_acc.mean},
                                            {"concept_acc_std", out.concept_acc.stddev},
                                            {"task_acc_mean", out.task_acc.mean},
                                            {"task_acc_std", out.task_acc.stddev}});
    out.artifacts.push_back(out.dir / "aggregate.csv");
    out.artifacts.push_back(out.dir / "aggregate.json");
    return out;
}

/// Trained checkpoints of the config, in repeat order.
inline std::vector<fs::path> trained_checkpoints(const ExperimentConfig& c)
{
    const Layout lay(c);
    std::vector<fs::path> out;
    for (int r = 0; r < c.training.repeats; ++r)
        if (fs::exists(lay.checkpoint(r))) out.push_back(lay.checkpoint(r));
    require(!out.empty(), ErrorKind::config, "no trained checkpoints under " + lay.models().string() + " (run train first)");
    return out;
}

/// The repeat with the highest validation concept accuracy (lowest index on ties).
inline fs::path best_checkpoint(const ExperimentConfig& c)
{
    const Layout lay(c);
    std::optional<fs::path> best;
    double best_acc = -1;
    for (int r = 0; r < c.training.repeats; ++r) {
        const fs::path s = lay.repeat(r) / "summary.json";
        if (!fs::exists(s) || !fs::exists(lay.checkpoint(r))) continue;
        const double acc = read_json(s).at("validation").at("concept_acc").get<double>();
        if (acc > best_acc) best_acc = acc, best = lay.checkpoint(r);
    }
    require(best.has_value(), ErrorKind::config, "no trained checkpoints under " + lay.models().string() + " (run train first)");
    return *best;
}

inline Model load_model(const fs::path& path, const ExperimentConfig& c)
{
    auto ck = core::load_checkpoint<float>(path);
    require(ck.model.concepts() == c.concepts(), ErrorKind::config,
            "checkpoint " + path.string() + " has " + std::to_string(ck.model.concepts()) +
                " concepts but the config expects " + std::to_string(c.concepts()));
    return std::move(ck.model);
}

// ---------------------------------------------------------------------------
// Attribution dispatch

inline attribution::RuleAssignment rules_for(const Model& m, const ExperimentConfig& c)
{
    if (c.attribution.rules.empty())
        return attribution::RuleAssignment::default_for(m.encoder, static_cast<const core::Network<float>*>(nullptr),
                                                        c.attribution.epsilon_factor);
    require(c.attribution.rules.size() == attribution::weighted_layer_count(m.encoder), ErrorKind::config,
            "attribution.rules must list one rule per encoder conv/linear layer (" +
                std::to_string(attribution::weighted_layer_count(m.encoder)) + ")");
    return {c.attribution.rules};
}

inline attribution::AttributionMap attribute(const Model& m, const core::Tensor<float>& x, std::size_t concept_id,
                                             const std::string& method, const ExperimentConfig& c, std::uint64_t seed)
{
    using namespace attribution;
    if (method == "lrp") return lrp(m.encoder, x, concept_id, rules_for(m, c));
    IgConfig ig;
    ig.steps = c.attribution.ig_steps;
    if (method == "ig") return integrated_gradients(m.encoder, x, concept_id, {}, ig);
    if (method == "gradcam") return grad_cam(m.encoder, x, concept_id);
    if (method == "ig+smoothgrad" || method == "ig+smoothgrad_sq") {
        auto nt = c.attribution.noise_tunnel;
        nt.mode = method == "ig+smoothgrad" ? TunnelMode::smoothgrad : TunnelMode::smoothgrad_squared;
        Rng rng(seed);
        const BaseMethod<float> base = [&](const core::Tensor<float>& xs) {
            return integrated_gradients(m.encoder, xs, concept_id, {}, ig);
        };
        return noise_tunnel(base, x, nt, rng);
    }
    fail(ErrorKind::config, "unknown attribution method: " + method);
}

inline core::Tensor<float> image_to_tensor(const scene::RgbImage& img)
{
    scene::LabeledImages one;
    one.size = img.width;
    scene::append_image(one, img);
    one.labels.push_back(0);
    return core::image_tensor<float>(one, 0);
}

inline std::uint64_t attribution_seed(const ExperimentConfig& c, const std::string& sample, std::size_t concept_id)
{
    return stable_hash(c.seed, "attribution-" + sample, concept_id);
}

// ---------------------------------------------------------------------------
// Analysis directory bookkeeping

inline void write_analysis_links(const ExperimentConfig& c)
{
    const Layout lay(c);
    fs::create_directories(lay.analysis());
    write_json(lay.analysis() / "config.json", analysis_identity(c));
    write_json(lay.analysis() / "links.json",
               {{"dataset", fs::relative(lay.dataset(), lay.analysis()).generic_string()},
                {"models", fs::relative(lay.models(), lay.analysis()).generic_string()},
                {"label", model_label(c)},
                {"dataset_label", dataset_label(c)}});
}

inline std::size_t sample_position(const scene::DatasetManifest& m, const std::string& id)
{
    for (std::size_t i = 0; i < m.samples.size(); ++i)
        if (m.samples[i].id == id) return i;
    fail(ErrorKind::invalid_argument, "unknown sample id: " + id);
}

inline std::vector<std::size_t> select_concepts(const std::string& filter, const scene::SampleRecord& s, std::size_t k)
{
    std::vector<std::size_t> out;
    if (filter == "present") {
        for (std::size_t i = 0; i < s.concept_bits.size(); ++i)
            if (s.concept_bits[i]) out.push_back(i);
        return out;
    }
    if (filter == "all") {
        for (std::size_t i = 0; i < k; ++i) out.push_back(i);
        return out;
    }
    std::stringstream ss(filter);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        std::size_t pos = 0;
        unsigned long v = 0;
        try {
            v = std::stoul(tok, &pos);
        } catch (const std::exception&) {
            pos = 0;
        }
        require(pos == tok.size() && !tok.empty(), ErrorKind::invalid_argument, "bad concept filter: " + filter);
        require(v < k, ErrorKind::invalid_argument, "concept index out of range: " + tok);
        out.push_back(v);
    }
    return out;
}

// ---------------------------------------------------------------------------
// explain

struct ExplainRequest {
    std::optional<fs::path> checkpoint;  ///< default: best repeat
    std::vector<std::string> samples;    ///< default: config, else the first validation sample
    std::optional<std::string> concepts; ///< default: config
};

struct ExplainResult {
    fs::path dir;
    fs::path checkpoint;
    std::vector<fs::path> overlays, sheets, raw;
    std::vector<fs::path> artifacts;
};

inline ExplainResult cmd_explain(const ExperimentConfig& c, const ExplainRequest& req = {})
{
    const Layout lay(c);
    const auto manifest = require_dataset(c);
    ExplainResult out;
    out.checkpoint = req.checkpoint ? *req.checkpoint : best_checkpoint(c);
    const Model model = load_model(out.checkpoint, c);
    out.dir = lay.analysis() / "explain";
    write_analysis_links(c);

    std::vector<std::string> ids = !req.samples.empty() ? req.samples : c.attribution.samples;
    if (ids.empty())
        for (const auto& s : manifest.samples)
            if (s.split == scene::Split::validation) {
                ids.push_back(s.id);
                break;
            }
    require(!ids.empty(), ErrorKind::invalid_argument, "no sample to explain");
    const std::string filter = req.concepts ? *req.concepts : c.attribution.concepts;
    const auto& methods = c.attribution.methods;
    require(!methods.empty(), ErrorKind::config, "attribution.methods is empty");

    for (const auto& id : ids) {
        const auto& rec = manifest.samples[sample_position(manifest, id)];
        const auto img = scene::read_png_rgb(lay.dataset() / rec.image);
        const auto x = image_to_tensor(img);
        const auto concepts = select_concepts(filter, rec, c.concepts());
        require(!concepts.empty(), ErrorKind::invalid_argument, "concept filter selects nothing for " + id);

        // one row per method: the input, then one overlay per concept
        std::vector<scene::RgbImage> tiles;
        std::vector<std::vector<attribution::AttributionMap>> maps(methods.size());
        for (std::size_t mi = 0; mi < methods.size(); ++mi) maps[mi].resize(concepts.size());
        parallel_for(methods.size() * concepts.size(), c.threads, [&](std::size_t u) {
            const std::size_t mi = u / concepts.size(), ci = u % concepts.size();
            maps[mi][ci] = attribute(model, x, concepts[ci], methods[mi], c, attribution_seed(c, id, concepts[ci]));
        });
        for (std::size_t mi = 0; mi < methods.size(); ++mi) {
            tiles.push_back(img);
            for (std::size_t ci = 0; ci < concepts.size(); ++ci) {
                const auto& map = maps[mi][ci];
                const fs::path overlay = out.dir / "overlays" / attribution::saliency_filename(id, concepts[ci], methods[mi]);
                const auto shaded = attribution::saliency_overlay(map, img);
                fs::create_directories(overlay.parent_path());
                scene::write_png(overlay, shaded);
                tiles.push_back(shaded);
                out.overlays.push_back(overlay);
                if (c.attribution.dump_raw) {
                    const fs::path base = out.dir / "raw" / (id + "_" + std::to_string(concepts[ci]) + "_" + methods[mi]);
                    attribution::write_raw_map(map, base, attribution_seed(c, id, concepts[ci]));
                    out.raw.push_back(base.string() + ".f32");
                    out.raw.push_back(base.string() + ".json");
                }
            }
        }
        const fs::path sheet = out.dir / (id + "_sheet.png");
        scene::write_png(sheet, attribution::contact_sheet(tiles, static_cast<int>(concepts.size()) + 1));
        out.sheets.push_back(sheet);
    }
    out.artifacts = out.overlays;
    out.artifacts.insert(out.artifacts.end(), out.sheets.begin(), out.sheets.end());
    out.artifacts.insert(out.artifacts.end(), out.raw.begin(), out.raw.end());
    return out;
}

// ---------------------------------------------------------------------------
// eval

struct EvalResult {
    fs::path dir;
    std::vector<metrics::ProportionReport> reports; ///< per method, pooled over repeats
    std::vector<fs::path> artifacts;
};

/// (concept, positive, negative) for every card of one sample.
using SampleProportions = std::vector<std::tuple<int, double, double>>;

inline SampleProportions sample_proportions(const Model& model, const ExperimentConfig& c, const fs::path& dataset,
                                            const scene::SampleRecord& rec, const std::string& method)
{
    const auto img = scene::read_png_rgb(dataset / rec.image);
    const auto x = image_to_tensor(img);
    std::vector<scene::Mask> masks;
    for (const auto& m : rec.masks) masks.push_back(scene::read_png_mask(dataset / m));
    SampleProportions out;
    for (std::size_t p = 0; p < 3; ++p) {
        if (masks[p].empty()) continue; // fully hidden card: nothing to attribute to
        const auto concept_id = static_cast<std::size_t>(rec.concepts[p]);
        const auto map = attribute(model, x, concept_id, method, c, attribution_seed(c, rec.id, concept_id));
        const auto r = map.summed();
        using metrics::RelevanceSign;
        out.emplace_back(rec.concepts[p],
                         metrics::relevance_proportion(r, masks[p], masks, c.metrics.proportion_mode, RelevanceSign::positive),
                         metrics::relevance_proportion(r, masks[p], masks, c.metrics.proportion_mode, RelevanceSign::negative));
    }
    return out;
}

inline void write_scatter_csv(const metrics::ProportionReport& r, const fs::path& path)
{
    std::ostringstream s;
    s << "concept,x_pos_proportion,y_neg_proportion\n";
    for (const auto& row : r.rows) s << row.concept_index << ',' << fmt("%.9g", row.positive) << ',' << fmt("%.9g", row.negative) << '\n';
    write_text(path, s.str());
}

inline EvalResult cmd_eval(const ExperimentConfig& c, std::vector<fs::path> checkpoints = {})
{
    const Layout lay(c);
    const auto manifest = require_dataset(c);
    if (checkpoints.empty()) checkpoints = trained_checkpoints(c);
    write_analysis_links(c);
    EvalResult out;
    out.dir = lay.analysis() / "eval";

    std::vector<const scene::SampleRecord*> samples;
    for (const auto& s : manifest.samples)
        if (s.split == scene::Split::validation) samples.push_back(&s);
    if (c.metrics.max_samples > 0 && samples.size() > static_cast<std::size_t>(c.metrics.max_samples))
        samples.resize(static_cast<std::size_t>(c.metrics.max_samples));
    require(!samples.empty(), ErrorKind::invalid_argument, "no validation samples to evaluate");

    json summary = {{"label", model_label(c)},
                    {"dataset", dataset_label(c)},
                    {"mode", metrics::reference_mode_name(c.metrics.proportion_mode)},
                    {"samples", samples.size()},
                    {"repeats", checkpoints.size()},
                    {"methods", json::object()}};
    for (const auto& method : c.metrics.proportion_methods) {
        metrics::ProportionReport pooled{c.metrics.proportion_mode, method, {}};
        for (std::size_t r = 0; r < checkpoints.size(); ++r) {
            const Model model = load_model(checkpoints[r], c);
            std::vector<SampleProportions> per(samples.size());
            parallel_for(samples.size(), c.threads,
                         [&](std::size_t i) { per[i] = sample_proportions(model, c, lay.dataset(), *samples[i], method); });
            metrics::ProportionReport rep{c.metrics.proportion_mode, method, {}};
            for (const auto& sp : per)
                for (const auto& [concept_id, pos, neg] : sp) {
                    rep.add(concept_id, pos, neg);
                    pooled.add(concept_id, pos, neg);
                }
            rep.sort();
            const fs::path p = out.dir / ("repeat-" + std::to_string(r)) / ("proportion_" + method + ".csv");
            fs::create_directories(p.parent_path());
            metrics::write_proportion_csv(rep, p);
            out.artifacts.push_back(p);
        }
        pooled.sort();
        const fs::path csv = out.dir / ("proportion_" + method + ".csv");
        const fs::path scatter = out.dir / ("scatter_" + method + ".csv");
        const fs::path png = out.dir / ("scatter_" + method + ".png");
        metrics::write_proportion_csv(pooled, csv);
        write_scatter_csv(pooled, scatter);
        Series s;
        for (const auto& row : pooled.rows) s.points.emplace_back(row.positive, row.negative);
        scene::write_png(png, scatter_plot({s}));
        const auto [pos, neg] = pooled.concept_means();
        summary["methods"][method] = {{"pos_mean", pos}, {"neg_mean", neg}, {"concepts", pooled.rows.size()}};
        out.artifacts.insert(out.artifacts.end(), {csv, scatter, png});
        out.reports.push_back(std::move(pooled));
    }
    write_json(out.dir / "summary.json", summary);
    out.artifacts.push_back(out.dir / "summary.json");
    return out;
}

// ---------------------------------------------------------------------------
// purity

struct PurityResult {
    fs::path dir;
    std::vector<metrics::OisReport> reports; ///< model-major, probe-minor
    metrics::OisSummary summary;
    std::vector<fs::path> artifacts;
};

inline PurityResult cmd_purity(const ExperimentConfig& c, std::vector<fs::path> checkpoints = {})
{
    const Layout lay(c);
    const auto manifest = require_dataset(c);
    if (checkpoints.empty()) checkpoints = trained_checkpoints(c);
    write_analysis_links(c);
    const auto val = scene::load_split(manifest, lay.dataset(), scene::Split::validation);
    PurityResult out;
    out.dir = lay.analysis() / "purity";
    const std::size_t k = c.concepts();

    std::ostringstream csv;
    csv << "model_repeat,probe_repeat,seed,ois\n";
    std::vector<double> values;
    for (std::size_t r = 0; r < checkpoints.size(); ++r) {
        const Model model = load_model(checkpoints[r], c);
        const auto predicted = core::run_model(model, val).probabilities;
        for (int j = 0; j < c.metrics.ois_repeats; ++j) {
            const auto seed = probe_seed(c, static_cast<int>(r), j);
            auto mats = metrics::build_matrices(val.concepts, predicted, k, seed, c.metrics.probe, c.threads);
            const double v = metrics::ois(mats.purity, mats.oracle);
            const fs::path dir = out.dir / ("model-" + std::to_string(r)) / ("probe-" + std::to_string(j));
            fs::create_directories(dir);
            metrics::write_matrix_csv(mats.oracle, dir / "mu.csv");
            metrics::write_matrix_csv(mats.purity, dir / "pi.csv");
            scene::write_png(dir / "mu.png", heatmap(mats.oracle));
            scene::write_png(dir / "pi.png", heatmap(mats.purity));
            for (const char* f : {"mu.csv", "pi.csv", "mu.png", "pi.png"}) out.artifacts.push_back(dir / f);
            csv << r << ',' << j << ',' << seed << ',' << fmt("%.9g", v) << '\n';
            values.push_back(v);
            out.reports.push_back({v, static_cast<std::size_t>(j), seed, std::move(mats)});
        }
    }
    out.summary = metrics::summarize_ois(values);
    write_text(out.dir / "ois.csv", csv.str());
    auto js = metrics::ois_summary_json(out.summary, c.seed);
    js["label"] = model_label(c);
    js["dataset"] = dataset_label(c);
    js["models"] = checkpoints.size();
    write_json(out.dir / "summary.json", js);
    write_text(out.dir / "ois_aggregate.csv", "dataset,label,n,ois_mean,ois_std\n" + dataset_label(c) + "," +
                                                  model_label(c) + "," + std::to_string(values.size()) + "," +
                                                  fmt("%.6f", out.summary.mean) + "," + fmt("%.6f", out.summary.stddev) +
                                                  "\n");
    out.artifacts.insert(out.artifacts.end(), {out.dir / "ois.csv", out.dir / "summary.json", out.dir / "ois_aggregate.csv"});
    return out;
}

// ---------------------------------------------------------------------------
// report

namespace detail {

inline std::vector<std::string> csv_rows(const std::string& text)
{
    std::vector<std::string> rows;
    std::stringstream ss(text);
    std::string line;
    while (std::getline(ss, line))
        if (!line.empty()) rows.push_back(line);
    return rows;
}

/// Markdown table from a CSV with a header row.
inline std::string csv_to_markdown(const std::string& text)
{
    const auto rows = csv_rows(text);
    if (rows.empty()) return "(empty)\n";
    std::ostringstream md;
    auto cells = [](const std::string& row) {
        std::vector<std::string> out;
        std::stringstream ss(row);
        std::string cell;
        while (std::getline(ss, cell, ',')) out.push_back(cell);
        return out;
    };
    const auto header = cells(rows[0]);
    md << '|';
    for (const auto& h : header) md << ' ' << h << " |";
    md << "\n|";
    for (std::size_t i = 0; i < header.size(); ++i) md << "---|";
    md << '\n';
    for (std::size_t r = 1; r < rows.size(); ++r) {
        md << '|';
        for (const auto& cell : cells(rows[r])) md << ' ' << cell << " |";
        md << '\n';
    }
    return md.str();
}

inline std::vector<fs::path> sorted_files(const fs::path& dir, const std::string& extension)
{
    std::vector<fs::path> out;
    if (!fs::is_directory(dir)) return out;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == extension) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

} // namespace detail

/// Writes <run>/report.md from the artifacts found in an analysis directory.
/// Missing pieces are listed, never fatal.
inline fs::path cmd_report(const fs::path& run)
{
    require(fs::is_directory(run), ErrorKind::io, "run directory not found: " + run.string());
    std::ostringstream md;
    auto rel = [&](const fs::path& p) { return p.lexically_relative(run).generic_string(); };
    auto missing = [&](const std::string& what) { md << "_missing: " << what << "_\n\n"; };

    md << "# cbmaudit report\n\n## Configuration\n\n";
    json links;
    if (fs::exists(run / "links.json")) links = read_json(run / "links.json");
    if (fs::exists(run / "config.json")) {
        const auto cfg = read_json(run / "config.json");
        md << "- seed: " << cfg.value("seed", 0ull) << '\n';
        if (links.is_object())
            md << "- model: " << links.value("label", std::string("?")) << "\n- dataset: "
               << links.value("dataset_label", std::string("?")) << '\n';
        md << "- run: " << run.filename().generic_string() << "\n\n";
    } else {
        missing("config.json");
    }

    md << "## Training\n\n";
    const fs::path models = links.is_object() ? run / links.value("models", std::string()) : fs::path();
    if (!models.empty() && fs::exists(models / "aggregate.csv")) {
        md << "Validation accuracy (%), mean and sample standard deviation over repeats.\n\n"
           << detail::csv_to_markdown(read_text(models / "aggregate.csv")) << '\n';
    } else {
        missing("training aggregate (run train)");
    }

    md << "## Relevance proportions\n\n";
    if (fs::exists(run / "eval" / "summary.json")) {
        const auto s = read_json(run / "eval" / "summary.json");
        md << "Reference region: " << s.value("mode", std::string("?")) << ", " << s.value("samples", 0)
           << " validation samples, " << s.value("repeats", 0) << " models.\n\n";
        md << "| method | mean positive proportion | mean negative proportion | concepts |\n|---|---|---|---|\n";
        for (const auto& [method, v] : s.at("methods").items())
            md << "| " << method << " | " << fmt("%.4f", v.at("pos_mean").get<double>()) << " | "
               << fmt("%.4f", v.at("neg_mean").get<double>()) << " | " << v.at("concepts").get<int>() << " |\n";
        md << '\n';
        for (const auto& png : detail::sorted_files(run / "eval", ".png"))
            md << "![" << png.stem().generic_string() << "](" << rel(png) << ")\n";
        md << "\nScatter axes: x = positive proportion, y = negative proportion, one point per concept.\n\n";
    } else {
        missing("eval/summary.json (run eval)");
    }

    md << "## Oracle impurity\n\n";
    if (fs::exists(run / "purity" / "summary.json")) {
        const auto s = read_json(run / "purity" / "summary.json");
        md << "| dataset | model | n | OIS mean | OIS std |\n|---|---|---|---|---|\n| " << s.value("dataset", std::string("?"))
           << " | " << s.value("label", std::string("?")) << " | " << s.at("ois").size() << " | "
           << fmt("%.4f", s.at("mean").get<double>()) << " | " << fmt("%.4f", s.at("std").get<double>()) << " |\n\n";
        if (fs::exists(run / "purity" / "ois.csv"))
            md << detail::csv_to_markdown(read_text(run / "purity" / "ois.csv")) << '\n';
        const fs::path first = run / "purity" / "model-0" / "probe-0";
        if (fs::exists(first / "mu.png") && fs::exists(first / "pi.png"))
            md << "Oracle matrix ![mu](" << rel(first / "mu.png") << ") purity matrix ![pi](" << rel(first / "pi.png")
               << ")\n\n";
    } else {
        missing("purity/summary.json (run purity)");
    }

    md << "## Attributions\n\n";
    const auto overlays = detail::sorted_files(run / "explain" / "overlays", ".png");
    const auto sheets = detail::sorted_files(run / "explain", ".png");
    if (overlays.empty()) {
        missing("overlays (run explain)");
    } else {
        for (const auto& s : sheets)
            if (s.parent_path() == run / "explain") md << "![" << s.stem().generic_string() << "](" << rel(s) << ")\n";
        md << "\n| overlay |\n|---|\n";
        for (const auto& o : overlays) md << "| [" << o.filename().generic_string() << "](" << rel(o) << ") |\n";
        md << '\n';
    }
    const fs::path path = run / "report.md";
    write_text(path, md.str());
    return path;
}

// ---------------------------------------------------------------------------

/// gen, train, explain, eval, purity and report in sequence.
struct PipelineResult {
    GenResult gen;
    TrainSummary train;
    ExplainResult explain;
    EvalResult eval;
    PurityResult purity;
    fs::path report;
};

inline PipelineResult run_pipeline(const ExperimentConfig& c, const TrainOptions& opt = {})
{
    PipelineResult p;
    p.gen = cmd_gen(c);
    p.train = cmd_train(c, opt);
    p.explain = cmd_explain(c);
    p.eval = cmd_eval(c);
    p.purity = cmd_purity(c);
    p.report = cmd_report(Layout(c).analysis());
    return p;
}

} // namespace cbmaudit::harness
