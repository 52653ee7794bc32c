// cbmaudit command-line front end: gen | train | explain | eval | purity | report.

#include "cbmaudit/harness/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <mutex>

namespace {

using namespace cbmaudit;
namespace fs = std::filesystem;

int exit_code(ErrorKind k)
{
    switch (k) {
    case ErrorKind::config:
    case ErrorKind::invalid_argument:
    case ErrorKind::shape_mismatch: return 2;
    case ErrorKind::io:
    case ErrorKind::corrupt: return 3;
    case ErrorKind::divergence: return 4;
    case ErrorKind::not_defined: return 5;
    }
    return 1;
}

std::string escaped(const std::string& s)
{
    std::string out;
    for (char c : s) {
        if (c == '"' || c == '\\') out += '\\';
        if (c == '\n') {
            out += "\\n";
            continue;
        }
        out += c;
    }
    return out;
}

int report_error(int code, const char* kind, const std::string& msg)
{
    std::cerr << "error: code=" << code << " kind=" << kind << " msg=\"" << escaped(msg) << "\"\n";
    return code;
}

struct Common {
    std::string config, out;
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> threads;
};

void add_common(CLI::App* app, Common& c)
{
    app->add_option("--config", c.config, "experiment config (JSON); defaults apply when omitted");
    app->add_option("--out", c.out, "output root (overrides CBMAUDIT_OUT and the config)");
    app->add_option("--seed", c.seed, "master seed (overrides the config)");
    app->add_option("--threads", c.threads, "worker threads (overrides CBMAUDIT_THREADS and the config)");
}

harness::ExperimentConfig resolve(const Common& c)
{
    harness::ExperimentConfig cfg;
    if (!c.config.empty()) cfg = harness::load_config(c.config);
    harness::Overrides o;
    if (!c.out.empty()) o.out = c.out;
    o.seed = c.seed;
    o.threads = c.threads;
    harness::apply_overrides(cfg, o);
    harness::validate(cfg);
    return cfg;
}

void finish(harness::RunRecord rec, const harness::Stopwatch& watch, const harness::ExperimentConfig& cfg,
            std::vector<fs::path> artifacts)
{
    rec.timings.emplace_back("total", watch.seconds());
    rec.artifacts = std::move(artifacts);
    const auto path = harness::write_record(rec, cfg.output);
    std::printf("record: %s\n", path.string().c_str());
}

int run(int argc, char** argv)
{
    CLI::App app{"Concept bottleneck model audit toolkit"};
    app.require_subcommand(1);
    Common common;

    auto* gen = app.add_subcommand("gen", "render the playing-card dataset");
    auto* train = app.add_subcommand("train", "train the configured models (one checkpoint per repeat)");
    auto* explain = app.add_subcommand("explain", "saliency overlays and raw maps for chosen samples");
    auto* eval = app.add_subcommand("eval", "relevance proportions inside card regions");
    auto* purity = app.add_subcommand("purity", "oracle and purity matrices and the impurity score");
    auto* report = app.add_subcommand("report", "markdown summary of an analysis directory");
    for (auto* s : {gen, train, explain, eval, purity, report}) add_common(s, common);

    bool force = false, quiet = false;
    train->add_flag("--force", force, "retrain even when checkpoints exist");
    train->add_flag("--quiet", quiet, "no per-epoch progress");

    std::string checkpoint, concepts;
    std::vector<std::string> samples;
    explain->add_option("--checkpoint", checkpoint, "checkpoint file (default: best repeat)");
    explain->add_option("--sample", samples, "sample id, repeatable (e.g. s001400)");
    explain->add_option("--concepts", concepts, "present | all | comma-separated concept indices");

    std::vector<std::string> checkpoints;
    eval->add_option("--checkpoint", checkpoints, "checkpoint files (default: every trained repeat)");
    purity->add_option("--checkpoint", checkpoints, "checkpoint files (default: every trained repeat)");

    std::string run_dir;
    report->add_option("run", run_dir, "analysis directory (default: the config's)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return report_error(2, "usage", e.what());
    }

    const auto cfg = resolve(common);
    const harness::Layout lay(cfg);
    harness::Stopwatch watch;
    auto paths = [](const std::vector<std::string>& v) { return std::vector<fs::path>(v.begin(), v.end()); };

    if (gen->parsed()) {
        auto rec = harness::start_record("gen", lay.dataset_hash);
        const auto r = harness::cmd_gen(cfg);
        std::printf("dataset: %s%s\n", r.dir.string().c_str(), r.reused ? " (reused)" : "");
        std::printf("samples: %d  k: %d\nclass histogram:\n", r.manifest.count, r.manifest.k());
        for (auto rank : scene::all_hand_ranks)
            std::printf("  %-14s %d\n", std::string(scene::hand_rank_name(rank)).c_str(), r.histogram[static_cast<int>(rank)]);
        std::printf("co-occurrence matrix: %s\n", (r.dir / "cooccurrence.csv").string().c_str());
        finish(rec, watch, cfg, r.artifacts);
    } else if (train->parsed()) {
        auto rec = harness::start_record("train", lay.model_hash);
        harness::TrainOptions opt;
        opt.force = force;
        std::mutex io;
        if (!quiet)
            opt.progress = [&](int repeat, const core::EpochMetrics& m) {
                std::lock_guard lock(io);
                std::fprintf(stderr, "repeat %d epoch %d %-10s concept_loss %.4f concept_acc %.4f task_acc %.4f lr %.3g\n",
                             repeat, m.epoch, m.split.c_str(), m.concept_loss, m.concept_acc, m.task_acc, m.lr);
            };
        const auto r = harness::cmd_train(cfg, opt);
        std::printf("models: %s\n", r.dir.string().c_str());
        for (const auto& rep : r.repeats) {
            std::printf("  repeat %d  concept_acc %.4f  task_acc %.4f%s\n", rep.repeat, rep.validation.concept_acc,
                        rep.validation.task_acc, rep.reused ? "  (reused)" : "");
            if (!rep.reused) rec.timings.emplace_back("repeat-" + std::to_string(rep.repeat), rep.seconds);
        }
        std::printf("%s: concept %.3f%% +- %.3f, task %.3f%% +- %.3f\n", r.label.c_str(), r.concept_acc.mean,
                    r.concept_acc.stddev, r.task_acc.mean, r.task_acc.stddev);
        finish(rec, watch, cfg, r.artifacts);
    } else if (explain->parsed()) {
        auto rec = harness::start_record("explain", lay.analysis_hash);
        harness::ExplainRequest req;
        if (!checkpoint.empty()) req.checkpoint = checkpoint;
        req.samples = samples;
        if (!concepts.empty()) req.concepts = concepts;
        const auto r = harness::cmd_explain(cfg, req);
        std::printf("checkpoint: %s\noverlays: %zu\ncontact sheets: %zu\nexplain: %s\n", r.checkpoint.string().c_str(),
                    r.overlays.size(), r.sheets.size(), r.dir.string().c_str());
        finish(rec, watch, cfg, r.artifacts);
    } else if (eval->parsed()) {
        auto rec = harness::start_record("eval", lay.analysis_hash);
        const auto r = harness::cmd_eval(cfg, paths(checkpoints));
        for (const auto& rep : r.reports) {
            const auto [pos, neg] = rep.concept_means();
            std::printf("%s: %zu concepts, mean positive proportion %.4f, mean negative proportion %.4f\n",
                        rep.method.c_str(), rep.rows.size(), pos, neg);
        }
        std::printf("eval: %s\n", r.dir.string().c_str());
        finish(rec, watch, cfg, r.artifacts);
    } else if (purity->parsed()) {
        auto rec = harness::start_record("purity", lay.analysis_hash);
        const auto r = harness::cmd_purity(cfg, paths(checkpoints));
        std::printf("OIS over %zu runs: mean %.4f std %.4f\npurity: %s\n", r.summary.values.size(), r.summary.mean,
                    r.summary.stddev, r.dir.string().c_str());
        finish(rec, watch, cfg, r.artifacts);
    } else if (report->parsed()) {
        const fs::path dir = run_dir.empty() ? lay.analysis() : fs::path(run_dir);
        const auto path = harness::cmd_report(dir);
        std::printf("report: %s\n", path.string().c_str());
    }
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    try {
        return run(argc, argv);
    } catch (const Error& e) {
        return report_error(exit_code(e.kind()), to_string(e.kind()), e.what());
    } catch (const std::filesystem::filesystem_error& e) {
        return report_error(3, "io", e.what());
    } catch (const std::exception& e) {
        return report_error(1, "internal", e.what());
    }
}
