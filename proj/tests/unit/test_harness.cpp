#include "cbmaudit/harness/pipeline.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

using namespace cbmaudit;
using namespace cbmaudit::harness;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name)
{
    auto p = fs::temp_directory_path() / ("cbmaudit_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

ExperimentConfig tiny_config(const fs::path& out)
{
    auto c = config_from_json(json::parse(R"({
      "name": "tiny", "seed": 3,
      "dataset": { "count": 24, "image_size": 32 },
      "model": { "blocks": [ {"channels": 4}, {"channels": 4} ], "predictor_hidden": 8 },
      "training": { "repeats": 2, "encoder_stage": {"optimizer": "adam", "learning_rate": 0.003, "epochs": 1},
                    "predictor_stage": {"epochs": 1}, "augment": {"enabled": false} },
      "attribution": { "ig_steps": 4, "noise_tunnel": {"samples": 1, "stddev": 0.0} },
      "metrics": { "max_samples": 3, "ois_repeats": 1, "probe": {"epochs": 5} }
    })"));
    c.output = out.string();
    return c;
}

/// Every file under `root` (relative path) with its content, records excluded.
std::map<std::string, std::string> snapshot(const fs::path& root)
{
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (!e.is_regular_file()) continue;
        const auto rel = e.path().lexically_relative(root).generic_string();
        if (rel.rfind("records/", 0) == 0) continue;
        out[rel] = slurp(e.path());
    }
    return out;
}

struct CliResult {
    int code;
    std::string err;
};

CliResult run_cli(const std::string& args, const fs::path& dir)
{
    const auto err = dir / "stderr.txt";
    const std::string cmd = std::string("\"") + CBMAUDIT_CLI + "\" " + args + " > /dev/null 2> \"" + err.string() + "\"";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(err)};
}

} // namespace

TEST(Config, DefaultsRoundTripThroughJson)
{
    const ExperimentConfig c;
    EXPECT_EQ(c.dataset.count, 2000);
    EXPECT_EQ(c.concepts(), 52u);
    EXPECT_EQ(c.training.train.method, core::TrainMethod::independent);
    const auto back = config_from_json(to_json(c));
    EXPECT_EQ(to_json(back), to_json(c));
    EXPECT_NO_THROW(validate(c));
}

TEST(Config, UnknownKeysAreRejected)
{
    for (const char* text : {R"({"nmae": "x"})", R"({"dataset": {"cout": 5}})", R"({"training": {"encoder_stage": {"lr": 1}}})",
                             R"({"metrics": {"probe": {"layers": 2}}})"}) {
        try {
            config_from_json(json::parse(text));
            FAIL() << text;
        } catch (const Error& e) {
            EXPECT_EQ(e.kind(), ErrorKind::config) << text;
        }
    }
    EXPECT_NO_THROW(config_from_json(json::parse(R"({"$schema": "configs/schema.json"})")));
}

TEST(Config, ValidationCatchesInconsistentSettings)
{
    auto bad = [](const char* text) {
        auto c = config_from_json(json::parse(text));
        EXPECT_THROW(validate(c), Error) << text;
    };
    bad(R"({"dataset": {"regime": "class_level_table", "scheme": "full52"}})");
    bad(R"({"model": {"concepts": 11}})");
    bad(R"({"training": {"lambda": 1.5}})");
    bad(R"({"attribution": {"methods": ["deeplift"]}})");
    EXPECT_THROW(config_from_json(json::parse(R"({"training": {"method": "greedy"}})")), Error);
    auto ok = config_from_json(json::parse(R"({"dataset": {"regime": "class_level_table", "scheme": "class_level11"}})"));
    EXPECT_NO_THROW(validate(ok));
    EXPECT_EQ(ok.concepts(), 11u);
}

TEST(Config, HashesSeparateStages)
{
    const ExperimentConfig base;
    auto other_probe = base;
    other_probe.metrics.probe.epochs = 10;
    auto other_train = base;
    other_train.training.train.lambda = 0.25;
    auto other_threads = base;
    other_threads.threads = 8;
    other_threads.output = "elsewhere";
    const Layout a(base), b(other_probe), c(other_train), d(other_threads);
    EXPECT_EQ(a.dataset_hash, b.dataset_hash);
    EXPECT_EQ(a.model_hash, b.model_hash);
    EXPECT_NE(a.analysis_hash, b.analysis_hash);
    EXPECT_EQ(a.dataset_hash, c.dataset_hash);
    EXPECT_NE(a.model_hash, c.model_hash);
    EXPECT_EQ(a.analysis_hash, d.analysis_hash);
    EXPECT_EQ(a.dataset_hash.size(), 16u);
}

TEST(Config, LabelsAndSeeds)
{
    ExperimentConfig c;
    EXPECT_EQ(model_label(c), "CBM-independent");
    c.training.train.method = core::TrainMethod::joint;
    c.training.train.lambda = 0.0;
    EXPECT_EQ(model_label(c), "standard-NN");
    c.training.train.lambda = 0.5;
    EXPECT_EQ(model_label(c), "CBM-joint");
    EXPECT_NE(repeat_seed(c, 0), repeat_seed(c, 1));
    EXPECT_NE(probe_seed(c, 0, 1), probe_seed(c, 1, 0));
    c.dataset.regime = scene::SamplingRegime::random_uniform;
    EXPECT_EQ(dataset_label(c), "random cards");
}

TEST(Config, OverridePrecedence)
{
    ExperimentConfig c;
    c.output = "from-file";
    ::setenv("CBMAUDIT_OUT", "from-env", 1);
    ::setenv("CBMAUDIT_THREADS", "3", 1);
    apply_overrides(c, {});
    EXPECT_EQ(c.output, "from-env");
    EXPECT_EQ(c.threads, 3u);
    apply_overrides(c, Overrides{std::string("from-flag"), 9, 2});
    EXPECT_EQ(c.output, "from-flag");
    EXPECT_EQ(c.seed, 9u);
    EXPECT_EQ(c.threads, 2u);
    ::setenv("CBMAUDIT_THREADS", "zero", 1);
    EXPECT_THROW(apply_overrides(c, {}), Error);
    ::unsetenv("CBMAUDIT_OUT");
    ::unsetenv("CBMAUDIT_THREADS");
}

TEST(Config, ShippedConfigsLoad)
{
    const fs::path dir = CBMAUDIT_CONFIG_DIR;
    int n = 0;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.path().extension() != ".json" || e.path().filename() == "schema.json") continue;
        EXPECT_NO_THROW(load_config(e.path())) << e.path();
        ++n;
    }
    EXPECT_GE(n, 4);
}

TEST(Report, EmptyDirectoryListsMissingPieces)
{
    const auto dir = fresh_dir("report_empty");
    const auto path = cmd_report(dir);
    const auto text = slurp(path);
    EXPECT_NE(text.find("_missing: config.json_"), std::string::npos);
    EXPECT_NE(text.find("_missing: purity/summary.json"), std::string::npos);
    try {
        cmd_report(dir / "nope");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::io);
    }
}

TEST(Pipeline, MissingDatasetIsAConfigError)
{
    const auto c = tiny_config(fresh_dir("no_dataset"));
    try {
        cmd_train(c);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::config);
    }
}

TEST(Pipeline, TinyRunIsReproducibleAndReusesWork)
{
    const auto a = fresh_dir("pipe_a"), b = fresh_dir("pipe_b");
    auto ca = tiny_config(a), cb = tiny_config(b);
    cb.threads = 2;
    const auto ra = run_pipeline(ca);
    run_pipeline(cb);
    const auto sa = snapshot(a), sb = snapshot(b);
    EXPECT_EQ(sa.size(), sb.size());
    for (const auto& [k, v] : sa) {
        auto it = sb.find(k);
        ASSERT_NE(it, sb.end()) << k;
        EXPECT_TRUE(it->second == v) << k;
    }
    const Layout lay(ca);
    EXPECT_TRUE(fs::exists(lay.checkpoint(0)));
    EXPECT_TRUE(fs::exists(lay.checkpoint(1)));
    EXPECT_TRUE(fs::exists(lay.models() / "aggregate.csv"));
    EXPECT_TRUE(fs::exists(lay.analysis() / "purity" / "ois.csv"));
    EXPECT_TRUE(fs::exists(lay.analysis() / "report.md"));
    EXPECT_FALSE(ra.explain.overlays.empty());

    // a second run reuses the dataset and the checkpoints
    const auto again = cmd_train(ca);
    for (const auto& r : again.repeats) EXPECT_TRUE(r.reused);
    EXPECT_TRUE(cmd_gen(ca).reused);

    // the report is a pure function of the artifacts
    const auto before = slurp(lay.analysis() / "report.md");
    cmd_report(lay.analysis());
    EXPECT_EQ(slurp(lay.analysis() / "report.md"), before);
}

TEST(Pipeline, UnknownSampleIdIsRejected)
{
    auto c = tiny_config(fresh_dir("bad_sample"));
    c.training.repeats = 1;
    cmd_gen(c);
    cmd_train(c);
    ExplainRequest req;
    req.samples = {"s999999"};
    EXPECT_THROW(cmd_explain(c, req), Error);
}

TEST(Records, NeverOverwrite)
{
    const auto dir = fresh_dir("records");
    const auto r = start_record("gen", "abc");
    const auto p1 = write_record(r, dir), p2 = write_record(r, dir);
    EXPECT_NE(p1, p2);
    const auto j = read_json(p1);
    EXPECT_EQ(j.at("command"), "gen");
    EXPECT_TRUE(j.contains("source_version"));
}

TEST(Cli, ExitCodesAndErrorLines)
{
    const auto dir = fresh_dir("cli");
    auto r = run_cli("frobnicate", dir);
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("error: code=2 kind=usage"), std::string::npos) << r.err;

    std::ofstream(dir / "bad.json") << R"({"unknown_key": 1})";
    r = run_cli("gen --config \"" + (dir / "bad.json").string() + "\"", dir);
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("kind=config"), std::string::npos) << r.err;

    r = run_cli("train --out \"" + (dir / "empty").string() + "\"", dir);
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("run gen first"), std::string::npos) << r.err;

    r = run_cli("report \"" + (dir / "does-not-exist").string() + "\"", dir);
    EXPECT_EQ(r.code, 3);
    EXPECT_NE(r.err.find("error: code=3 kind=io"), std::string::npos) << r.err;

    r = run_cli("eval --out \"" + (dir / "empty").string() + "\" --threads 0", dir);
    EXPECT_EQ(r.code, 2);
}

TEST(Cli, HelpExitsCleanly)
{
    const auto dir = fresh_dir("cli_help");
    EXPECT_EQ(run_cli("--help", dir).code, 0);
    EXPECT_EQ(run_cli("train --help", dir).code, 0);
}
