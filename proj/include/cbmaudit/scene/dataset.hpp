#pragma once

// Dataset generation, the JSON manifest, and loading splits back into memory.

#include "cbmaudit/common/error.hpp"
#include "cbmaudit/common/seed.hpp"
#include "cbmaudit/scene/cards.hpp"
#include "cbmaudit/scene/image.hpp"
#include "cbmaudit/scene/render.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace cbmaudit::scene {

enum class Split : std::uint8_t { train, validation };

inline std::string_view split_name(Split s) { return s == Split::train ? "train" : "validation"; }

inline Split split_from_name(std::string_view name)
{
    if (name == "train") return Split::train;
    if (name == "validation") return Split::validation;
    fail(ErrorKind::corrupt, "unknown split tag: " + std::string(name));
}

struct DatasetConfig {
    ConceptScheme scheme = ConceptScheme::full52;
    SamplingRegime regime = SamplingRegime::poker_balanced;
    int count = 10000;
    double split_ratio = 0.7;
    int image_size = 96;
    std::uint64_t master_seed = 0;
    LayoutOptions layout{};
    unsigned threads = 1;
};

/// Per-sample annotation. concepts[i] is the card drawn under masks[i], left to right.
struct SampleRecord {
    std::string id;
    std::string image;
    std::array<std::string, 3> masks;
    std::array<int, 3> concepts{};
    std::vector<std::uint8_t> concept_bits;
    HandRank task = HandRank::high_card;
    Split split = Split::train;
    std::uint64_t seed = 0;

    friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

struct DatasetManifest {
    ConceptScheme scheme = ConceptScheme::full52;
    SamplingRegime regime = SamplingRegime::poker_balanced;
    int image_size = 96;
    int count = 0;
    double split_ratio = 0.7;
    std::uint64_t master_seed = 0;
    std::vector<SampleRecord> samples;

    int k() const { return concept_count(scheme); }

    friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

inline int train_count(int count, double ratio) { return static_cast<int>(std::lround(count * ratio)); }

/// Class of every sample for the balanced regimes: equal class counts (within one)
/// in a seeded order. Random-uniform datasets have no schedule.
inline std::vector<HandRank> class_schedule(const DatasetConfig& cfg)
{
    if (cfg.regime == SamplingRegime::random_uniform) return {};
    std::vector<HandRank> schedule(static_cast<std::size_t>(cfg.count));
    for (std::size_t i = 0; i < schedule.size(); ++i) schedule[i] = static_cast<HandRank>(i % hand_rank_count);
    Rng rng(stable_hash(cfg.master_seed, "class-schedule"));
    std::shuffle(schedule.begin(), schedule.end(), rng);
    return schedule;
}

inline std::string sample_id(int index)
{
    char buf[16];
    std::snprintf(buf, sizeof buf, "s%06d", index);
    return buf;
}

struct SynthesizedSample {
    SampleRecord record;
    SceneSpec spec;
    SceneRender render;
};

inline SynthesizedSample synthesize_sample(const DatasetConfig& cfg, int index, const std::vector<HandRank>& schedule)
{
    SynthesizedSample out;
    auto& rec = out.record;
    rec.seed = stable_hash(cfg.master_seed, static_cast<std::uint64_t>(index));
    rec.id = sample_id(index);
    rec.split = index < train_count(cfg.count, cfg.split_ratio) ? Split::train : Split::validation;
    rec.image = "images/" + rec.id + ".png";
    for (int c = 0; c < 3; ++c) rec.masks[static_cast<std::size_t>(c)] = "masks/" + rec.id + "_" + std::to_string(c) + ".png";

    Rng rng(rec.seed);
    HandDraw draw = schedule.empty()
                        ? sample_triplet(cfg.regime, cfg.scheme, rng)
                        : sample_triplet_of_rank(cfg.regime, schedule[static_cast<std::size_t>(index)], rng);
    // the table order is fixed; shuffle so that position carries no information
    std::shuffle(draw.cards.begin(), draw.cards.end(), rng);
    rec.task = draw.rank;
    rec.concept_bits = concept_vector(draw.cards, cfg.scheme);
    for (std::size_t c = 0; c < 3; ++c) rec.concepts[c] = *concept_index(draw.cards[c], cfg.scheme);

    out.spec = random_scene_spec(rng, cfg.image_size, rec.seed, cfg.layout);
    out.render = render_scene(out.spec, draw.cards);
    return out;
}

// ---------------------------------------------------------------------------
// Manifest JSON

inline nlohmann::json to_json(const SampleRecord& r)
{
    nlohmann::json j;
    j["id"] = r.id;
    j["image"] = r.image;
    j["masks"] = r.masks;
    j["concepts"] = r.concepts;
    j["concept_bits"] = r.concept_bits;
    j["task"] = hand_rank_name(r.task);
    j["split"] = split_name(r.split);
    j["seed"] = r.seed;
    return j;
}

inline nlohmann::json to_json(const DatasetManifest& m)
{
    nlohmann::json j;
    j["scheme"] = scheme_name(m.scheme);
    j["regime"] = regime_name(m.regime);
    j["image_size"] = m.image_size;
    j["count"] = m.count;
    j["split_ratio"] = m.split_ratio;
    j["master_seed"] = m.master_seed;
    j["k"] = m.k();
    std::vector<std::string> names;
    for (int i = 0; i < m.k(); ++i) names.push_back(card_name(concept_card(i, m.scheme)));
    j["concept_names"] = names;
    j["samples"] = nlohmann::json::array();
    for (const auto& s : m.samples) j["samples"].push_back(to_json(s));
    return j;
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j)
{
    try {
        DatasetManifest m;
        m.scheme = scheme_from_name(j.at("scheme").get<std::string>());
        m.regime = regime_from_name(j.at("regime").get<std::string>());
        m.image_size = j.at("image_size").get<int>();
        m.count = j.at("count").get<int>();
        m.split_ratio = j.at("split_ratio").get<double>();
        m.master_seed = j.at("master_seed").get<std::uint64_t>();
        for (const auto& s : j.at("samples")) {
            SampleRecord r;
            r.id = s.at("id").get<std::string>();
            r.image = s.at("image").get<std::string>();
            r.masks = s.at("masks").get<std::array<std::string, 3>>();
            r.concepts = s.at("concepts").get<std::array<int, 3>>();
            r.concept_bits = s.at("concept_bits").get<std::vector<std::uint8_t>>();
            r.task = hand_rank_from_name(s.at("task").get<std::string>());
            r.split = split_from_name(s.at("split").get<std::string>());
            r.seed = s.at("seed").get<std::uint64_t>();
            require(static_cast<int>(r.concept_bits.size()) == m.k(), ErrorKind::corrupt,
                    "concept_bits length mismatch in sample " + r.id);
            m.samples.push_back(std::move(r));
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::corrupt, std::string("malformed manifest: ") + e.what());
    } catch (const Error& e) {
        fail(ErrorKind::corrupt, std::string("malformed manifest: ") + e.what());
    }
}

inline void write_manifest(const DatasetManifest& m, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorKind::io, "cannot write manifest " + path.string());
    out << to_json(m).dump(1) << '\n';
    require(static_cast<bool>(out), ErrorKind::io, "short write on manifest " + path.string());
}

inline DatasetManifest read_manifest(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorKind::io, "cannot open manifest " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::corrupt, "manifest is not JSON: " + std::string(e.what()));
    }
    return manifest_from_json(j);
}

/// Generates every sample, writes images, masks and manifest.json under out_dir.
/// Output is independent of the thread count.
inline DatasetManifest generate_dataset(const DatasetConfig& cfg, const std::filesystem::path& out_dir)
{
    require(cfg.count >= 10, ErrorKind::invalid_argument, "dataset count must be at least 10");
    require(cfg.split_ratio > 0 && cfg.split_ratio < 1, ErrorKind::invalid_argument, "split ratio must lie in (0,1)");
    check_regime_scheme(cfg.regime, cfg.scheme);

    std::error_code ec;
    std::filesystem::create_directories(out_dir / "images", ec);
    std::filesystem::create_directories(out_dir / "masks", ec);
    require(!ec && std::filesystem::is_directory(out_dir / "masks"), ErrorKind::io,
            "cannot create output directory " + out_dir.string());

    DatasetManifest m;
    m.scheme = cfg.scheme;
    m.regime = cfg.regime;
    m.image_size = cfg.image_size;
    m.count = cfg.count;
    m.split_ratio = cfg.split_ratio;
    m.master_seed = cfg.master_seed;
    m.samples.resize(static_cast<std::size_t>(cfg.count));

    const auto schedule = class_schedule(cfg);
    const unsigned workers = std::max(1u, std::min(cfg.threads, static_cast<unsigned>(cfg.count)));
    std::exception_ptr first_error;
    std::mutex error_mutex;
    auto work = [&](unsigned w) {
        try {
            for (int i = static_cast<int>(w); i < cfg.count; i += static_cast<int>(workers)) {
                auto s = synthesize_sample(cfg, i, schedule);
                write_png(out_dir / s.record.image, s.render.image);
                for (std::size_t c = 0; c < 3; ++c) write_png(out_dir / s.record.masks[c], s.render.masks[c]);
                m.samples[static_cast<std::size_t>(i)] = std::move(s.record);
            }
        } catch (...) {
            std::lock_guard lock(error_mutex);
            if (!first_error) first_error = std::current_exception();
        }
    };
    if (workers == 1) {
        work(0);
    } else {
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work, w);
    }
    if (first_error) std::rethrow_exception(first_error);
    write_manifest(m, out_dir / "manifest.json");
    return m;
}

/// k x k symmetric co-occurrence counts with a zero diagonal.
inline std::vector<std::vector<int>> cooccurrence_matrix(const DatasetManifest& m)
{
    require(!m.samples.empty(), ErrorKind::invalid_argument, "empty manifest");
    const auto k = static_cast<std::size_t>(m.k());
    std::vector<std::vector<int>> counts(k, std::vector<int>(k, 0));
    for (const auto& s : m.samples) {
        std::vector<std::size_t> present;
        for (std::size_t i = 0; i < k; ++i)
            if (s.concept_bits[i]) present.push_back(i);
        for (auto a : present)
            for (auto b : present)
                if (a != b) ++counts[a][b];
    }
    return counts;
}

inline std::array<int, hand_rank_count> class_histogram(const DatasetManifest& m)
{
    std::array<int, hand_rank_count> h{};
    for (const auto& s : m.samples) ++h[static_cast<int>(s.task)];
    return h;
}

// ---------------------------------------------------------------------------
// In-memory splits

/// Images of one split, planar CHW uint8 per sample, with concept bits and labels.
struct LabeledImages {
    int channels = 3;
    int size = 0;
    int k = 0;
    std::vector<std::uint8_t> pixels;
    std::vector<std::uint8_t> concepts;
    std::vector<int> labels;
    std::vector<std::size_t> sample_index; ///< position in the manifest

    std::size_t count() const { return labels.size(); }
    std::size_t pixels_per_sample() const { return static_cast<std::size_t>(channels) * size * size; }
    const std::uint8_t* image(std::size_t i) const { return pixels.data() + i * pixels_per_sample(); }
    const std::uint8_t* concept_row(std::size_t i) const { return concepts.data() + i * static_cast<std::size_t>(k); }
};

inline void append_image(LabeledImages& out, const RgbImage& img)
{
    require(img.width == out.size && img.height == out.size, ErrorKind::shape_mismatch, "image size mismatch");
    const std::size_t plane = static_cast<std::size_t>(out.size) * out.size;
    const std::size_t base = out.pixels.size();
    out.pixels.resize(base + 3 * plane);
    for (std::size_t p = 0; p < plane; ++p)
        for (std::size_t c = 0; c < 3; ++c) out.pixels[base + c * plane + p] = img.pixels[p * 3 + c];
}

inline LabeledImages load_split(const DatasetManifest& m, const std::filesystem::path& dir, Split split)
{
    LabeledImages out;
    out.size = m.image_size;
    out.k = m.k();
    for (std::size_t i = 0; i < m.samples.size(); ++i) {
        const auto& s = m.samples[i];
        if (s.split != split) continue;
        append_image(out, read_png_rgb(dir / s.image));
        out.concepts.insert(out.concepts.end(), s.concept_bits.begin(), s.concept_bits.end());
        out.labels.push_back(static_cast<int>(s.task));
        out.sample_index.push_back(i);
    }
    return out;
}

} // namespace cbmaudit::scene
