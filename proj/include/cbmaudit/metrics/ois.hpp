#pragma once

// Oracle (ground truth) and purity (predicted) predictability matrices and the
// impurity score comparing them.

#include "cbmaudit/common/error.hpp"
#include "cbmaudit/common/seed.hpp"
#include "cbmaudit/metrics/accuracy.hpp"
#include "cbmaudit/metrics/probe.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <thread>
#include <vector>

namespace cbmaudit::metrics {

/// k x k AUC grid; entry (i, j) is concept i's representation predicting concept j.
struct AucMatrix {
    std::size_t k = 0;
    std::vector<std::optional<double>> cells;

    AucMatrix() = default;
    explicit AucMatrix(std::size_t k_)
        : k(k_)
        , cells(k_ * k_)
    {
    }
    std::optional<double>& at(std::size_t i, std::size_t j) { return cells[i * k + j]; }
    const std::optional<double>& at(std::size_t i, std::size_t j) const { return cells[i * k + j]; }
};

struct MatrixPair {
    AucMatrix oracle; ///< mu
    AucMatrix purity; ///< pi
};

/// Rows of `values` (n x k) in index order `rows`, column `col`.
template <typename V>
std::vector<double> column(std::span<const V> values, std::size_t k, std::size_t col, std::span<const std::size_t> rows)
{
    std::vector<double> out(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) out[r] = static_cast<double>(values[rows[r] * k + col]);
    return out;
}

/// Probes every (i, j) pair: a probe on concept i's scalar representation
/// predicts concept j, trained on one part of the samples and scored by AUC on
/// the rest. Returns nullopt for pairs whose target holds one class in either part.
template <typename V>
AucMatrix predictability_matrix(std::span<const V> sources, std::span<const std::uint8_t> truth, std::size_t k,
                                std::uint64_t seed, const ProbeConfig& cfg = {}, unsigned threads = 1)
{
    require(k > 0 && truth.size() % k == 0 && sources.size() == truth.size(), ErrorKind::shape_mismatch,
            "sources and ground truth must both be n x k");
    const std::size_t n = truth.size() / k;
    require(n >= 4, ErrorKind::invalid_argument, "too few samples for probing");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(stable_hash(seed, "probe-split"));
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::lround(cfg.train_fraction * static_cast<double>(n)));
    require(n_train > 0 && n_train < n, ErrorKind::invalid_argument, "probe split leaves an empty part");
    const std::span<const std::size_t> train(order.data(), n_train), test(order.data() + n_train, n - n_train);

    std::vector<std::vector<std::uint8_t>> y_train(k), y_test(k);
    for (std::size_t j = 0; j < k; ++j)
        for (auto part : {0, 1}) {
            auto rows = part == 0 ? train : test;
            auto& dst = part == 0 ? y_train[j] : y_test[j];
            for (auto r : rows) dst.push_back(truth[r * k + j]);
        }

    AucMatrix m(k);
    auto work = [&](std::size_t first, std::size_t stride) {
        for (std::size_t i = first; i < k; i += stride) {
            const auto x_train = column(sources, k, i, train);
            const auto x_test = column(sources, k, i, test);
            for (std::size_t j = 0; j < k; ++j) {
                if (!has_both_classes(y_test[j])) continue;
                auto probe = train_probe(1, x_train, y_train[j], stable_hash(seed, "probe", i * k + j), cfg);
                if (!probe) continue;
                std::vector<double> scores(x_test.size());
                for (std::size_t r = 0; r < x_test.size(); ++r) scores[r] = probe->logit(&x_test[r]);
                m.at(i, j) = roc_auc(scores, y_test[j]);
            }
        }
    };
    threads = std::max(1u, threads);
    if (threads == 1) {
        work(0, 1);
    } else {
        std::vector<std::jthread> pool;
        for (unsigned t = 0; t < threads; ++t) pool.emplace_back(work, t, threads);
    }
    return m;
}

/// mu from the ground-truth bits, pi from predicted probabilities, same split and seeds.
inline MatrixPair build_matrices(std::span<const std::uint8_t> truth, std::span<const float> predicted, std::size_t k,
                                 std::uint64_t seed, const ProbeConfig& cfg = {}, unsigned threads = 1)
{
    return {predictability_matrix<std::uint8_t>(truth, truth, k, seed, cfg, threads),
            predictability_matrix<float>(predicted, truth, k, seed, cfg, threads)};
}

/// ||pi - mu||_F over off-diagonal entries defined in both, divided by the
/// norm of the largest possible divergence, max(mu, 1 - mu), over the same entries.
inline double ois(const AucMatrix& purity, const AucMatrix& oracle)
{
    require(purity.k == oracle.k, ErrorKind::shape_mismatch, "purity and oracle matrices differ in size");
    double num = 0, den = 0;
    std::size_t used = 0;
    for (std::size_t i = 0; i < oracle.k; ++i)
        for (std::size_t j = 0; j < oracle.k; ++j) {
            if (i == j || !oracle.at(i, j) || !purity.at(i, j)) continue;
            const double mu = *oracle.at(i, j), pi = *purity.at(i, j);
            num += (pi - mu) * (pi - mu);
            const double far = std::max(mu, 1.0 - mu);
            den += far * far;
            ++used;
        }
    require(used > 0, ErrorKind::not_defined, "no defined off-diagonal entries for the impurity score");
    return std::sqrt(num) / std::sqrt(den);
}

struct OisReport {
    double value = 0;
    std::size_t repeat = 0;
    std::uint64_t seed = 0;
    MatrixPair matrices;
};

struct OisSummary {
    std::vector<double> values;
    double mean = 0;
    double stddev = 0; ///< sample standard deviation, 0 for a single value
};

inline OisSummary summarize_ois(std::vector<double> values)
{
    OisSummary s;
    s.values = std::move(values);
    if (s.values.empty()) return s;
    s.mean = std::accumulate(s.values.begin(), s.values.end(), 0.0) / static_cast<double>(s.values.size());
    if (s.values.size() > 1) {
        double ss = 0;
        for (double v : s.values) ss += (v - s.mean) * (v - s.mean);
        s.stddev = std::sqrt(ss / static_cast<double>(s.values.size() - 1));
    }
    return s;
}

/// `repeats` probe-seed runs on one model's predictions.
inline std::vector<OisReport> ois_repeats(std::span<const std::uint8_t> truth, std::span<const float> predicted,
                                          std::size_t k, std::size_t repeats, std::uint64_t seed,
                                          const ProbeConfig& cfg = {}, unsigned threads = 1)
{
    std::vector<OisReport> out;
    for (std::size_t r = 0; r < repeats; ++r) {
        const auto s = stable_hash(seed, "ois-repeat", r);
        auto mats = build_matrices(truth, predicted, k, s, cfg, threads);
        const double v = ois(mats.purity, mats.oracle);
        out.push_back({v, r, s, std::move(mats)});
    }
    return out;
}

/// k x k grid under a header row c0..c{k-1}; row i is source concept i, "NA" marks undefined cells.
inline void write_matrix_csv(const AucMatrix& m, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorKind::io, "cannot write " + path.string());
    char buf[32];
    for (std::size_t j = 0; j < m.k; ++j) out << (j ? ",c" : "c") << j;
    out << '\n';
    for (std::size_t i = 0; i < m.k; ++i) {
        for (std::size_t j = 0; j < m.k; ++j) {
            if (j) out << ',';
            if (m.at(i, j)) {
                std::snprintf(buf, sizeof buf, "%.6f", *m.at(i, j));
                out << buf;
            } else {
                out << "NA";
            }
        }
        out << '\n';
    }
}

inline nlohmann::json ois_summary_json(const OisSummary& s, std::uint64_t seed)
{
    return {{"ois", s.values}, {"mean", s.mean}, {"std", s.stddev}, {"repeats", s.values.size()}, {"seed", seed}};
}

} // namespace cbmaudit::metrics
