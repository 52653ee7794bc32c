#pragma once

// Share of relevance that falls on a concept's own card.

#include "cbmaudit/common/error.hpp"
#include "cbmaudit/scene/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

namespace cbmaudit::metrics {

enum class ReferenceMode { union_of_concept_regions, whole_image };
enum class RelevanceSign { positive, negative };

inline std::string reference_mode_name(ReferenceMode m)
{
    return m == ReferenceMode::union_of_concept_regions ? "union" : "whole_image";
}

inline ReferenceMode reference_mode_from_name(const std::string& s)
{
    if (s == "union") return ReferenceMode::union_of_concept_regions;
    if (s == "whole_image") return ReferenceMode::whole_image;
    fail(ErrorKind::config, "unknown proportion mode: " + s);
}

/// Sign-matched relevance magnitude inside `target` divided by the same sum over
/// the union of `masks` (or the whole image). 0/0 gives 0.
inline double relevance_proportion(std::span<const double> relevance, const scene::Mask& target,
                                   std::span<const scene::Mask> masks, ReferenceMode mode, RelevanceSign sign)
{
    require(relevance.size() == target.bits.size(), ErrorKind::shape_mismatch, "relevance and mask sizes differ");
    require(!target.empty(), ErrorKind::invalid_argument, "empty target mask");
    for (const auto& m : masks)
        require(m.bits.size() == relevance.size(), ErrorKind::shape_mismatch, "mask set sizes differ");
    double num = 0, den = 0;
    for (std::size_t p = 0; p < relevance.size(); ++p) {
        const double r = relevance[p];
        const double v = sign == RelevanceSign::positive ? (r > 0 ? r : 0.0) : (r < 0 ? -r : 0.0);
        if (v == 0) continue;
        if (target.bits[p]) num += v;
        bool in_ref = mode == ReferenceMode::whole_image;
        for (std::size_t m = 0; !in_ref && m < masks.size(); ++m) in_ref = masks[m].bits[p] != 0;
        if (in_ref) den += v;
    }
    return den > 0 ? num / den : 0.0;
}

struct ProportionRow {
    int concept_index = 0;
    std::size_t n = 0;
    double positive = 0;
    double negative = 0;
};

/// Per-concept mean proportions for one attribution method.
struct ProportionReport {
    ReferenceMode mode = ReferenceMode::union_of_concept_regions;
    std::string method;
    std::vector<ProportionRow> rows;

    void add(int concept_index, double positive, double negative)
    {
        auto it = std::find_if(rows.begin(), rows.end(), [&](const auto& r) { return r.concept_index == concept_index; });
        if (it == rows.end()) {
            rows.push_back({concept_index, 0, 0, 0});
            it = rows.end() - 1;
        }
        // running means
        ++it->n;
        it->positive += (positive - it->positive) / static_cast<double>(it->n);
        it->negative += (negative - it->negative) / static_cast<double>(it->n);
    }

    void sort() { std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.concept_index < b.concept_index; }); }

    /// Mean over concepts of the per-concept means.
    std::pair<double, double> concept_means() const
    {
        double p = 0, n = 0;
        for (const auto& r : rows) {
            p += r.positive;
            n += r.negative;
        }
        const double c = rows.empty() ? 1.0 : static_cast<double>(rows.size());
        return {p / c, n / c};
    }
};

inline void write_proportion_csv(const ProportionReport& report, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorKind::io, "cannot write " + path.string());
    out << "concept,n,pos_proportion,neg_proportion,mode,method\n";
    char buf[128];
    for (const auto& r : report.rows) {
        std::snprintf(buf, sizeof buf, "%d,%zu,%.9g,%.9g,", r.concept_index, r.n, r.positive, r.negative);
        out << buf << reference_mode_name(report.mode) << ',' << report.method << '\n';
    }
}

} // namespace cbmaudit::metrics
