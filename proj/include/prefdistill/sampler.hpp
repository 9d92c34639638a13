// Copyright (c) 2026 prefdistill contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "prefdistill/embedding.hpp"
#include "prefdistill/errors.hpp"
#include "prefdistill/rng.hpp"

namespace prefdistill {

inline constexpr double kDegenerateRange = 1e-9;

struct SamplerConfig {
    enum class Mode { Mirrored, LiteralSorted };
    enum class Policy { PreferenceAligned, Uniform };

    // Cut points as fractions of the way from the lowest score a to the
    // highest score b. Mirrored reads them directly (default 70/90/95%,
    // so the top bin is the narrow high-relevance slice that gets two
    // draws); literal-sorted reads the coefficients the other way round
    // and sorts, giving cuts at 5/10/30% of the range.
    std::array<double, 3> cuts{0.7, 0.9, 0.95};
    Mode mode = Mode::Mirrored;
    std::array<int, 4> plan{1, 1, 1, 2};  // draws per bin, lowest to highest
    int group_size = 5;
    int groups_per_step = 1000;
    int groups_per_persona = 0;  // 0: resample the persona for every group
    Policy policy = Policy::PreferenceAligned;

    std::array<double, 3> effective_fractions() const {
        std::array<double, 3> f = cuts;
        if (mode == Mode::LiteralSorted)
            for (auto& x : f) x = 1.0 - x;
        std::sort(f.begin(), f.end());
        return f;
    }

    void validate() const {
        const auto f = effective_fractions();
        if (!(f[0] > 0.0 && f[2] < 1.0 && f[0] < f[1] && f[1] < f[2]))
            throw ConfigError("sampler.cuts must be three distinct fractions in (0,1)");
        int total = 0;
        for (int c : plan) {
            if (c < 0) throw ConfigError("sampler.plan counts must be >= 0");
            total += c;
        }
        if (total != group_size)
            throw ConfigError("sampler.plan must sum to group_size");
        if (group_size < 2) throw ConfigError("sampler.group_size must be >= 2");
        if (groups_per_step < 1) throw ConfigError("sampler.groups_per_step must be >= 1");
        if (groups_per_persona < 0)
            throw ConfigError("sampler.groups_per_persona must be >= 0");
    }
};

// Per-persona partition of the catalog into four contiguous score bins
// I_1 (lowest) .. I_4 (highest). Bins hold catalog row indices in
// canonical order. A degenerate score range (all scores equal) puts the
// whole catalog in the top bin, so sampling falls back to uniform.
struct BinPartition {
    std::string persona_id;
    bool degenerate = false;
    double lo = 0.0, hi = 0.0;
    std::array<double, 3> cut_points{};
    std::array<std::vector<std::uint32_t>, 4> bins;

    std::size_t total() const {
        std::size_t n = 0;
        for (const auto& b : bins) n += b.size();
        return n;
    }

    // Bin index for a score: half-open below, closed top bin.
    int bin_of(double s) const {
        if (degenerate) return 3;
        if (s < cut_points[0]) return 0;
        if (s < cut_points[1]) return 1;
        if (s < cut_points[2]) return 2;
        return 3;
    }
};

inline BinPartition compute_bins(const ScoreVector& scores, const SamplerConfig& cfg) {
    if (scores.scores.empty()) throw EmptyCatalog("compute_bins");
    BinPartition part;
    part.persona_id = scores.persona_id;
    const auto [lo_it, hi_it] =
        std::minmax_element(scores.scores.begin(), scores.scores.end());
    part.lo = *lo_it;
    part.hi = *hi_it;

    if (part.hi - part.lo < kDegenerateRange) {
        part.degenerate = true;
        part.cut_points = {part.lo, part.lo, part.lo};
        auto& top = part.bins[3];
        top.resize(scores.scores.size());
        for (std::uint32_t i = 0; i < top.size(); ++i) top[i] = i;
        return part;
    }

    const auto f = cfg.effective_fractions();
    const double range = part.hi - part.lo;
    for (int k = 0; k < 3; ++k) part.cut_points[k] = part.lo + f[k] * range;

    for (std::uint32_t i = 0; i < scores.scores.size(); ++i)
        part.bins[static_cast<std::size_t>(part.bin_of(scores.scores[i]))].push_back(i);
    return part;
}

namespace detail {

// Per-bin draw targets: the plan where possible, deficits spilled to the
// nearest non-empty bin, preferring the higher-relevance neighbor.
inline std::array<int, 4> resolve_draws(const BinPartition& part,
                                        const SamplerConfig& cfg) {
    std::array<int, 4> avail{};
    for (int k = 0; k < 4; ++k)
        avail[k] = static_cast<int>(part.bins[static_cast<std::size_t>(k)].size());

    std::array<int, 4> take{};
    std::array<int, 4> deficit{};
    for (int k = 0; k < 4; ++k) {
        take[k] = std::min(cfg.plan[static_cast<std::size_t>(k)], avail[k]);
        deficit[k] = cfg.plan[static_cast<std::size_t>(k)] - take[k];
    }
    for (int k = 0; k < 4; ++k) {
        while (deficit[k] > 0) {
            int target = -1;
            for (int d = 1; d < 4 && target < 0; ++d) {
                if (k + d < 4 && avail[k + d] - take[k + d] > 0)
                    target = k + d;
                else if (k - d >= 0 && avail[k - d] - take[k - d] > 0)
                    target = k - d;
            }
            if (target < 0) throw CatalogTooSmall("cannot fill group from bins");
            const int room = avail[target] - take[target];
            const int moved = std::min(room, deficit[k]);
            take[target] += moved;
            deficit[k] -= moved;
        }
    }
    return take;
}

// take[k] distinct draws from a bin without replacement (partial
// Fisher-Yates over a scratch copy).
inline void draw_from_bin(const std::vector<std::uint32_t>& bin, int count, Rng& rng,
                          std::vector<std::uint32_t>& out) {
    std::vector<std::uint32_t> scratch = bin;
    for (int t = 0; t < count; ++t) {
        const std::size_t j =
            static_cast<std::size_t>(t) +
            static_cast<std::size_t>(rng.bounded(scratch.size() - static_cast<std::size_t>(t)));
        std::swap(scratch[static_cast<std::size_t>(t)], scratch[j]);
        out.push_back(scratch[static_cast<std::size_t>(t)]);
    }
}

}  // namespace detail

// One candidate group drawn according to the plan. Returns catalog row
// indices; bins are disjoint, so draws are distinct by construction.
inline std::vector<std::uint32_t> sample_group(const BinPartition& part,
                                               const SamplerConfig& cfg, Rng& rng) {
    if (part.total() < static_cast<std::size_t>(cfg.group_size))
        throw CatalogTooSmall(std::to_string(part.total()) + " images for group of " +
                              std::to_string(cfg.group_size));
    const auto take = detail::resolve_draws(part, cfg);
    std::vector<std::uint32_t> rows;
    rows.reserve(static_cast<std::size_t>(cfg.group_size));
    for (int k = 0; k < 4; ++k)
        detail::draw_from_bin(part.bins[static_cast<std::size_t>(k)], take[k], rng, rows);
    return rows;
}

// Uniform ablation: group_size distinct rows from the whole catalog.
inline std::vector<std::uint32_t> sample_group_uniform(std::size_t catalog_size,
                                                       const SamplerConfig& cfg, Rng& rng) {
    if (catalog_size < static_cast<std::size_t>(cfg.group_size))
        throw CatalogTooSmall(std::to_string(catalog_size) + " images for group of " +
                              std::to_string(cfg.group_size));
    std::vector<std::uint32_t> scratch(catalog_size);
    for (std::uint32_t i = 0; i < catalog_size; ++i) scratch[i] = i;
    std::vector<std::uint32_t> rows;
    detail::draw_from_bin(scratch, cfg.group_size, rng, rows);
    return rows;
}

struct GroupDraw {
    std::string persona_id;
    std::vector<std::string> candidate_ids;
};

// One sampling step: `groups` persona/candidate pairs. Personas are drawn
// uniformly with replacement from the pool; each distinct persona gets
// one partition snapshot per step, computed from the current student
// scores.
inline std::vector<GroupDraw> sample_step(const PersonaSet& pool,
                                          const CatalogStore& store,
                                          const SamplerConfig& cfg, Rng& rng,
                                          int groups = -1) {
    if (pool.empty()) throw Error("sample_step: empty persona pool");
    if (groups < 0) groups = cfg.groups_per_step;

    std::unordered_map<std::string, BinPartition> partitions;
    const auto partition_for = [&](const PersonaRecord& persona) -> const BinPartition& {
        auto it = partitions.find(persona.id);
        if (it == partitions.end())
            it = partitions.emplace(persona.id, compute_bins(store.score_all(persona), cfg))
                     .first;
        return it->second;
    };

    std::vector<GroupDraw> out;
    out.reserve(static_cast<std::size_t>(groups));
    int emitted = 0;
    while (emitted < groups) {
        const PersonaRecord& persona = pool.at(rng.bounded(pool.size()));
        const int burst = cfg.groups_per_persona > 0
                              ? std::min(cfg.groups_per_persona, groups - emitted)
                              : 1;
        for (int b = 0; b < burst; ++b) {
            std::vector<std::uint32_t> rows;
            if (cfg.policy == SamplerConfig::Policy::Uniform) {
                rows = sample_group_uniform(store.size(), cfg, rng);
            } else {
                rows = sample_group(partition_for(persona), cfg, rng);
            }
            GroupDraw draw;
            draw.persona_id = persona.id;
            draw.candidate_ids.reserve(rows.size());
            for (const auto r : rows) draw.candidate_ids.push_back(store.id(r));
            out.push_back(std::move(draw));
            ++emitted;
        }
    }
    return out;
}

}  // namespace prefdistill
