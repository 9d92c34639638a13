// Copyright (c) 2026 prefdistill contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "prefdistill/embedding.hpp"
#include "prefdistill/errors.hpp"
#include "prefdistill/io.hpp"
#include "prefdistill/tournament.hpp"

namespace prefdistill {

struct RetrievalResult {
    std::string persona_id;
    std::vector<std::string> ids;     // descending score
    std::vector<double> scores;       // aligned with ids
};

// Exact brute-force top-k: the k best-scored ids, ties broken by
// ascending id, identical to the prefix of a full sort.
inline RetrievalResult top_k(const ScoreVector& scores, const CatalogStore& store,
                             std::size_t k) {
    const std::size_t n = scores.scores.size();
    if (n != store.size()) throw ShapeMismatch("score vector vs catalog size");
    if (k < 1 || k > n)
        throw KOutOfRange("k=" + std::to_string(k) + " for catalog of " +
                          std::to_string(n));
    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    const auto better = [&](std::uint32_t a, std::uint32_t b) {
        if (scores.scores[a] != scores.scores[b])
            return scores.scores[a] > scores.scores[b];
        return store.id(a) < store.id(b);
    };
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k),
                      order.end(), better);

    RetrievalResult out;
    out.persona_id = scores.persona_id;
    out.ids.reserve(k);
    out.scores.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
        out.ids.push_back(store.id(order[i]));
        out.scores.push_back(scores.scores[order[i]]);
    }
    return out;
}

// Percentile of the winner among the other N-1 catalog items: fraction
// scored strictly below it, ties counted half, scaled to [0, 100].
// 100 means perfect retrieval (winner on top), 0 means it came last.
inline double percentile_rank(const ScoreVector& scores, const CatalogStore& store,
                              const std::string& winner_id) {
    const std::size_t n = scores.scores.size();
    if (n != store.size()) throw ShapeMismatch("score vector vs catalog size");
    if (n < 2) throw Error("percentile_rank needs a catalog of at least 2");
    if (!store.contains(winner_id)) throw UnknownWinner("'" + winner_id + "'");
    const std::uint32_t w = store.row_index(winner_id);
    const double sw = scores.scores[w];
    std::size_t below = 0, tied = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (i == w) continue;
        if (scores.scores[i] < sw)
            ++below;
        else if (scores.scores[i] == sw)
            ++tied;
    }
    return 100.0 * (static_cast<double>(below) + 0.5 * static_cast<double>(tied)) /
           static_cast<double>(n - 1);
}

struct MetricReport {
    double mean = 0.0;
    std::size_t n_personas = 0;
    std::size_t catalog_size = 0;
    std::map<std::string, double> per_persona;
};

inline MetricReport mean_percentile(const std::vector<TournamentLabel>& labels,
                                    const CatalogStore& store,
                                    const PersonaSet& personas) {
    MetricReport report;
    report.catalog_size = store.size();
    double sum = 0.0;
    for (const auto& label : labels) {
        const PersonaRecord& persona = personas.by_id(label.persona_id);
        const ScoreVector scores = store.score_all(persona);
        const double pct = percentile_rank(scores, store, label.winner_id);
        report.per_persona[label.persona_id] = pct;
        sum += pct;
    }
    report.n_personas = report.per_persona.size();
    report.mean = report.n_personas ? sum / static_cast<double>(report.n_personas) : 0.0;
    return report;
}

inline nlohmann::json report_to_json(const MetricReport& report) {
    nlohmann::json j;
    j["mean"] = report.mean;
    j["n_personas"] = report.n_personas;
    j["catalog_size"] = report.catalog_size;
    j["per_persona"] = report.per_persona;
    return j;
}

inline MetricReport report_from_json(const nlohmann::json& j) {
    MetricReport report;
    report.mean = j.at("mean").get<double>();
    report.n_personas = j.at("n_personas").get<std::size_t>();
    report.catalog_size = j.at("catalog_size").get<std::size_t>();
    report.per_persona = j.at("per_persona").get<std::map<std::string, double>>();
    return report;
}

inline void save_report(const MetricReport& report, const std::string& path) {
    detail::write_file(path, report_to_json(report).dump(2) + "\n");
}

inline nlohmann::json retrieval_to_json(const RetrievalResult& r) {
    nlohmann::json j;
    j["persona_id"] = r.persona_id;
    j["ids"] = r.ids;
    j["scores"] = r.scores;
    return j;
}

}  // namespace prefdistill
