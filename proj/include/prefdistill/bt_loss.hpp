// Copyright (c) 2026 prefdistill contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <unordered_map>
#include <vector>

#include "prefdistill/embedding.hpp"
#include "prefdistill/errors.hpp"
#include "prefdistill/ranked_group.hpp"

namespace prefdistill {

inline constexpr double kProbClamp = 1e-12;

// Teacher's binary preference over one candidate index pair (i < j):
// y = 1 iff candidate i outranks candidate j.
struct PairPreference {
    int i = 0;
    int j = 0;
    int y = 0;
};

// Expands a ranking into its C(n,2) pairwise preferences, lexicographic
// by (i, j).
inline std::vector<PairPreference> pairs_from_ranking(const RankedGroup& group) {
    validate_group(group);
    const int n = static_cast<int>(group.candidate_ids.size());
    std::vector<PairPreference> pairs;
    pairs.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            pairs.push_back({i, j, group.ranking[i] < group.ranking[j] ? 1 : 0});
    return pairs;
}

// Bradley-Terry preference probability P(i beats j) in the numerically
// stable logistic form sigma(s_i - s_j).
inline double bt_probability(double s_i, double s_j) {
    const double d = s_i - s_j;
    if (d >= 0.0) {
        return 1.0 / (1.0 + std::exp(-d));
    }
    const double e = std::exp(d);
    return e / (1.0 + e);
}

// Binary cross-entropy of p against the teacher label. p is clamped away
// from {0, 1} so the op is total.
inline double pairwise_loss(double p, int y) {
    const double q = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
    return y ? -std::log(q) : -std::log(1.0 - q);
}

// Loss and exact raw-parameter gradients for one group. Gradients exist
// only for the group's candidates (sparsity everywhere else).
struct GroupGradient {
    double loss = 0.0;
    std::vector<std::uint32_t> rows;  // store row per candidate, group order
    std::vector<Vec> grads;           // d loss / d raw, aligned with rows
};

// Sum over groups; grad accumulated per row in group order, then
// candidate order, so results are deterministic.
struct BatchGradient {
    double loss = 0.0;
    std::size_t dim = 0;
    std::unordered_map<std::uint32_t, Vec> grad;
};

// Closed-form gradient chain: dL/ds = (P - y) per pair, ds/dn = persona
// embedding, dn/dv = (I - n n^T)/||v||. Folding the last two gives
// grad_v = coeff * (p - s*n)/||v||, which is exactly tangent to v.
inline GroupGradient group_loss_grad(const RankedGroup& group,
                                     const PersonaSet& personas,
                                     const CatalogStore& store) {
    const PersonaRecord& persona = personas.by_id(group.persona_id);
    if (persona.embedding.size() != store.dim())
        throw DimensionMismatch("persona dim vs store dim");

    const auto pairs = pairs_from_ranking(group);
    const std::size_t n = group.candidate_ids.size();
    const std::size_t dim = store.dim();

    GroupGradient out;
    out.rows.reserve(n);
    std::vector<double> scores(n);
    for (std::size_t k = 0; k < n; ++k) {
        const std::uint32_t row = store.row_index(group.candidate_ids[k]);
        out.rows.push_back(row);
        scores[k] = dot(persona.embedding, store.normalized_row(row));
    }

    std::vector<double> coeff(n, 0.0);  // d loss / d s_k
    for (const auto& pr : pairs) {
        const double p = bt_probability(scores[pr.i], scores[pr.j]);
        out.loss += pairwise_loss(p, pr.y);
        const double d = p - static_cast<double>(pr.y);
        coeff[static_cast<std::size_t>(pr.i)] += d;
        coeff[static_cast<std::size_t>(pr.j)] -= d;
    }

    out.grads.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
        const auto raw = store.raw_row(out.rows[k]);
        const auto nvec = store.normalized_row(out.rows[k]);
        const double inv_norm = 1.0 / norm(raw);
        Vec g(dim);
        for (std::size_t d = 0; d < dim; ++d)
            g[d] = coeff[k] * (persona.embedding[d] - scores[k] * nvec[d]) * inv_norm;
        out.grads[k] = std::move(g);
    }
    return out;
}

inline BatchGradient batch_loss_grad(const std::vector<RankedGroup>& groups,
                                     const PersonaSet& personas,
                                     const CatalogStore& store) {
    BatchGradient out;
    out.dim = store.dim();
    for (const auto& group : groups) {
        GroupGradient gg = group_loss_grad(group, personas, store);
        out.loss += gg.loss;
        for (std::size_t k = 0; k < gg.rows.size(); ++k) {
            auto [it, fresh] = out.grad.try_emplace(gg.rows[k], store.dim(), 0.0);
            Vec& acc = it->second;
            for (std::size_t d = 0; d < store.dim(); ++d) acc[d] += gg.grads[k][d];
        }
    }
    return out;
}

}  // namespace prefdistill
