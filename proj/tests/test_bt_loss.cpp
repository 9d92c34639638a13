// Copyright (c) 2026 prefdistill contributors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <string>
#include <vector>

#include "prefdistill/bt_loss.hpp"
#include "prefdistill/embedding.hpp"
#include "prefdistill/rng.hpp"

using namespace prefdistill;

namespace {

// Independent loss oracle: recomputes the group loss from scratch on a
// plain double matrix (normalize, dot, logistic, cross-entropy), with no
// use of group_loss_grad internals. Used by the finite-difference check.
double oracle_group_loss(const Vec& persona, const std::vector<Vec>& raw_rows,
                         const std::vector<int>& ranking) {
    const std::size_t n = raw_rows.size();
    std::vector<double> s(n);
    for (std::size_t k = 0; k < n; ++k) {
        double nn = 0.0;
        for (double x : raw_rows[k]) nn += x * x;
        nn = std::sqrt(nn);
        double d = 0.0;
        for (std::size_t t = 0; t < persona.size(); ++t)
            d += persona[t] * raw_rows[k][t] / nn;
        s[k] = d;
    }
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double p = 1.0 / (1.0 + std::exp(-(s[i] - s[j])));
            const int y = ranking[i] < ranking[j] ? 1 : 0;
            loss += y ? -std::log(p) : -std::log(1.0 - p);
        }
    return loss;
}

struct World {
    CatalogStore store;
    PersonaSet personas;
    RankedGroup group;
};

World random_world(Rng& rng, std::size_t dim, std::size_t n_candidates) {
    std::vector<std::string> ids;
    std::vector<double> raw;
    const std::size_t catalog = n_candidates + 3;
    for (std::size_t i = 0; i < catalog; ++i) {
        ids.push_back("img" + std::to_string(i));
        Vec v = rng.unit_vector(dim);
        const double scale = 0.5 + rng.next_double();
        for (double x : v) raw.push_back(x * scale);
    }
    World w{CatalogStore(ids, dim, raw), {}, {}};
    w.personas.add({"p0", "", rng.unit_vector(dim)});

    w.group.persona_id = "p0";
    std::vector<int> ranks;
    for (std::size_t i = 0; i < n_candidates; ++i) {
        w.group.candidate_ids.push_back(ids[i]);
        ranks.push_back(static_cast<int>(i) + 1);
    }
    rng.shuffle(ranks);
    w.group.ranking = ranks;
    return w;
}

}  // namespace

TEST_CASE("pairs_from_ranking") {
    RankedGroup two{"p", {"a", "b"}, {1, 2}, "", 0};
    auto pairs = pairs_from_ranking(two);
    REQUIRE(pairs.size() == 1);
    CHECK(pairs[0].i == 0);
    CHECK(pairs[0].j == 1);
    CHECK(pairs[0].y == 1);

    RankedGroup five{"p", {"a", "b", "c", "d", "e"}, {2, 5, 1, 3, 4}, "", 0};
    CHECK(pairs_from_ranking(five).size() == 10);  // C(5,2)

    // hand enumeration of y = 1(r_i < r_j) for ranking [3,1,2]
    RankedGroup g{"p", {"a", "b", "c"}, {3, 1, 2}, "", 0};
    auto p3 = pairs_from_ranking(g);
    REQUIRE(p3.size() == 3);
    CHECK(p3[0].y == 0);  // (0,1): 3 < 1 is false
    CHECK(p3[1].y == 0);  // (0,2): 3 < 2 is false
    CHECK(p3[2].y == 1);  // (1,2): 1 < 2 is true

    RankedGroup bad{"p", {"a", "b", "c"}, {1, 1, 2}, "", 0};
    CHECK_THROWS_AS(pairs_from_ranking(bad), InvalidPermutation);
}

TEST_CASE("bt_probability algebra") {
    CHECK(bt_probability(0.37, 0.37) == 0.5);
    CHECK(bt_probability(std::log(3.0), 0.0) == Catch::Approx(0.75).margin(1e-12));
    // sigma(0.5), evaluated numerically
    CHECK(bt_probability(0.6, 0.1) == Catch::Approx(0.6224593312018546).margin(1e-12));

    Rng rng(1);
    for (int t = 0; t < 100; ++t) {
        const double a = 2.0 * rng.next_double() - 1.0;
        const double b = 2.0 * rng.next_double() - 1.0;
        const double p = bt_probability(a, b);
        CHECK(p > 0.0);
        CHECK(p < 1.0);
        CHECK(p + bt_probability(b, a) == Catch::Approx(1.0).margin(1e-15));
    }
}

TEST_CASE("pairwise_loss values") {
    CHECK(pairwise_loss(0.5, 1) == Catch::Approx(std::log(2.0)).margin(1e-12));
    CHECK(pairwise_loss(0.75, 1) == Catch::Approx(std::log(4.0 / 3.0)).margin(1e-12));
    CHECK(pairwise_loss(0.75, 0) == Catch::Approx(std::log(4.0)).margin(1e-12));
    CHECK(std::isfinite(pairwise_loss(0.0, 1)));  // clamped
    CHECK(std::isfinite(pairwise_loss(1.0, 0)));

    // antisymmetry: swapping (i,j) and flipping y leaves the loss unchanged
    Rng rng(2);
    for (int t = 0; t < 100; ++t) {
        const double si = 2.0 * rng.next_double() - 1.0;
        const double sj = 2.0 * rng.next_double() - 1.0;
        const int y = rng.next_u64() & 1;
        const double a = pairwise_loss(bt_probability(si, sj), y);
        const double b = pairwise_loss(bt_probability(sj, si), 1 - y);
        CHECK(a == Catch::Approx(b).margin(1e-12));
    }
}

TEST_CASE("pair score-gradient is (P - y) against finite differences") {
    Rng rng(3);
    for (int t = 0; t < 50; ++t) {
        const double si = 2.0 * rng.next_double() - 1.0;
        const double sj = 2.0 * rng.next_double() - 1.0;
        const int y = rng.next_u64() & 1;
        const double h = 1e-6;
        const double up = pairwise_loss(bt_probability(si + h, sj), y);
        const double dn = pairwise_loss(bt_probability(si - h, sj), y);
        const double fd = (up - dn) / (2.0 * h);
        const double analytic = bt_probability(si, sj) - y;
        CHECK(fd == Catch::Approx(analytic).margin(1e-8));
    }
}

TEST_CASE("group gradient matches central finite differences") {
    Rng rng(4);
    World w = random_world(rng, 4, 3);
    const GroupGradient gg = group_loss_grad(w.group, w.personas, w.store);

    const Vec& persona = w.personas.by_id("p0").embedding;
    std::vector<Vec> rows;
    for (auto r : gg.rows) rows.emplace_back(w.store.raw_row(r).begin(),
                                             w.store.raw_row(r).end());

    CHECK(gg.loss ==
          Catch::Approx(oracle_group_loss(persona, rows, w.group.ranking)).margin(1e-12));

    const double h = 1e-5;
    for (std::size_t k = 0; k < rows.size(); ++k) {
        for (std::size_t d = 0; d < 4; ++d) {
            std::vector<Vec> up = rows, dn = rows;
            up[k][d] += h;
            dn[k][d] -= h;
            const double fd = (oracle_group_loss(persona, up, w.group.ranking) -
                               oracle_group_loss(persona, dn, w.group.ranking)) /
                              (2.0 * h);
            const double an = gg.grads[k][d];
            const double scale = std::max(std::abs(fd), std::abs(an));
            if (scale < 1e-9) {
                CHECK(std::abs(fd - an) < 1e-9);
            } else {
                CHECK(std::abs(fd - an) / scale < 1e-5);
            }
        }
    }
}

TEST_CASE("gradient is tangent to the raw vector") {
    Rng rng(5);
    for (int t = 0; t < 20; ++t) {
        World w = random_world(rng, 6, 4);
        const GroupGradient gg = group_loss_grad(w.group, w.personas, w.store);
        for (std::size_t k = 0; k < gg.rows.size(); ++k) {
            const auto raw = w.store.raw_row(gg.rows[k]);
            const double along = dot(gg.grads[k], raw);
            CHECK(std::abs(along) <= 1e-6 * norm(gg.grads[k]) * norm(raw) + 1e-15);
        }
    }
}

TEST_CASE("identical embeddings: loss is C(n,2) ln 2, gradients tangent") {
    const std::size_t dim = 4;
    Rng rng(6);
    const Vec shared = rng.unit_vector(dim);
    std::vector<double> raw;
    for (int i = 0; i < 3; ++i) raw.insert(raw.end(), shared.begin(), shared.end());
    CatalogStore store({"a", "b", "c"}, dim, raw);
    PersonaSet personas;
    personas.add({"p", "", rng.unit_vector(dim)});

    RankedGroup g{"p", {"a", "b", "c"}, {1, 2, 3}, "", 0};
    const GroupGradient gg = group_loss_grad(g, personas, store);
    CHECK(gg.loss == Catch::Approx(3.0 * std::log(2.0)).margin(1e-9));
    for (std::size_t k = 0; k < 3; ++k)
        CHECK(std::abs(dot(gg.grads[k], store.raw_row(gg.rows[k]))) < 1e-12);

    // two identical candidates: gradients are equal magnitude, opposite sign
    RankedGroup g2{"p", {"a", "b"}, {1, 2}, "", 0};
    const GroupGradient gg2 = group_loss_grad(g2, personas, store);
    for (std::size_t d = 0; d < dim; ++d)
        CHECK(gg2.grads[0][d] == Catch::Approx(-gg2.grads[1][d]).margin(1e-15));
}

TEST_CASE("well-ordered scores with margin: loss small and bounded") {
    // persona [1,0]; candidates at angles so scores decrease with rank
    PersonaSet personas;
    personas.add({"p", "", Vec{1.0, 0.0}});
    const auto world_with_margin = [&](double margin) {
        std::vector<double> raw;
        std::vector<std::string> ids;
        for (int k = 0; k < 3; ++k) {
            const double s = 0.9 - margin * k;
            ids.push_back("c" + std::to_string(k));
            raw.push_back(s);
            raw.push_back(std::sqrt(1.0 - s * s));
        }
        return CatalogStore(ids, 2, raw);
    };
    double prev_loss = 1e9;
    double prev_grad = 1e9;
    for (double margin : {0.05, 0.1, 0.2, 0.4}) {
        CatalogStore store = world_with_margin(margin);
        RankedGroup g{"p", {"c0", "c1", "c2"}, {1, 2, 3}, "", 0};
        const GroupGradient gg = group_loss_grad(g, personas, store);
        const double bound = 3.0 * std::log(1.0 + std::exp(-margin));
        CHECK(gg.loss <= bound + 1e-12);
        // score-space gradient: sum over pairs of |P - y|, which shrinks
        // as the margins grow (the raw-space norm also carries the
        // normalization geometry and need not be monotone)
        double gnorm = 0.0;
        const ScoreVector sv = store.score_all(personas.by_id("p"));
        for (const auto& pr : pairs_from_ranking(g)) {
            const double p = bt_probability(sv.scores[static_cast<std::size_t>(pr.i)],
                                            sv.scores[static_cast<std::size_t>(pr.j)]);
            gnorm += std::abs(p - pr.y);
        }
        CHECK(gg.loss < prev_loss);
        CHECK(gnorm < prev_grad);
        prev_loss = gg.loss;
        prev_grad = gnorm;
    }
}

TEST_CASE("group errors") {
    Rng rng(7);
    World w = random_world(rng, 4, 3);
    RankedGroup bad = w.group;
    bad.persona_id = "nobody";
    CHECK_THROWS_AS(group_loss_grad(bad, w.personas, w.store), UnknownId);
    bad = w.group;
    bad.candidate_ids[0] = "ghost";
    CHECK_THROWS_AS(group_loss_grad(bad, w.personas, w.store), UnknownId);
}

TEST_CASE("batch accumulation") {
    Rng rng(8);
    World w = random_world(rng, 4, 3);

    const BatchGradient empty = batch_loss_grad({}, w.personas, w.store);
    CHECK(empty.loss == 0.0);
    CHECK(empty.grad.empty());

    const BatchGradient single = batch_loss_grad({w.group}, w.personas, w.store);
    const GroupGradient gg = group_loss_grad(w.group, w.personas, w.store);
    CHECK(single.loss == gg.loss);
    REQUIRE(single.grad.size() == gg.rows.size());
    for (std::size_t k = 0; k < gg.rows.size(); ++k)
        CHECK(single.grad.at(gg.rows[k]) == gg.grads[k]);

    // two groups over disjoint candidates: loss adds exactly
    RankedGroup other = w.group;
    other.candidate_ids = {"img3", "img4", "img5"};
    const BatchGradient both = batch_loss_grad({w.group, other}, w.personas, w.store);
    const GroupGradient gg2 = group_loss_grad(other, w.personas, w.store);
    CHECK(both.loss == gg.loss + gg2.loss);
    CHECK(both.grad.size() == 6);

    // sparsity: rows outside the batch have no entry at all
    for (std::size_t i = 0; i < w.store.size(); ++i) {
        const bool touched = both.grad.count(static_cast<std::uint32_t>(i)) != 0;
        bool expected = false;
        for (const auto& id : w.group.candidate_ids)
            if (w.store.row_index(id) == i) expected = true;
        for (const auto& id : other.candidate_ids)
            if (w.store.row_index(id) == i) expected = true;
        CHECK(touched == expected);
    }
}
