// Copyright (c) 2026 prefdistill contributors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <string>

#include "prefdistill/io.hpp"
#include "prefdistill/ranked_group.hpp"
#include "test_util.hpp"

using namespace prefdistill;
using testutil::TempDir;
using testutil::slurp;

TEST_CASE("embedding binary round trip is byte identical") {
    TempDir tmp;
    Rng rng(5);
    std::vector<std::string> ids;
    std::vector<double> raw;
    for (int i = 0; i < 7; ++i) {
        ids.push_back("img_" + std::to_string(i));
        for (double x : rng.unit_vector(12)) raw.push_back(x * (1.0 + rng.next_double()));
    }
    CatalogStore store(ids, 12, raw);

    const std::string p1 = tmp.file("a.pde");
    const std::string p2 = tmp.file("b.pde");
    save_embeddings(store, p1);
    CatalogStore loaded = load_embeddings(p1);
    save_embeddings(loaded, p2);

    CHECK(slurp(p1) == slurp(p2));
    CHECK(slurp(p1 + ".manifest.json") == slurp(p2 + ".manifest.json"));
    CHECK(loaded.ids() == store.ids());
    CHECK(loaded.dim() == store.dim());
    for (std::size_t i = 0; i < store.size(); ++i)
        for (std::size_t d = 0; d < store.dim(); ++d)
            CHECK(loaded.raw_row(i)[d] == store.raw_row(i)[d]);
}

TEST_CASE("header arithmetic: count=2 dim=3 with 6 floats") {
    TempDir tmp;
    const std::string p = tmp.file("tiny.pde");
    std::string buf("PDE1", 4);
    detail::append_u32(buf, 2);
    detail::append_u32(buf, 3);
    for (float f : {1.f, 0.f, 0.f, 0.f, 2.f, 0.f}) detail::append_f32(buf, f);
    detail::write_file(p, buf);
    nlohmann::json manifest;
    manifest["ids"] = {"a", "b"};
    manifest["dim"] = 3;
    manifest["count"] = 2;
    manifest["normalized"] = false;
    detail::write_file(p + ".manifest.json", manifest.dump() + "\n");

    CatalogStore store = load_embeddings(p);
    CHECK(store.size() == 2);
    CHECK(store.dim() == 3);
    CHECK(store.raw_row(1)[1] == 2.0);
}

TEST_CASE("embedding load error paths") {
    TempDir tmp;
    const std::string p = tmp.file("bad.pde");

    SECTION("bad magic") {
        detail::write_file(p, "NOPE\x01\x00\x00\x00\x02\x00\x00\x00");
        CHECK_THROWS_AS(load_embeddings(p), BadMagic);
    }
    SECTION("truncated payload") {
        std::string buf("PDE1", 4);
        detail::append_u32(buf, 2);
        detail::append_u32(buf, 3);
        detail::append_f32(buf, 1.f);  // 23 floats short
        detail::write_file(p, buf);
        CHECK_THROWS_AS(load_embeddings(p), TruncatedFile);
    }
    SECTION("trailing bytes") {
        std::string buf("PDE1", 4);
        detail::append_u32(buf, 1);
        detail::append_u32(buf, 2);
        detail::append_f32(buf, 1.f);
        detail::append_f32(buf, 0.f);
        buf += "excess";
        detail::write_file(p, buf);
        CHECK_THROWS_AS(load_embeddings(p), TruncatedFile);
    }
    SECTION("manifest mismatch") {
        std::string buf("PDE1", 4);
        detail::append_u32(buf, 1);
        detail::append_u32(buf, 2);
        detail::append_f32(buf, 1.f);
        detail::append_f32(buf, 0.f);
        detail::write_file(p, buf);
        nlohmann::json manifest;
        manifest["ids"] = {"a"};
        manifest["dim"] = 5;  // disagrees with header
        manifest["count"] = 1;
        manifest["normalized"] = false;
        detail::write_file(p + ".manifest.json", manifest.dump());
        CHECK_THROWS_AS(load_embeddings(p), DimensionMismatch);
    }
    SECTION("duplicate ids in manifest") {
        std::string buf("PDE1", 4);
        detail::append_u32(buf, 2);
        detail::append_u32(buf, 2);
        for (float f : {1.f, 0.f, 0.f, 1.f}) detail::append_f32(buf, f);
        detail::write_file(p, buf);
        nlohmann::json manifest;
        manifest["ids"] = {"a", "a"};
        manifest["dim"] = 2;
        manifest["count"] = 2;
        manifest["normalized"] = false;
        detail::write_file(p + ".manifest.json", manifest.dump());
        CHECK_THROWS_AS(load_embeddings(p), DuplicateId);
    }
}

TEST_CASE("persona jsonl load and generation") {
    TempDir tmp;
    const std::string p = tmp.file("personas.jsonl");
    {
        std::ofstream out(p);
        out << R"({"id":"p1","text":"a mother who loves gardening","embedding":[0.6,0.8]})"
            << "\n";
        out << R"({"id":"p2","text":"no embedding supplied"})" << "\n";
    }
    PersonaSet set = load_personas(p, 2, 77);
    CHECK(set.size() == 2);
    CHECK(set.by_id("p1").embedding[0] == Catch::Approx(0.6).margin(1e-12));
    CHECK(std::abs(norm(set.by_id("p2").embedding) - 1.0) < 1e-9);

    // generated embeddings are deterministic in (seed, id)
    PersonaSet again = load_personas(p, 2, 77);
    CHECK(again.by_id("p2").embedding == set.by_id("p2").embedding);
    PersonaSet other = load_personas(p, 2, 78);
    CHECK(other.by_id("p2").embedding != set.by_id("p2").embedding);

    CHECK_THROWS_AS(load_personas(p, 3, 0), DimensionMismatch);
}

TEST_CASE("ranked group log round trip and validation") {
    TempDir tmp;
    const std::string p = tmp.file("groups.jsonl");
    std::vector<RankedGroup> groups;
    groups.push_back({"p1", {"a", "b", "c"}, {3, 1, 2}, "synthetic", 4});
    groups.push_back({"p2", {"x", "y"}, {1, 2}, "synthetic", 5});
    save_group_log(groups, p);
    const std::string bytes = slurp(p);
    auto loaded = load_group_log(p);
    save_group_log(loaded, p);
    CHECK(slurp(p) == bytes);
    CHECK(loaded.size() == 2);
    CHECK(loaded[0].ranking == std::vector<int>{3, 1, 2});

    CHECK_THROWS_AS(validate_group(RankedGroup{"p", {"a", "b"}, {1, 1}, "", 0}),
                    InvalidPermutation);
    CHECK_THROWS_AS(validate_group(RankedGroup{"p", {"a", "a"}, {1, 2}, "", 0}),
                    DuplicateId);

    {
        std::ofstream out(p, std::ios::app);
        out << "{corrupt\n";
    }
    CHECK_THROWS_AS(load_group_log(p), CacheCorrupt);
    std::size_t corrupt = 0;
    auto tolerant = load_group_log(p, true, &corrupt);
    CHECK(tolerant.size() == 2);
    CHECK(corrupt == 1);
}
