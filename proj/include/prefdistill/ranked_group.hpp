// Copyright (c) 2026 prefdistill contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "prefdistill/errors.hpp"

namespace prefdistill {

// One teacher judgment: ranking[i] is the rank (1 = most relevant) of
// candidate_ids[i]. Rankings are strict permutations; teachers that
// produce ties must break them before emitting a group.
struct RankedGroup {
    std::string persona_id;
    std::vector<std::string> candidate_ids;
    std::vector<int> ranking;
    std::string teacher;
    std::int64_t step = 0;
};

inline void validate_permutation(const std::vector<int>& ranking) {
    const int n = static_cast<int>(ranking.size());
    std::vector<char> seen(static_cast<std::size_t>(n), 0);
    for (int r : ranking) {
        if (r < 1 || r > n || seen[static_cast<std::size_t>(r - 1)])
            throw InvalidPermutation("ranking is not a permutation of 1.." +
                                     std::to_string(n));
        seen[static_cast<std::size_t>(r - 1)] = 1;
    }
}

inline void validate_group(const RankedGroup& g) {
    if (g.candidate_ids.size() < 2)
        throw Error("group needs at least 2 candidates");
    if (g.ranking.size() != g.candidate_ids.size())
        throw InvalidPermutation("ranking length != candidate count");
    std::unordered_set<std::string> uniq(g.candidate_ids.begin(),
                                         g.candidate_ids.end());
    if (uniq.size() != g.candidate_ids.size())
        throw DuplicateId("group candidates must be distinct");
    validate_permutation(g.ranking);
}

inline nlohmann::json group_to_json(const RankedGroup& g) {
    nlohmann::json j;
    j["persona_id"] = g.persona_id;
    j["candidates"] = g.candidate_ids;
    j["ranking"] = g.ranking;
    j["teacher"] = g.teacher;
    j["step"] = g.step;
    return j;
}

inline RankedGroup group_from_json(const nlohmann::json& j) {
    RankedGroup g;
    g.persona_id = j.at("persona_id").get<std::string>();
    g.candidate_ids = j.at("candidates").get<std::vector<std::string>>();
    g.ranking = j.at("ranking").get<std::vector<int>>();
    g.teacher = j.value("teacher", std::string{});
    g.step = j.value("step", std::int64_t{0});
    validate_group(g);
    return g;
}

// Loads a JSON Lines group log. With skip_corrupt, unparseable or invalid
// lines are counted and skipped instead of aborting the load.
inline std::vector<RankedGroup> load_group_log(const std::string& path,
                                               bool skip_corrupt = false,
                                               std::size_t* corrupt_lines = nullptr) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::vector<RankedGroup> out;
    std::string line;
    std::size_t lineno = 0, corrupt = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(group_from_json(nlohmann::json::parse(line)));
        } catch (const std::exception& e) {
            if (!skip_corrupt)
                throw CacheCorrupt("'" + path + "' line " + std::to_string(lineno) +
                                   ": " + e.what());
            ++corrupt;
        }
    }
    if (corrupt_lines) *corrupt_lines = corrupt;
    return out;
}

inline void save_group_log(const std::vector<RankedGroup>& groups,
                           const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    for (const auto& g : groups) out << group_to_json(g).dump() << "\n";
}

}  // namespace prefdistill
