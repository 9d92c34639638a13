// Copyright (c) 2026 prefdistill contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <cstdint>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "prefdistill/errors.hpp"
#include "prefdistill/rng.hpp"
#include "prefdistill/teacher.hpp"

namespace prefdistill {

struct MatchRecord {
    int round = 0;
    std::string a, b, winner;
};

// Ground-truth evaluation label: the image surviving a single-elimination
// bracket of teacher comparisons. Byes advance for free, so any N >= 2
// costs exactly N - 1 comparisons.
struct TournamentLabel {
    std::string persona_id;
    std::string winner_id;
    std::string teacher;
    int n = 0;
    int rounds = 0;
    int comparisons = 0;
    std::uint64_t bracket_seed = 0;
    std::vector<MatchRecord> bracket;
};

// Propagated teacher failure carrying the bracket played so far.
class TournamentError : public Error {
public:
    TournamentError(const std::string& what, TournamentLabel partial_label)
        : Error("TournamentError: " + what), partial(std::move(partial_label)) {}

    TournamentLabel partial;
};

// Round-0 slots: entrants in order, padded with byes (nullopt) up to the
// next power of two, byes in the highest-indexed slots.
inline std::vector<std::optional<std::string>> seed_bracket(
    const std::vector<std::string>& entrants) {
    std::size_t m = 1;
    while (m < entrants.size()) m <<= 1;
    std::vector<std::optional<std::string>> slots(m);
    for (std::size_t i = 0; i < entrants.size(); ++i) slots[i] = entrants[i];
    return slots;
}

inline TournamentLabel run_tournament(const std::string& persona_id,
                                      const std::string& persona_text,
                                      const std::vector<std::string>& entrants,
                                      Teacher& teacher,
                                      std::uint64_t bracket_seed = 0,
                                      std::int64_t step = 0) {
    if (entrants.size() < 2) throw Error("tournament needs at least 2 entrants");
    std::unordered_set<std::string> uniq(entrants.begin(), entrants.end());
    if (uniq.size() != entrants.size())
        throw DuplicateId("tournament entrants must be distinct");

    std::vector<std::string> order = entrants;
    if (bracket_seed != 0) {
        Rng rng(bracket_seed);
        rng.shuffle(order);
    }

    TournamentLabel label;
    label.persona_id = persona_id;
    label.teacher = teacher.id();
    label.n = static_cast<int>(entrants.size());
    label.bracket_seed = bracket_seed;

    auto slots = seed_bracket(order);
    int round = 0;
    while (slots.size() > 1) {
        ++round;
        std::vector<std::optional<std::string>> next(slots.size() / 2);
        for (std::size_t i = 0; i < next.size(); ++i) {
            const auto& a = slots[2 * i];
            const auto& b = slots[2 * i + 1];
            if (a && b) {
                TeacherRequest req;
                req.persona_id = persona_id;
                req.persona_text = persona_text;
                req.candidate_ids = {*a, *b};
                req.step = step;
                std::string winner;
                try {
                    winner = teacher.compare(req);
                } catch (const Error& e) {
                    label.rounds = round;
                    throw TournamentError(e.what(), std::move(label));
                }
                ++label.comparisons;
                label.bracket.push_back({round, *a, *b, winner});
                next[i] = winner;
            } else if (a || b) {
                next[i] = a ? a : b;  // bye: advance without a comparison
            }
        }
        slots = std::move(next);
    }
    label.rounds = round;
    label.winner_id = *slots[0];
    return label;
}

inline nlohmann::json label_to_json(const TournamentLabel& label) {
    nlohmann::json j;
    j["persona_id"] = label.persona_id;
    j["winner_id"] = label.winner_id;
    j["n"] = label.n;
    j["comparisons"] = label.comparisons;
    j["bracket_seed"] = label.bracket_seed;
    j["teacher"] = label.teacher;
    return j;
}

inline TournamentLabel label_from_json(const nlohmann::json& j) {
    TournamentLabel label;
    label.persona_id = j.at("persona_id").get<std::string>();
    label.winner_id = j.at("winner_id").get<std::string>();
    label.n = j.at("n").get<int>();
    label.comparisons = j.at("comparisons").get<int>();
    label.bracket_seed = j.value("bracket_seed", std::uint64_t{0});
    label.teacher = j.value("teacher", std::string{});
    return label;
}

inline std::vector<TournamentLabel> load_labels(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::vector<TournamentLabel> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(label_from_json(nlohmann::json::parse(line)));
        } catch (const std::exception& e) {
            throw CacheCorrupt("'" + path + "' line " + std::to_string(lineno) + ": " +
                               e.what());
        }
    }
    return out;
}

inline void save_labels(const std::vector<TournamentLabel>& labels,
                        const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    for (const auto& label : labels) out << label_to_json(label).dump() << "\n";
}

struct LabelSetOptions {
    std::uint64_t master_seed = 0;
    bool shuffle_brackets = false;
    int parallelism = 1;
    std::string bracket_log_path;  // optional sidecar of match records
    std::int64_t step = 0;
};

// One label per persona over a fixed entrant set. Completed personas
// found in `out_path` are skipped, and each finished tournament is
// appended immediately, so interrupted runs resume where they left off.
inline std::vector<TournamentLabel> label_set(const PersonaSet& personas,
                                              const std::vector<std::string>& entrants,
                                              Teacher& teacher,
                                              const std::string& out_path,
                                              const LabelSetOptions& opts = {}) {
    std::unordered_map<std::string, TournamentLabel> done;
    if (std::ifstream probe(out_path); probe.good()) {
        for (auto& label : load_labels(out_path)) done.emplace(label.persona_id, label);
    }

    std::vector<std::size_t> todo;
    for (std::size_t i = 0; i < personas.size(); ++i)
        if (!done.count(personas.at(i).id)) todo.push_back(i);

    std::ofstream out(out_path, std::ios::app);
    if (!out) throw IoError("cannot open '" + out_path + "' for writing");
    std::ofstream bracket_out;
    if (!opts.bracket_log_path.empty()) {
        bracket_out.open(opts.bracket_log_path, std::ios::app);
        if (!bracket_out)
            throw IoError("cannot open '" + opts.bracket_log_path + "' for writing");
    }

    std::mutex sink_mu;
    std::atomic<std::size_t> cursor{0};
    std::exception_ptr failure;
    std::mutex failure_mu;

    const auto worker = [&]() {
        while (true) {
            const std::size_t slot = cursor.fetch_add(1);
            if (slot >= todo.size()) return;
            {
                std::lock_guard lock(failure_mu);
                if (failure) return;
            }
            const PersonaRecord& persona = personas.at(todo[slot]);
            const std::uint64_t bracket_seed =
                opts.shuffle_brackets
                    ? substream_seed(opts.master_seed, "bracket", fnv1a64(persona.id))
                    : 0;
            try {
                TournamentLabel label = run_tournament(persona.id, persona.text, entrants,
                                                       teacher, bracket_seed, opts.step);
                std::lock_guard lock(sink_mu);
                out << label_to_json(label).dump() << "\n";
                out.flush();
                if (bracket_out.is_open()) {
                    for (const auto& m : label.bracket) {
                        nlohmann::json j;
                        j["persona_id"] = label.persona_id;
                        j["round"] = m.round;
                        j["a"] = m.a;
                        j["b"] = m.b;
                        j["winner"] = m.winner;
                        bracket_out << j.dump() << "\n";
                    }
                    bracket_out.flush();
                }
                done.emplace(label.persona_id, std::move(label));
            } catch (...) {
                std::lock_guard lock(failure_mu);
                if (!failure) failure = std::current_exception();
                return;
            }
        }
    };

    const int threads = std::max(1, opts.parallelism);
    if (threads == 1 || todo.size() <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        const std::size_t n = std::min(static_cast<std::size_t>(threads), todo.size());
        pool.reserve(n);
        for (std::size_t i = 0; i < n; ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);

    std::vector<TournamentLabel> result;
    result.reserve(personas.size());
    for (const auto& persona : personas) result.push_back(done.at(persona.id));
    return result;
}

}  // namespace prefdistill
