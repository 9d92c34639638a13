// Copyright (c) 2026 prefdistill contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <memory>
#include <mutex>
#include <numeric>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "prefdistill/embedding.hpp"
#include "prefdistill/errors.hpp"
#include "prefdistill/ranked_group.hpp"
#include "prefdistill/rng.hpp"

namespace prefdistill {

struct TeacherRequest {
    std::string persona_id;
    std::string persona_text;
    std::vector<std::string> candidate_ids;
    // Image payloads are passed by reference (path or URL); empty means
    // the ids double as references.
    std::vector<std::string> payload_refs;
    std::int64_t step = 0;
};

struct TeacherRanking {
    std::vector<int> ranking;  // rank of each candidate, 1 = best
    std::string teacher_id;
    std::string raw_response;  // audit trail, HTTP teachers only
};

// Oracle contract: rank N candidates for a persona. Output validation is
// central (here), not per implementation.
class Teacher {
public:
    virtual ~Teacher() = default;

    TeacherRanking rank(const TeacherRequest& req) {
        if (req.candidate_ids.size() < 2)
            throw Error("teacher request needs at least 2 candidates");
        std::unordered_set<std::string> uniq(req.candidate_ids.begin(),
                                             req.candidate_ids.end());
        if (uniq.size() != req.candidate_ids.size())
            throw DuplicateId("teacher request candidates must be distinct");
        TeacherRanking out = do_rank(req);
        if (out.ranking.size() != req.candidate_ids.size())
            throw InvalidPermutation("teacher returned " +
                                     std::to_string(out.ranking.size()) +
                                     " ranks for " +
                                     std::to_string(req.candidate_ids.size()) +
                                     " candidates");
        validate_permutation(out.ranking);
        return out;
    }

    // Pairwise comparison is the 2-candidate ranking.
    std::string compare(const TeacherRequest& req) {
        if (req.candidate_ids.size() != 2)
            throw Error("compare takes exactly 2 candidates");
        const TeacherRanking r = rank(req);
        return r.ranking[0] == 1 ? req.candidate_ids[0] : req.candidate_ids[1];
    }

    virtual std::string id() const = 0;

protected:
    virtual TeacherRanking do_rank(const TeacherRequest& req) = 0;
};

// Test/desk oracle standing in for a vision-language judge. Hidden unit
// vectors per persona and image define a ground-truth utility
// h(x) . w(u); tau = 0 ranks by utility (ties broken by image id), tau > 0
// samples a Plackett-Luce ordering at temperature tau, so a pair (i, j)
// is preferred with probability sigma((u_i - u_j)/tau).
struct SyntheticTeacherSpec {
    std::size_t hidden_dim = 16;
    double tau = 0.0;
    std::uint64_t seed = 0;
    std::string name = "synthetic";
};

class SyntheticTeacher : public Teacher {
public:
    explicit SyntheticTeacher(SyntheticTeacherSpec spec) : spec_(std::move(spec)) {}

    std::string id() const override { return spec_.name; }
    const SyntheticTeacherSpec& spec() const { return spec_; }

    // Hidden vectors are hash-derived from (seed, id) unless preset, so
    // any id has a defined utility without registration. Fixtures preset
    // them to build controlled or recoverable worlds.
    Vec hidden_persona(const std::string& id) const {
        return hidden_vector(persona_cache_, "hidden-persona", id);
    }

    Vec hidden_image(const std::string& id) const {
        return hidden_vector(image_cache_, "hidden-image", id);
    }

    void set_hidden_persona(const std::string& id, const Vec& v) {
        std::lock_guard lock(mu_);
        persona_cache_[id] = normalize(v);
    }

    void set_hidden_image(const std::string& id, const Vec& v) {
        std::lock_guard lock(mu_);
        image_cache_[id] = normalize(v);
    }

    double utility(const std::string& persona_id, const std::string& image_id) const {
        return dot(hidden_persona(persona_id), hidden_image(image_id));
    }

protected:
    TeacherRanking do_rank(const TeacherRequest& req) override {
        const std::size_t n = req.candidate_ids.size();
        std::vector<double> util(n);
        for (std::size_t i = 0; i < n; ++i)
            util[i] = utility(req.persona_id, req.candidate_ids[i]);

        std::vector<std::size_t> order;
        if (spec_.tau == 0.0) {
            order = utility_order(req.candidate_ids, util);
        } else {
            order = plackett_luce_order(req, util);
        }

        TeacherRanking out;
        out.teacher_id = spec_.name;
        out.ranking.assign(n, 0);
        for (std::size_t pos = 0; pos < n; ++pos)
            out.ranking[order[pos]] = static_cast<int>(pos) + 1;
        return out;
    }

private:
    Vec hidden_vector(std::unordered_map<std::string, Vec>& cache,
                      const char* stream, const std::string& id) const {
        std::lock_guard lock(mu_);
        auto it = cache.find(id);
        if (it != cache.end()) return it->second;
        Rng rng(substream_seed(spec_.seed, stream, fnv1a64(id)));
        Vec v = rng.unit_vector(spec_.hidden_dim);
        cache.emplace(id, v);
        return v;
    }

    // Descending utility; utilities within 1e-12 tie-break by image id.
    std::vector<std::size_t> utility_order(const std::vector<std::string>& ids,
                                           const std::vector<double>& util) const {
        std::vector<std::size_t> order(ids.size());
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (util[a] != util[b]) return util[a] > util[b];
            return ids[a] < ids[b];
        });
        // Re-sort near-tied runs by id so the 1e-12 tolerance is honored.
        std::size_t run = 0;
        for (std::size_t i = 1; i <= order.size(); ++i) {
            if (i == order.size() || std::abs(util[order[i]] - util[order[i - 1]]) > 1e-12) {
                if (i - run > 1)
                    std::sort(order.begin() + run, order.begin() + i,
                              [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });
                run = i;
            }
        }
        return order;
    }

    // Sequential Bradley-Terry draws over the canonical (sorted-id)
    // candidate order. Randomness is a pure function of (seed, persona,
    // candidate set, step) so reruns and permuted requests agree.
    std::vector<std::size_t> plackett_luce_order(const TeacherRequest& req,
                                                 const std::vector<double>& util) const {
        const std::size_t n = req.candidate_ids.size();
        std::vector<std::size_t> canonical(n);
        std::iota(canonical.begin(), canonical.end(), 0);
        std::sort(canonical.begin(), canonical.end(), [&](std::size_t a, std::size_t b) {
            return req.candidate_ids[a] < req.candidate_ids[b];
        });

        std::uint64_t idhash = 0xcbf29ce484222325ULL;
        for (std::size_t k : canonical)
            idhash = mix64(idhash ^ fnv1a64(req.candidate_ids[k]));
        Rng rng(substream_seed(spec_.seed, "plackett-luce",
                               mix64(fnv1a64(req.persona_id) ^ idhash),
                               static_cast<std::uint64_t>(req.step)));

        const double umax = *std::max_element(util.begin(), util.end());
        std::vector<double> weight(n);
        std::vector<std::size_t> remaining = canonical;
        std::vector<std::size_t> order;
        order.reserve(n);
        while (!remaining.empty()) {
            double total = 0.0;
            for (std::size_t i = 0; i < remaining.size(); ++i) {
                weight[i] = std::exp((util[remaining[i]] - umax) / spec_.tau);
                total += weight[i];
            }
            const double u = rng.next_double() * total;
            double cum = 0.0;
            std::size_t pick = remaining.size() - 1;
            for (std::size_t i = 0; i < remaining.size(); ++i) {
                cum += weight[i];
                if (u < cum) {
                    pick = i;
                    break;
                }
            }
            order.push_back(remaining[pick]);
            remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(pick));
        }
        return order;
    }

    SyntheticTeacherSpec spec_;
    mutable std::mutex mu_;
    mutable std::unordered_map<std::string, Vec> persona_cache_;
    mutable std::unordered_map<std::string, Vec> image_cache_;
};

// Write-through ranking cache keyed by (teacher, persona, candidate set).
// Hits are re-indexed to the request's candidate order; misses delegate
// and append one JSON line (same schema as the RankedGroup log) to the
// cache file. With no inner teacher this replays a recorded log and
// treats misses as TeacherUnavailable.
class CachingTeacher : public Teacher {
public:
    CachingTeacher(std::shared_ptr<Teacher> inner, std::string cache_path)
        : inner_(std::move(inner)), cache_path_(std::move(cache_path)) {
        load_existing();
        out_.open(cache_path_, std::ios::app);
        if (!out_) throw IoError("cannot open cache '" + cache_path_ + "'");
    }

    std::string id() const override { return inner_ ? inner_->id() : "replay"; }

    std::uint64_t hits() const { return hits_; }
    std::uint64_t misses() const { return misses_; }
    std::size_t corrupt_lines() const { return corrupt_lines_; }
    std::size_t entries() const { return map_.size(); }

protected:
    TeacherRanking do_rank(const TeacherRequest& req) override {
        const std::string key = cache_key(req.persona_id, req.candidate_ids);
        {
            std::lock_guard lock(mu_);
            auto it = map_.find(key);
            // Key semantics are (teacher, persona, candidate set): entries
            // recorded by a different teacher do not satisfy a lookup.
            if (it != map_.end() && (!inner_ || it->second.teacher_id == inner_->id())) {
                ++hits_;
                return reindex(it->second, req);
            }
        }
        if (!inner_)
            throw TeacherUnavailable("replay miss for persona '" + req.persona_id + "'");
        const TeacherRanking fresh = inner_->rank(req);
        std::lock_guard lock(mu_);
        auto it = map_.find(key);
        if (it != map_.end() && it->second.teacher_id == inner_->id()) {
            // Another thread filled it first; keep the recorded entry.
            ++hits_;
            return reindex(it->second, req);
        }
        ++misses_;
        Entry entry{req.candidate_ids, fresh.ranking, fresh.teacher_id};
        RankedGroup line{req.persona_id, req.candidate_ids, fresh.ranking,
                         fresh.teacher_id, req.step};
        out_ << group_to_json(line).dump() << "\n";
        out_.flush();
        map_.insert_or_assign(key, std::move(entry));
        return fresh;
    }

private:
    struct Entry {
        std::vector<std::string> candidate_ids;
        std::vector<int> ranking;
        std::string teacher_id;
    };

    static std::string cache_key(const std::string& persona_id,
                                 std::vector<std::string> ids) {
        std::sort(ids.begin(), ids.end());
        std::string key = persona_id;
        for (const auto& id : ids) {
            key.push_back('\x1f');
            key += id;
        }
        return key;
    }

    TeacherRanking reindex(const Entry& entry, const TeacherRequest& req) const {
        std::unordered_map<std::string, int> rank_of;
        rank_of.reserve(entry.candidate_ids.size());
        for (std::size_t i = 0; i < entry.candidate_ids.size(); ++i)
            rank_of[entry.candidate_ids[i]] = entry.ranking[i];
        TeacherRanking out;
        out.teacher_id = entry.teacher_id;
        out.ranking.reserve(req.candidate_ids.size());
        for (const auto& id : req.candidate_ids) out.ranking.push_back(rank_of.at(id));
        return out;
    }

    void load_existing() {
        std::ifstream in(cache_path_);
        if (!in) return;  // fresh cache
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            try {
                RankedGroup g = group_from_json(nlohmann::json::parse(line));
                map_[cache_key(g.persona_id, g.candidate_ids)] =
                    Entry{g.candidate_ids, g.ranking, g.teacher};
            } catch (const std::exception& e) {
                ++corrupt_lines_;
                std::cerr << "warning: skipping corrupt cache line " << lineno
                          << " in " << cache_path_ << ": " << e.what() << "\n";
            }
        }
    }

    std::shared_ptr<Teacher> inner_;
    std::string cache_path_;
    std::mutex mu_;
    std::unordered_map<std::string, Entry> map_;
    std::ofstream out_;
    std::uint64_t hits_ = 0;
    std::uint64_t misses_ = 0;
    std::size_t corrupt_lines_ = 0;
};

}  // namespace prefdistill
