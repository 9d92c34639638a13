// Copyright (c) 2026 prefdistill contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "prefdistill/errors.hpp"
#include "prefdistill/rng.hpp"

namespace prefdistill {

using Vec = std::vector<double>;

// Raw norms below this are rejected; optimizer steps clamp to it.
inline constexpr double kZeroNormThreshold = 1e-8;
inline constexpr double kUnitTolerance = 1e-6;

// Sequential left-to-right sum. Tests assert exact equality against a
// scalar loop, so the summation order is part of the contract.
inline double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw DimensionMismatch("dot: " + std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()));
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

inline Vec normalize(std::span<const double> v) {
    const double n = norm(v);
    if (n < kZeroNormThreshold)
        throw ZeroVector("norm " + std::to_string(n) + " below threshold");
    Vec out(v.begin(), v.end());
    const double inv = 1.0 / n;
    for (auto& x : out) x *= inv;
    return out;
}

// Relevance score of a persona/image pair: dot product of unit vectors.
inline double score(std::span<const double> persona, std::span<const double> image) {
    return dot(persona, image);
}

// Frozen text-side record. The embedding is normalized at load and never
// receives gradient.
struct PersonaRecord {
    std::string id;
    std::string text;
    Vec embedding;
};

class PersonaSet {
public:
    void add(PersonaRecord rec) {
        auto [it, fresh] = index_.emplace(rec.id, records_.size());
        if (!fresh) throw DuplicateId("persona '" + rec.id + "'");
        records_.push_back(std::move(rec));
    }

    bool contains(const std::string& id) const { return index_.count(id) != 0; }

    const PersonaRecord& by_id(const std::string& id) const {
        auto it = index_.find(id);
        if (it == index_.end()) throw UnknownId("persona '" + id + "'");
        return records_[it->second];
    }

    const PersonaRecord& at(std::size_t i) const { return records_.at(i); }
    std::size_t size() const { return records_.size(); }
    bool empty() const { return records_.empty(); }
    auto begin() const { return records_.begin(); }
    auto end() const { return records_.end(); }

private:
    std::vector<PersonaRecord> records_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Scores of one persona against the whole catalog, aligned with the
// store's canonical row order.
struct ScoreVector {
    std::string persona_id;
    std::vector<double> scores;
};

// The student model: one trainable raw vector per catalog image plus a
// cached row-normalized view. Raw rows are kept at f32 precision (stored
// in doubles) so the binary checkpoint format round-trips losslessly and
// resumed runs are bit-identical to uninterrupted ones.
//
// Concurrency: many concurrent readers of the normalized view OR one
// writer mutating raw rows; instances are freely movable across threads.
class CatalogStore {
public:
    CatalogStore() = default;

    CatalogStore(std::vector<std::string> ids, std::size_t dim, std::vector<double> raw)
        : dim_(dim), ids_(std::move(ids)), raw_(std::move(raw)) {
        if (dim_ < 2) throw DimensionMismatch("dim must be >= 2");
        if (raw_.size() != ids_.size() * dim_)
            throw ShapeMismatch("raw size " + std::to_string(raw_.size()) +
                                " != count*dim " + std::to_string(ids_.size() * dim_));
        build_index();
        quantize_all();
        normalized_.assign(raw_.size(), 0.0);
        dirty_.assign(ids_.size(), 1);
        refresh();
    }

    static CatalogStore random_unit(std::vector<std::string> ids, std::size_t dim,
                                    std::uint64_t seed) {
        std::vector<double> raw(ids.size() * dim);
        for (std::size_t i = 0; i < ids.size(); ++i) {
            Rng rng(substream_seed(seed, "catalog-init", fnv1a64(ids[i])));
            const Vec v = rng.unit_vector(dim);
            std::copy(v.begin(), v.end(), raw.begin() + i * dim);
        }
        return CatalogStore(std::move(ids), dim, std::move(raw));
    }

    std::size_t size() const { return ids_.size(); }
    std::size_t dim() const { return dim_; }
    const std::vector<std::string>& ids() const { return ids_; }
    const std::string& id(std::size_t row) const { return ids_.at(row); }

    std::uint32_t row_index(const std::string& id) const {
        auto it = index_.find(id);
        if (it == index_.end()) throw UnknownId("image '" + id + "'");
        return it->second;
    }

    bool contains(const std::string& id) const { return index_.count(id) != 0; }

    std::span<const double> raw_row(std::size_t row) const {
        return {raw_.data() + row * dim_, dim_};
    }

    std::span<const double> normalized_row(std::size_t row) const {
        if (dirty_[row]) throw StaleCache("row " + std::to_string(row) + " is dirty");
        return {normalized_.data() + row * dim_, dim_};
    }

    void set_raw_row(std::size_t row, std::span<const double> values) {
        if (values.size() != dim_) throw ShapeMismatch("row width != dim");
        if (norm(values) < kZeroNormThreshold)
            throw ZeroVector("row " + std::to_string(row));
        double* dst = raw_.data() + row * dim_;
        for (std::size_t d = 0; d < dim_; ++d)
            dst[d] = static_cast<double>(static_cast<float>(values[d]));
        dirty_[row] = 1;
    }

    bool fresh() const {
        for (auto f : dirty_)
            if (f) return false;
        return true;
    }

    void refresh() {
        for (std::size_t i = 0; i < ids_.size(); ++i)
            if (dirty_[i]) refresh_row(i);
    }

    void refresh_row(std::size_t row) {
        const double* src = raw_.data() + row * dim_;
        const double n = norm({src, dim_});
        if (n < kZeroNormThreshold) throw ZeroVector("row " + std::to_string(row));
        const double inv = 1.0 / n;
        double* dst = normalized_.data() + row * dim_;
        for (std::size_t d = 0; d < dim_; ++d) dst[d] = src[d] * inv;
        dirty_[row] = 0;
    }

    ScoreVector score_all(const PersonaRecord& persona) const {
        if (ids_.empty()) throw EmptyCatalog("score_all");
        if (persona.embedding.size() != dim_)
            throw DimensionMismatch("persona dim " +
                                    std::to_string(persona.embedding.size()) +
                                    " vs store dim " + std::to_string(dim_));
        if (!fresh()) throw StaleCache("score_all requires a refreshed store");
        ScoreVector out;
        out.persona_id = persona.id;
        out.scores.resize(ids_.size());
        for (std::size_t i = 0; i < ids_.size(); ++i)
            out.scores[i] = dot(persona.embedding, normalized_row(i));
        return out;
    }

private:
    void build_index() {
        index_.reserve(ids_.size());
        for (std::uint32_t i = 0; i < ids_.size(); ++i) {
            auto [it, fresh] = index_.emplace(ids_[i], i);
            if (!fresh) throw DuplicateId("image '" + ids_[i] + "'");
        }
    }

    void quantize_all() {
        for (auto& x : raw_) x = static_cast<double>(static_cast<float>(x));
        for (std::size_t i = 0; i < ids_.size(); ++i)
            if (norm({raw_.data() + i * dim_, dim_}) < kZeroNormThreshold)
                throw ZeroVector("row " + std::to_string(i));
    }

    std::size_t dim_ = 0;
    std::vector<std::string> ids_;
    std::unordered_map<std::string, std::uint32_t> index_;
    std::vector<double> raw_;
    std::vector<double> normalized_;
    std::vector<std::uint8_t> dirty_;
};

}  // namespace prefdistill
