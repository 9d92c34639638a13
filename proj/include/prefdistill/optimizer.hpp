// Copyright (c) 2026 prefdistill contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "prefdistill/bt_loss.hpp"
#include "prefdistill/embedding.hpp"
#include "prefdistill/errors.hpp"
#include "prefdistill/io.hpp"

namespace prefdistill {

struct AdamWConfig {
    double lr0 = 1e-6;
    double decay = 0.95;  // multiplicative, per optimizer step
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    int accumulation_steps = 10;
    int micro_batch = 50;  // ranked groups per accumulation contribution

    void validate() const {
        if (!(decay > 0.0 && decay <= 1.0)) throw ConfigError("optimizer.decay out of (0,1]");
        if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("optimizer.beta1 out of [0,1)");
        if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("optimizer.beta2 out of [0,1)");
        if (!(lr0 > 0.0)) throw ConfigError("optimizer.lr0 must be positive");
        if (eps <= 0.0) throw ConfigError("optimizer.eps must be positive");
        if (weight_decay < 0.0) throw ConfigError("optimizer.weight_decay must be >= 0");
        if (accumulation_steps < 1) throw ConfigError("optimizer.accumulation_steps must be >= 1");
        if (micro_batch < 1) throw ConfigError("optimizer.micro_batch must be >= 1");
    }
};

// lr after t completed optimizer steps.
inline double lr_at(const AdamWConfig& cfg, std::uint64_t t) {
    return cfg.lr0 * std::pow(cfg.decay, static_cast<double>(t));
}

// AdamW with sparse per-row moments: a row's moments update only when the
// row receives gradient in a step, and weight decay applies to the same
// rows. Moment rows with all-zero m and v behave identically to absent
// rows, which keeps checkpoint load/save lossless.
class AdamWState {
public:
    explicit AdamWState(std::size_t dim) : dim_(dim) {}

    std::uint64_t step_count() const { return t_; }
    int micro_steps() const { return micro_; }
    std::size_t dim() const { return dim_; }

    // buffer += gradient contribution; one micro-step.
    void accumulate(const BatchGradient& contribution) {
        if (contribution.dim != dim_)
            throw ShapeMismatch("gradient dim " + std::to_string(contribution.dim) +
                                " vs state dim " + std::to_string(dim_));
        for (const auto& [row, g] : contribution.grad) {
            if (g.size() != dim_) throw ShapeMismatch("gradient row width");
            auto [it, fresh] = buffer_.try_emplace(row, dim_, 0.0);
            Vec& acc = it->second;
            for (std::size_t d = 0; d < dim_; ++d) acc[d] += g[d];
        }
        ++micro_;
    }

    // Standard bias-corrected AdamW update of the buffered rows at
    // lr_at(t), decoupled weight decay on the raw parameters. Parameters
    // and moments are re-quantized to f32 so the PDS1/PDE1 checkpoint
    // formats capture the state exactly.
    void apply_step(CatalogStore& store, const AdamWConfig& cfg, bool flush = false) {
        if (micro_ != cfg.accumulation_steps && !(flush && micro_ > 0))
            throw PrematureStep(std::to_string(micro_) + " of " +
                                std::to_string(cfg.accumulation_steps) +
                                " accumulation steps");
        const double lr = lr_at(cfg, t_);
        const double tb = static_cast<double>(t_ + 1);
        const double bc1 = 1.0 - std::pow(cfg.beta1, tb);
        const double bc2 = 1.0 - std::pow(cfg.beta2, tb);

        std::vector<std::uint32_t> rows;
        rows.reserve(buffer_.size());
        for (const auto& [row, g] : buffer_) rows.push_back(row);
        std::sort(rows.begin(), rows.end());

        Vec updated(dim_);
        for (const std::uint32_t row : rows) {
            const Vec& g = buffer_.at(row);
            auto [it, fresh] = moments_.try_emplace(row, dim_);
            MomentRow& mr = it->second;
            const auto raw = store.raw_row(row);
            for (std::size_t d = 0; d < dim_; ++d) {
                double m = cfg.beta1 * mr.m[d] + (1.0 - cfg.beta1) * g[d];
                double v = cfg.beta2 * mr.v[d] + (1.0 - cfg.beta2) * g[d] * g[d];
                m = static_cast<double>(static_cast<float>(m));
                v = static_cast<double>(static_cast<float>(v));
                mr.m[d] = m;
                mr.v[d] = v;
                const double mhat = m / bc1;
                const double vhat = v / bc2;
                updated[d] = raw[d] - lr * (mhat / (std::sqrt(vhat) + cfg.eps) +
                                            cfg.weight_decay * raw[d]);
            }
            clamp_away_from_zero(updated, raw);
            store.set_raw_row(row, updated);
        }
        buffer_.clear();
        micro_ = 0;
        ++t_;
        store.refresh();
    }

    // Checkpoint: magic "PDS1", u32 count, u32 dim, count*dim f32 m,
    // count*dim f32 v, u64 t. Dense over the catalog; absent rows are
    // written as zeros. Only valid at step boundaries (empty buffer).
    void save(const std::string& path, std::size_t catalog_size) const {
        if (micro_ != 0 || !buffer_.empty())
            throw PrematureStep("optimizer state saved mid-accumulation");
        std::string buf;
        buf.reserve(16 + catalog_size * dim_ * 8);
        buf.append("PDS1", 4);
        detail::append_u32(buf, static_cast<std::uint32_t>(catalog_size));
        detail::append_u32(buf, static_cast<std::uint32_t>(dim_));
        write_matrix(buf, catalog_size, /*second=*/false);
        write_matrix(buf, catalog_size, /*second=*/true);
        detail::append_u64(buf, t_);
        detail::write_file(path, buf);
    }

    static AdamWState load(const std::string& path, std::size_t catalog_size,
                           std::size_t dim) {
        const std::string bytes = detail::read_file(path);
        detail::Reader r(bytes, path);
        r.expect_magic("PDS1");
        const std::uint32_t count = r.u32();
        const std::uint32_t d = r.u32();
        if (count != catalog_size || d != dim)
            throw DimensionMismatch("optimizer state shape " + std::to_string(count) +
                                    "x" + std::to_string(d) + " vs catalog " +
                                    std::to_string(catalog_size) + "x" +
                                    std::to_string(dim));
        const auto m = r.f32_block(static_cast<std::size_t>(count) * d);
        const auto v = r.f32_block(static_cast<std::size_t>(count) * d);
        AdamWState state(dim);
        state.t_ = r.u64();
        r.expect_end();
        for (std::uint32_t row = 0; row < count; ++row) {
            bool any = false;
            for (std::uint32_t k = 0; k < d; ++k)
                if (m[row * d + k] != 0.0f || v[row * d + k] != 0.0f) {
                    any = true;
                    break;
                }
            if (!any) continue;
            MomentRow mr(dim);
            for (std::uint32_t k = 0; k < d; ++k) {
                mr.m[k] = static_cast<double>(m[row * d + k]);
                mr.v[k] = static_cast<double>(v[row * d + k]);
            }
            state.moments_.emplace(row, std::move(mr));
        }
        return state;
    }

    // Drops a partial accumulation (end of training, no flush wanted).
    void discard_accumulation() {
        buffer_.clear();
        micro_ = 0;
    }

    bool has_moments(std::uint32_t row) const { return moments_.count(row) != 0; }
    std::size_t moment_rows() const { return moments_.size(); }
    const Vec* buffered(std::uint32_t row) const {
        auto it = buffer_.find(row);
        return it == buffer_.end() ? nullptr : &it->second;
    }

private:
    struct MomentRow {
        explicit MomentRow(std::size_t dim) : m(dim, 0.0), v(dim, 0.0) {}
        Vec m, v;
    };

    // A step that would drive a raw row under the zero-norm threshold is
    // clamped to the threshold along the same direction.
    static void clamp_away_from_zero(Vec& updated, std::span<const double> prev) {
        const double n = norm(updated);
        if (n >= kZeroNormThreshold) return;
        if (n > 0.0) {
            const double scale = kZeroNormThreshold / n;
            for (auto& x : updated) x *= scale;
        } else {
            const double pn = norm(prev);
            const double scale = kZeroNormThreshold / pn;
            for (std::size_t d = 0; d < updated.size(); ++d) updated[d] = prev[d] * scale;
        }
    }

    void write_matrix(std::string& buf, std::size_t catalog_size, bool second) const {
        for (std::uint32_t row = 0; row < catalog_size; ++row) {
            auto it = moments_.find(row);
            for (std::size_t d = 0; d < dim_; ++d) {
                const double x =
                    it == moments_.end() ? 0.0 : (second ? it->second.v[d] : it->second.m[d]);
                detail::append_f32(buf, static_cast<float>(x));
            }
        }
    }

    std::size_t dim_;
    std::unordered_map<std::uint32_t, MomentRow> moments_;
    std::unordered_map<std::uint32_t, Vec> buffer_;
    int micro_ = 0;
    std::uint64_t t_ = 0;
};

// Maximizing early stop: resets on strict improvement, stops after
// `patience` consecutive non-improving evaluations past the best.
class EarlyStopper {
public:
    enum class Decision { Continue, Stop };

    explicit EarlyStopper(int patience = 5) : patience_(patience) {}

    Decision update(double metric, std::uint64_t step) {
        if (metric > best_) {
            best_ = metric;
            best_step_ = step;
            since_best_ = 0;
            return Decision::Continue;
        }
        ++since_best_;
        return since_best_ >= patience_ ? Decision::Stop : Decision::Continue;
    }

    double best() const { return best_; }
    std::uint64_t best_step() const { return best_step_; }
    int steps_since_best() const { return since_best_; }
    bool has_baseline() const { return best_ > -std::numeric_limits<double>::infinity(); }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["patience"] = patience_;
        j["best_metric"] = has_baseline() ? nlohmann::json(best_) : nlohmann::json();
        j["best_step"] = best_step_;
        j["steps_since_best"] = since_best_;
        return j;
    }

    static EarlyStopper from_json(const nlohmann::json& j) {
        EarlyStopper s(j.at("patience").get<int>());
        if (!j.at("best_metric").is_null()) s.best_ = j.at("best_metric").get<double>();
        s.best_step_ = j.at("best_step").get<std::uint64_t>();
        s.since_best_ = j.at("steps_since_best").get<int>();
        return s;
    }

private:
    int patience_;
    double best_ = -std::numeric_limits<double>::infinity();
    std::uint64_t best_step_ = 0;
    int since_best_ = 0;
};

}  // namespace prefdistill
