// Copyright (c) 2026 prefdistill contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "prefdistill/bt_loss.hpp"
#include "prefdistill/config.hpp"
#include "prefdistill/embedding.hpp"
#include "prefdistill/errors.hpp"
#include "prefdistill/evalmetrics.hpp"
#include "prefdistill/http_teacher.hpp"
#include "prefdistill/io.hpp"
#include "prefdistill/optimizer.hpp"
#include "prefdistill/sampler.hpp"
#include "prefdistill/teacher.hpp"
#include "prefdistill/tournament.hpp"

namespace prefdistill {

namespace files {
inline constexpr const char* kEmbeddings = "embeddings.pde";
inline constexpr const char* kOptimizer = "optimizer.pds";
inline constexpr const char* kTrainState = "train_state.json";
inline constexpr const char* kTeacherCache = "teacher_cache.jsonl";
inline constexpr const char* kRunLog = "runlog.jsonl";
inline constexpr const char* kResumableMarker = "RESUMABLE";
}  // namespace files

struct TrainResult {
    std::uint64_t opt_steps = 0;
    std::uint64_t sample_steps = 0;
    double init_metric = 0.0;
    double best_metric = 0.0;
    std::uint64_t best_step = 0;
    double final_metric = 0.0;
    bool early_stopped = false;
    std::uint64_t teacher_calls = 0;
    std::uint64_t cache_hits = 0;
    std::string best_dir;
    std::string last_dir;
};

// Runs the training loop of the preference-distillation pipeline:
// sample candidate groups against the current student, rank them with
// the (cached) teacher, accumulate Bradley-Terry gradients in
// micro-batches, and step AdamW with per-step validation and early
// stopping. Checkpoints land at sampling-round boundaries; a killed run
// resumed from `last/` replays the interrupted round from its recorded
// rng substream and teacher cache, reproducing the uninterrupted run
// bit for bit.
class Trainer {
public:
    explicit Trainer(RunConfig cfg) : cfg_(std::move(cfg)) {}

    const RunConfig& config() const { return cfg_; }

    CatalogStore init_store() const {
        if (cfg_.catalog.init == "import") {
            if (cfg_.catalog.embeddings.empty())
                throw ConfigError("catalog.embeddings required for init=import");
            return load_embeddings(cfg_.catalog.embeddings);
        }
        std::vector<std::string> ids;
        if (!cfg_.catalog.ids.empty()) {
            std::ifstream in(cfg_.catalog.ids);
            if (!in) throw ConfigError("cannot open catalog.ids '" + cfg_.catalog.ids + "'");
            std::string line;
            while (std::getline(in, line))
                if (!line.empty()) ids.push_back(line);
        } else if (cfg_.catalog.count > 0) {
            ids.reserve(cfg_.catalog.count);
            char buf[32];
            for (std::size_t i = 0; i < cfg_.catalog.count; ++i) {
                std::snprintf(buf, sizeof buf, "img_%06zu", i);
                ids.emplace_back(buf);
            }
        } else {
            throw ConfigError("random-unit init needs catalog.ids or catalog.count");
        }
        return CatalogStore::random_unit(std::move(ids), cfg_.catalog.dim, cfg_.seed);
    }

    std::shared_ptr<Teacher> make_base_teacher() const {
        switch (cfg_.teacher.kind) {
            case TeacherConfig::Kind::Synthetic:
                return std::make_shared<SyntheticTeacher>(cfg_.teacher.synthetic);
            case TeacherConfig::Kind::Replay:
                return nullptr;  // cache-only
            case TeacherConfig::Kind::Http:
                return std::make_shared<HttpTeacher>(cfg_.teacher.http);
        }
        throw ConfigError("unreachable teacher kind");
    }

    std::shared_ptr<CachingTeacher> make_teacher() const {
        const std::string cache_path =
            cfg_.teacher.kind == TeacherConfig::Kind::Replay
                ? cfg_.teacher.replay_log
                : (out_path(files::kTeacherCache));
        return std::make_shared<CachingTeacher>(make_base_teacher(), cache_path);
    }

    // Config sanity plus the per-step sampling/teacher budget, with no
    // side effects and no teacher contact.
    nlohmann::json dry_run_budget() const {
        require_train_config();
        const int groups = cfg_.sampler.groups_per_step;
        const int micro = cfg_.optimizer.micro_batch;
        const int accum = cfg_.optimizer.accumulation_steps;
        const int micro_batches = (groups + micro - 1) / micro;
        int opt_steps = micro_batches / accum;
        if (cfg_.training.flush_partial && micro_batches % accum != 0) ++opt_steps;

        nlohmann::json j;
        j["groups_per_step"] = groups;
        j["group_size"] = cfg_.sampler.group_size;
        j["teacher_calls_per_step"] = groups;
        j["micro_batches_per_step"] = micro_batches;
        j["optimizer_steps_per_sampling_step"] = opt_steps;
        j["max_optimizer_steps"] = cfg_.training.max_steps;
        j["policy"] = cfg_.sampler.policy == SamplerConfig::Policy::Uniform
                          ? "uniform"
                          : "preference-aligned";
        const std::string val_labels = val_label_path();
        j["val_labels_present"] = std::filesystem::exists(val_labels);
        return j;
    }

    TrainResult train(bool resume = false) {
        require_train_config();
        namespace fs = std::filesystem;
        fs::create_directories(cfg_.output_dir);

        CatalogStore store = init_store();
        const PersonaSet train_personas =
            load_personas(cfg_.personas.train, store.dim(), cfg_.seed);
        const PersonaSet val_personas =
            load_personas(cfg_.personas.val, store.dim(), cfg_.seed);
        if (train_personas.empty()) throw ConfigError("empty training persona pool");
        if (val_personas.empty()) throw ConfigError("empty validation persona pool");

        auto teacher = make_teacher();
        const std::vector<TournamentLabel> val_labels =
            ensure_val_labels(val_personas, store, *teacher);

        AdamWState state(store.dim());
        EarlyStopper stopper(cfg_.training.patience);
        std::uint64_t opt_step = 0, sample_round = 0, teacher_calls = 0;
        double init_metric = 0.0;
        bool stopped = false;

        const std::string last_dir = out_path("last");
        const std::string best_dir = out_path("best");

        if (resume) {
            if (!fs::exists(fs::path(last_dir) / files::kTrainState))
                throw ConfigError("--resume: no checkpoint under " + last_dir);
            store = load_embeddings((fs::path(last_dir) / files::kEmbeddings).string());
            state = AdamWState::load((fs::path(last_dir) / files::kOptimizer).string(),
                                     store.size(), store.dim());
            const nlohmann::json ts = nlohmann::json::parse(
                detail::read_file((fs::path(last_dir) / files::kTrainState).string()));
            if (ts.at("seed").get<std::uint64_t>() != cfg_.seed)
                throw ConfigError("--resume: checkpoint seed differs from config seed");
            opt_step = ts.at("opt_step").get<std::uint64_t>();
            sample_round = ts.at("sample_step").get<std::uint64_t>();
            teacher_calls = ts.at("teacher_calls").get<std::uint64_t>();
            init_metric = ts.at("init_metric").get<double>();
            stopped = ts.at("stopped").get<bool>();
            stopper = EarlyStopper::from_json(ts.at("early_stop"));
            if (state.step_count() != opt_step)
                throw Error("optimizer state step mismatch against train_state");
            truncate_runlog(opt_step);
        } else {
            init_metric = mean_percentile(val_labels, store, val_personas).mean;
            stopper.update(init_metric, 0);
            save_checkpoint(best_dir, store, state, opt_step, sample_round,
                            teacher_calls, init_metric, stopper, stopped);
        }

        std::ofstream runlog(out_path(files::kRunLog), std::ios::app);
        if (!runlog) throw IoError("cannot open run log");

        const auto id_refs = load_refs();
        double round_loss = 0.0;
        double last_val_metric = init_metric;

        const auto finish_opt_step = [&](bool flush) {
            const double lr_used = lr_at(cfg_.optimizer, state.step_count());
            const auto t0 = std::chrono::steady_clock::now();
            state.apply_step(store, cfg_.optimizer, flush);
            opt_step = state.step_count();

            std::optional<double> val;
            if (opt_step % static_cast<std::uint64_t>(cfg_.training.eval_cadence) == 0) {
                const double metric =
                    mean_percentile(val_labels, store, val_personas).mean;
                val = metric;
                last_val_metric = metric;
                const auto decision = stopper.update(metric, opt_step);
                if (stopper.steps_since_best() == 0 && stopper.best_step() == opt_step)
                    save_checkpoint(best_dir, store, state, opt_step, sample_round,
                                    teacher_calls, init_metric, stopper, stopped);
                if (decision == EarlyStopper::Decision::Stop) stopped = true;
            }
            const auto wall = std::chrono::duration_cast<std::chrono::milliseconds>(
                                  std::chrono::steady_clock::now() - t0)
                                  .count();
            nlohmann::json rec;
            rec["step"] = opt_step;
            rec["loss"] = round_loss;
            rec["lr"] = lr_used;
            rec["teacher_calls"] = teacher_calls;
            rec["cache_hits"] = teacher->hits();
            rec["val_metric"] = val ? nlohmann::json(*val) : nlohmann::json();
            rec["wall_ms"] = wall;
            runlog << rec.dump() << "\n";
            runlog.flush();
            round_loss = 0.0;
        };

        try {
            while (!stopped && opt_step < cfg_.training.max_steps) {
                // One sampling round; all its randomness derives from
                // (seed, "sample", round index) so rounds replay exactly.
                Rng rng(substream_seed(cfg_.seed, "sample", sample_round));
                const std::vector<GroupDraw> draws =
                    sample_step(train_personas, store, cfg_.sampler, rng);

                std::vector<RankedGroup> ranked;
                ranked.reserve(draws.size());
                for (const auto& draw : draws) {
                    TeacherRequest req;
                    req.persona_id = draw.persona_id;
                    req.persona_text = train_personas.by_id(draw.persona_id).text;
                    req.candidate_ids = draw.candidate_ids;
                    req.step = static_cast<std::int64_t>(sample_round);
                    if (!id_refs.empty()) {
                        req.payload_refs.reserve(req.candidate_ids.size());
                        for (const auto& id : req.candidate_ids) {
                            auto it = id_refs.find(id);
                            req.payload_refs.push_back(it == id_refs.end() ? id
                                                                           : it->second);
                        }
                    }
                    const TeacherRanking ranking = teacher->rank(req);
                    ++teacher_calls;
                    ranked.push_back(RankedGroup{draw.persona_id, draw.candidate_ids,
                                                 ranking.ranking, ranking.teacher_id,
                                                 static_cast<std::int64_t>(sample_round)});
                }

                const std::size_t micro =
                    static_cast<std::size_t>(cfg_.optimizer.micro_batch);
                for (std::size_t off = 0;
                     off < ranked.size() && !stopped && opt_step < cfg_.training.max_steps;
                     off += micro) {
                    const std::size_t len = std::min(micro, ranked.size() - off);
                    const std::vector<RankedGroup> chunk(
                        ranked.begin() + static_cast<std::ptrdiff_t>(off),
                        ranked.begin() + static_cast<std::ptrdiff_t>(off + len));
                    const BatchGradient bg =
                        batch_loss_grad(chunk, train_personas, store);
                    state.accumulate(bg);
                    round_loss += bg.loss;
                    if (state.micro_steps() == cfg_.optimizer.accumulation_steps)
                        finish_opt_step(false);
                }
                if (!stopped && opt_step < cfg_.training.max_steps &&
                    state.micro_steps() > 0 && cfg_.training.flush_partial)
                    finish_opt_step(true);
                state.discard_accumulation();

                ++sample_round;
                save_checkpoint(last_dir, store, state, opt_step, sample_round,
                                teacher_calls, init_metric, stopper, stopped);
            }
        } catch (const std::exception& e) {
            // State from the last completed round is already on disk;
            // leave a marker so callers know --resume will pick it up.
            detail::write_file(out_path(files::kResumableMarker),
                               std::string(e.what()) + "\n");
            throw;
        }
        std::error_code ec;
        std::filesystem::remove(out_path(files::kResumableMarker), ec);

        TrainResult result;
        result.opt_steps = opt_step;
        result.sample_steps = sample_round;
        result.init_metric = init_metric;
        result.best_metric = stopper.best();
        result.best_step = stopper.best_step();
        result.final_metric = last_val_metric;
        result.early_stopped = stopped;
        result.teacher_calls = teacher_calls;
        result.cache_hits = teacher->hits();
        result.best_dir = best_dir;
        result.last_dir = last_dir;
        return result;
    }

    std::vector<TournamentLabel> run_label() {
        namespace fs = std::filesystem;
        fs::create_directories(cfg_.output_dir);
        const std::string split = cfg_.label.split;
        CatalogStore store = init_store();
        const PersonaSet personas =
            load_personas(cfg_.persona_path(split), store.dim(), cfg_.seed);
        auto teacher = make_teacher();

        std::vector<std::string> entrants = store.ids();
        if (cfg_.label.entrants > 0 && cfg_.label.entrants < entrants.size()) {
            Rng rng(substream_seed(cfg_.seed, "label-entrants"));
            rng.shuffle(entrants);
            entrants.resize(cfg_.label.entrants);
        }
        if (entrants.size() < 2) throw ConfigError("label needs at least 2 entrants");

        LabelSetOptions opts;
        opts.master_seed = cfg_.seed;
        opts.shuffle_brackets = cfg_.label.shuffle;
        opts.parallelism = cfg_.label.parallelism;
        const std::string path = label_out_path(split);
        if (cfg_.label.bracket_log) opts.bracket_log_path = path + ".bracket.jsonl";
        return label_set(personas, entrants, *teacher, path, opts);
    }

    MetricReport run_eval(const std::string& checkpoint_dir = "") {
        namespace fs = std::filesystem;
        const std::string split = cfg_.eval.split;
        CatalogStore store = load_checkpoint_store(checkpoint_dir);
        const PersonaSet personas =
            load_personas(cfg_.persona_path(split), store.dim(), cfg_.seed);
        const std::string lpath = label_out_path(split);
        if (!fs::exists(lpath))
            throw ConfigError("label file '" + lpath + "' not found; run label first");
        std::vector<TournamentLabel> labels;
        for (auto& label : load_labels(lpath))
            if (personas.contains(label.persona_id)) labels.push_back(std::move(label));
        if (labels.empty()) throw ConfigError("no labels match the " + split + " personas");
        MetricReport report = mean_percentile(labels, store, personas);
        if (!cfg_.output_dir.empty()) {
            fs::create_directories(cfg_.output_dir);
            save_report(report, out_path("report_" + split + ".json"));
        }
        return report;
    }

    RetrievalResult run_retrieve(const std::string& persona_key, std::size_t k = 0,
                                 const std::string& checkpoint_dir = "") {
        CatalogStore store = load_checkpoint_store(checkpoint_dir);
        const PersonaRecord persona = resolve_persona(persona_key, store.dim());
        const ScoreVector scores = store.score_all(persona);
        return top_k(scores, store, k == 0 ? cfg_.retrieval.k : k);
    }

    std::string out_path(const std::string& name) const {
        return (std::filesystem::path(cfg_.output_dir) / name).string();
    }

    std::string val_label_path() const {
        return cfg_.labels.val.empty() ? out_path("val_labels.jsonl") : cfg_.labels.val;
    }

    std::string label_out_path(const std::string& split) const {
        const std::string& configured = split == "val" ? cfg_.labels.val : cfg_.labels.test;
        return configured.empty() ? out_path(split + "_labels.jsonl") : configured;
    }

private:
    void require_train_config() const {
        if (cfg_.output_dir.empty()) throw ConfigError("output_dir is required");
        if (cfg_.personas.train.empty()) throw ConfigError("personas.train is required");
        if (cfg_.personas.val.empty()) throw ConfigError("personas.val is required");
    }

    std::unordered_map<std::string, std::string> load_refs() const {
        std::unordered_map<std::string, std::string> refs;
        if (cfg_.catalog.refs.empty()) return refs;
        const nlohmann::json j =
            nlohmann::json::parse(detail::read_file(cfg_.catalog.refs));
        for (const auto& [key, value] : j.items()) refs[key] = value.get<std::string>();
        return refs;
    }

    std::vector<TournamentLabel> ensure_val_labels(const PersonaSet& val_personas,
                                                   const CatalogStore& store,
                                                   Teacher& teacher) const {
        const std::string path = val_label_path();
        std::vector<TournamentLabel> labels;
        if (std::filesystem::exists(path)) {
            for (auto& label : load_labels(path))
                if (val_personas.contains(label.persona_id))
                    labels.push_back(std::move(label));
        } else {
            std::cerr << "note: generating validation tournament labels at " << path
                      << "\n";
            LabelSetOptions opts;
            opts.master_seed = cfg_.seed;
            labels = label_set(val_personas, store.ids(), teacher, path, opts);
        }
        for (const auto& persona : val_personas) {
            bool found = false;
            for (const auto& label : labels)
                if (label.persona_id == persona.id) {
                    found = true;
                    break;
                }
            if (!found)
                throw ConfigError("no validation label for persona '" + persona.id + "'");
        }
        return labels;
    }

    CatalogStore load_checkpoint_store(const std::string& checkpoint_dir) const {
        namespace fs = std::filesystem;
        std::string dir = checkpoint_dir;
        if (dir.empty()) {
            const std::string best = out_path("best");
            const std::string last = out_path("last");
            if (fs::exists(fs::path(best) / files::kEmbeddings))
                dir = best;
            else if (fs::exists(fs::path(last) / files::kEmbeddings))
                dir = last;
        }
        if (dir.empty()) return init_store();
        return load_embeddings((fs::path(dir) / files::kEmbeddings).string());
    }

    PersonaRecord resolve_persona(const std::string& key, std::size_t dim) const {
        std::vector<PersonaRecord> text_matches;
        for (const std::string* path :
             {&cfg_.personas.val, &cfg_.personas.test, &cfg_.personas.train}) {
            if (path->empty() || !std::filesystem::exists(*path)) continue;
            const PersonaSet set = load_personas(*path, dim, cfg_.seed);
            if (set.contains(key)) return set.by_id(key);
            for (const auto& rec : set)
                if (rec.text == key) text_matches.push_back(rec);
        }
        if (!text_matches.empty()) return text_matches.front();
        throw UnknownId("persona '" + key + "' not found in configured persona files");
    }

    void save_checkpoint(const std::string& dir, const CatalogStore& store,
                         const AdamWState& state, std::uint64_t opt_step,
                         std::uint64_t sample_step, std::uint64_t teacher_calls,
                         double init_metric, const EarlyStopper& stopper,
                         bool stopped) const {
        namespace fs = std::filesystem;
        fs::create_directories(dir);
        save_embeddings(store, (fs::path(dir) / files::kEmbeddings).string());
        state.save((fs::path(dir) / files::kOptimizer).string(), store.size());
        nlohmann::json ts;
        ts["seed"] = cfg_.seed;
        ts["opt_step"] = opt_step;
        ts["sample_step"] = sample_step;
        ts["teacher_calls"] = teacher_calls;
        ts["init_metric"] = init_metric;
        ts["early_stop"] = stopper.to_json();
        ts["stopped"] = stopped;
        detail::write_file((fs::path(dir) / files::kTrainState).string(),
                           ts.dump() + "\n");
    }

    // On resume, drop runlog records from a round the kill interrupted;
    // the redo will append them again.
    void truncate_runlog(std::uint64_t opt_step) const {
        namespace fs = std::filesystem;
        const std::string path = out_path(files::kRunLog);
        if (!fs::exists(path)) return;
        std::ifstream in(path);
        std::vector<std::string> keep;
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            try {
                const nlohmann::json rec = nlohmann::json::parse(line);
                if (rec.at("step").get<std::uint64_t>() <= opt_step)
                    keep.push_back(line);
            } catch (const std::exception&) {
                // drop unparseable tail lines from an interrupted write
            }
        }
        in.close();
        std::ofstream out(path, std::ios::trunc);
        for (const auto& l : keep) out << l << "\n";
    }

    RunConfig cfg_;
};

}  // namespace prefdistill
