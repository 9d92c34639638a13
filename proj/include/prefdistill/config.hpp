// Copyright (c) 2026 prefdistill contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "prefdistill/errors.hpp"
#include "prefdistill/http_teacher.hpp"
#include "prefdistill/optimizer.hpp"
#include "prefdistill/sampler.hpp"

namespace prefdistill {

namespace detail {

inline void require_keys(const nlohmann::json& j, const std::string& section,
                         std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw ConfigError(section + " must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        bool known = false;
        for (const char* a : allowed)
            if (key == a) {
                known = true;
                break;
            }
        if (!known) throw ConfigError("unknown key '" + section + "." + key + "'");
    }
}

template <typename T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
    }
}

}  // namespace detail

struct TeacherConfig {
    enum class Kind { Synthetic, Replay, Http };
    Kind kind = Kind::Synthetic;
    SyntheticTeacherSpec synthetic;
    std::string replay_log;
    EndpointConfig http;
};

// Everything a run needs, mirrored one-to-one by the JSON config file.
// Unknown keys anywhere are rejected before any side effect.
struct RunConfig {
    std::uint64_t seed = 0;
    std::string output_dir;

    struct Catalog {
        std::string embeddings;       // PDE1 file for init = "import"
        std::string init = "import";  // "import" | "random-unit"
        std::size_t dim = 512;        // random-unit only
        std::size_t count = 0;        // random-unit: synthesize img_<i> ids
        std::string ids;              // random-unit: file of ids, one per line
        std::string refs;             // optional JSON map id -> payload ref
    } catalog;

    struct Personas {
        std::string train, val, test;
    } personas;

    struct Labels {
        std::string val, test;
    } labels;

    TeacherConfig teacher;
    SamplerConfig sampler;
    AdamWConfig optimizer;

    struct Training {
        std::uint64_t max_steps = 100;  // optimizer steps
        int eval_cadence = 1;           // validation every j optimizer steps
        int patience = 5;
        bool flush_partial = true;      // apply a short final accumulation
    } training;

    struct LabelCmd {
        std::string split = "val";  // which persona file and label file
        std::size_t entrants = 0;   // 0: whole catalog
        bool shuffle = false;
        bool bracket_log = false;
        int parallelism = 1;
    } label;

    struct EvalCmd {
        std::string split = "test";
    } eval;

    struct Retrieval {
        std::size_t k = 10;
    } retrieval;

    const std::string& persona_path(const std::string& split) const {
        if (split == "train") return personas.train;
        if (split == "val") return personas.val;
        if (split == "test") return personas.test;
        throw ConfigError("unknown persona split '" + split + "'");
    }

    const std::string& label_path(const std::string& split) const {
        if (split == "val") return labels.val;
        if (split == "test") return labels.test;
        throw ConfigError("no label file for split '" + split + "'");
    }
};

inline RunConfig parse_config(const nlohmann::json& j) {
    detail::require_keys(j, "config",
                         {"seed", "output_dir", "catalog", "personas", "labels",
                          "teacher", "sampler", "optimizer", "training", "label",
                          "eval", "retrieval"});
    RunConfig cfg;
    cfg.seed = detail::get_or<std::uint64_t>(j, "seed", 0);
    cfg.output_dir = detail::get_or<std::string>(j, "output_dir", "");

    if (j.contains("catalog")) {
        const auto& c = j.at("catalog");
        detail::require_keys(c, "catalog",
                             {"embeddings", "init", "dim", "count", "ids", "refs"});
        cfg.catalog.embeddings = detail::get_or<std::string>(c, "embeddings", "");
        cfg.catalog.init = detail::get_or<std::string>(c, "init", "import");
        cfg.catalog.dim = detail::get_or<std::size_t>(c, "dim", 512);
        cfg.catalog.count = detail::get_or<std::size_t>(c, "count", 0);
        cfg.catalog.ids = detail::get_or<std::string>(c, "ids", "");
        cfg.catalog.refs = detail::get_or<std::string>(c, "refs", "");
        if (cfg.catalog.init != "import" && cfg.catalog.init != "random-unit")
            throw ConfigError("catalog.init must be 'import' or 'random-unit'");
    }

    if (j.contains("personas")) {
        const auto& p = j.at("personas");
        detail::require_keys(p, "personas", {"train", "val", "test"});
        cfg.personas.train = detail::get_or<std::string>(p, "train", "");
        cfg.personas.val = detail::get_or<std::string>(p, "val", "");
        cfg.personas.test = detail::get_or<std::string>(p, "test", "");
    }

    if (j.contains("labels")) {
        const auto& l = j.at("labels");
        detail::require_keys(l, "labels", {"val", "test"});
        cfg.labels.val = detail::get_or<std::string>(l, "val", "");
        cfg.labels.test = detail::get_or<std::string>(l, "test", "");
    }

    if (j.contains("teacher")) {
        const auto& t = j.at("teacher");
        detail::require_keys(t, "teacher",
                             {"kind", "hidden_dim", "tau", "seed", "name", "log", "url",
                              "model", "auth_env", "max_parallel", "max_retries",
                              "timeout_ms", "retry_backoff_ms", "prompt_template"});
        const std::string kind = detail::get_or<std::string>(t, "kind", "synthetic");
        if (kind == "synthetic") {
            cfg.teacher.kind = TeacherConfig::Kind::Synthetic;
            cfg.teacher.synthetic.hidden_dim =
                detail::get_or<std::size_t>(t, "hidden_dim", 16);
            cfg.teacher.synthetic.tau = detail::get_or<double>(t, "tau", 0.0);
            cfg.teacher.synthetic.seed =
                detail::get_or<std::uint64_t>(t, "seed", cfg.seed);
            cfg.teacher.synthetic.name =
                detail::get_or<std::string>(t, "name", "synthetic");
            if (cfg.teacher.synthetic.tau < 0.0)
                throw ConfigError("teacher.tau must be >= 0");
        } else if (kind == "replay") {
            cfg.teacher.kind = TeacherConfig::Kind::Replay;
            cfg.teacher.replay_log = detail::get_or<std::string>(t, "log", "");
            if (cfg.teacher.replay_log.empty())
                throw ConfigError("teacher.log required for replay teacher");
        } else if (kind == "http") {
            cfg.teacher.kind = TeacherConfig::Kind::Http;
            cfg.teacher.http.url = detail::get_or<std::string>(t, "url", "");
            cfg.teacher.http.model = detail::get_or<std::string>(t, "model", "");
            cfg.teacher.http.auth_env = detail::get_or<std::string>(t, "auth_env", "");
            cfg.teacher.http.max_parallel = detail::get_or<int>(t, "max_parallel", 8);
            cfg.teacher.http.max_retries = detail::get_or<int>(t, "max_retries", 3);
            cfg.teacher.http.timeout_ms = detail::get_or<int>(t, "timeout_ms", 30000);
            cfg.teacher.http.retry_backoff_ms =
                detail::get_or<int>(t, "retry_backoff_ms", 250);
            cfg.teacher.http.prompt_template = detail::get_or<std::string>(
                t, "prompt_template", cfg.teacher.http.prompt_template);
            if (cfg.teacher.http.url.empty())
                throw ConfigError("teacher.url required for http teacher");
        } else {
            throw ConfigError("teacher.kind must be synthetic, replay, or http");
        }
    }

    if (j.contains("sampler")) {
        const auto& s = j.at("sampler");
        detail::require_keys(s, "sampler",
                             {"cuts", "mode", "plan", "group_size", "groups_per_step",
                              "groups_per_persona", "policy"});
        if (s.contains("cuts")) {
            const auto cuts = s.at("cuts").get<std::vector<double>>();
            if (cuts.size() != 3) throw ConfigError("sampler.cuts must have 3 entries");
            std::copy(cuts.begin(), cuts.end(), cfg.sampler.cuts.begin());
        }
        const std::string mode = detail::get_or<std::string>(s, "mode", "mirrored");
        if (mode == "mirrored")
            cfg.sampler.mode = SamplerConfig::Mode::Mirrored;
        else if (mode == "literal-sorted")
            cfg.sampler.mode = SamplerConfig::Mode::LiteralSorted;
        else
            throw ConfigError("sampler.mode must be 'mirrored' or 'literal-sorted'");
        if (s.contains("plan")) {
            const auto plan = s.at("plan").get<std::vector<int>>();
            if (plan.size() != 4) throw ConfigError("sampler.plan must have 4 entries");
            std::copy(plan.begin(), plan.end(), cfg.sampler.plan.begin());
        }
        cfg.sampler.group_size = detail::get_or<int>(s, "group_size", 5);
        cfg.sampler.groups_per_step = detail::get_or<int>(s, "groups_per_step", 1000);
        cfg.sampler.groups_per_persona =
            detail::get_or<int>(s, "groups_per_persona", 0);
        const std::string policy =
            detail::get_or<std::string>(s, "policy", "preference-aligned");
        if (policy == "preference-aligned")
            cfg.sampler.policy = SamplerConfig::Policy::PreferenceAligned;
        else if (policy == "uniform")
            cfg.sampler.policy = SamplerConfig::Policy::Uniform;
        else
            throw ConfigError("sampler.policy must be 'preference-aligned' or 'uniform'");
        cfg.sampler.validate();
    }

    if (j.contains("optimizer")) {
        const auto& o = j.at("optimizer");
        detail::require_keys(o, "optimizer",
                             {"lr0", "decay", "beta1", "beta2", "eps", "weight_decay",
                              "accumulation_steps", "micro_batch"});
        cfg.optimizer.lr0 = detail::get_or<double>(o, "lr0", 1e-6);
        cfg.optimizer.decay = detail::get_or<double>(o, "decay", 0.95);
        cfg.optimizer.beta1 = detail::get_or<double>(o, "beta1", 0.9);
        cfg.optimizer.beta2 = detail::get_or<double>(o, "beta2", 0.999);
        cfg.optimizer.eps = detail::get_or<double>(o, "eps", 1e-8);
        cfg.optimizer.weight_decay = detail::get_or<double>(o, "weight_decay", 0.0);
        cfg.optimizer.accumulation_steps =
            detail::get_or<int>(o, "accumulation_steps", 10);
        cfg.optimizer.micro_batch = detail::get_or<int>(o, "micro_batch", 50);
        cfg.optimizer.validate();
    }

    if (j.contains("training")) {
        const auto& t = j.at("training");
        detail::require_keys(t, "training",
                             {"max_steps", "eval_cadence", "patience", "flush_partial"});
        cfg.training.max_steps = detail::get_or<std::uint64_t>(t, "max_steps", 100);
        cfg.training.eval_cadence = detail::get_or<int>(t, "eval_cadence", 1);
        cfg.training.patience = detail::get_or<int>(t, "patience", 5);
        cfg.training.flush_partial = detail::get_or<bool>(t, "flush_partial", true);
        if (cfg.training.eval_cadence < 1)
            throw ConfigError("training.eval_cadence must be >= 1");
        if (cfg.training.patience < 1) throw ConfigError("training.patience must be >= 1");
    }

    if (j.contains("label")) {
        const auto& l = j.at("label");
        detail::require_keys(
            l, "label", {"split", "entrants", "shuffle", "bracket_log", "parallelism"});
        cfg.label.split = detail::get_or<std::string>(l, "split", "val");
        cfg.label.entrants = detail::get_or<std::size_t>(l, "entrants", 0);
        cfg.label.shuffle = detail::get_or<bool>(l, "shuffle", false);
        cfg.label.bracket_log = detail::get_or<bool>(l, "bracket_log", false);
        cfg.label.parallelism = detail::get_or<int>(l, "parallelism", 1);
    }

    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        detail::require_keys(e, "eval", {"split"});
        cfg.eval.split = detail::get_or<std::string>(e, "split", "test");
    }

    if (j.contains("retrieval")) {
        const auto& r = j.at("retrieval");
        detail::require_keys(r, "retrieval", {"k"});
        cfg.retrieval.k = detail::get_or<std::size_t>(r, "k", 10);
        if (cfg.retrieval.k < 1) throw ConfigError("retrieval.k must be >= 1");
    }

    return cfg;
}

inline RunConfig load_config(const std::string& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(detail::read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("'" + path + "': " + e.what());
    }
    return parse_config(j);
}

}  // namespace prefdistill
