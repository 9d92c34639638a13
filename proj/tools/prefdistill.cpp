// Copyright (c) 2026 prefdistill contributors
// SPDX-License-Identifier: Apache-2.0
//
// prefdistill train|label|eval|retrieve --config <file> [--resume]
// [--dry-run] [--seed N]
//
// Exit codes: 0 success, 2 config error, 3 teacher failure,
// 4 resumable abort.

#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "prefdistill/config.hpp"
#include "prefdistill/errors.hpp"
#include "prefdistill/evalmetrics.hpp"
#include "prefdistill/tournament.hpp"
#include "prefdistill/trainer.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitTeacher = 3;
constexpr int kExitResumable = 4;

int run_train(prefdistill::Trainer& trainer, bool resume, bool dry_run) {
    if (dry_run) {
        std::cout << trainer.dry_run_budget().dump(2) << "\n";
        return 0;
    }
    const prefdistill::TrainResult result = trainer.train(resume);
    nlohmann::json j;
    j["opt_steps"] = result.opt_steps;
    j["sample_steps"] = result.sample_steps;
    j["init_metric"] = result.init_metric;
    j["best_metric"] = result.best_metric;
    j["best_step"] = result.best_step;
    j["final_metric"] = result.final_metric;
    j["early_stopped"] = result.early_stopped;
    j["teacher_calls"] = result.teacher_calls;
    j["cache_hits"] = result.cache_hits;
    j["best_checkpoint"] = result.best_dir;
    j["last_checkpoint"] = result.last_dir;
    std::cout << j.dump(2) << "\n";
    return 0;
}

int run_label(prefdistill::Trainer& trainer, bool dry_run) {
    const auto& cfg = trainer.config();
    if (dry_run) {
        prefdistill::CatalogStore store = trainer.init_store();
        const auto personas = prefdistill::load_personas(
            cfg.persona_path(cfg.label.split), store.dim(), cfg.seed);
        const std::size_t entrants =
            cfg.label.entrants > 0 && cfg.label.entrants < store.size()
                ? cfg.label.entrants
                : store.size();
        nlohmann::json j;
        j["split"] = cfg.label.split;
        j["personas"] = personas.size();
        j["entrants"] = entrants;
        j["comparisons_per_persona"] = entrants - 1;
        j["total_comparisons"] = personas.size() * (entrants - 1);
        j["out"] = trainer.label_out_path(cfg.label.split);
        std::cout << j.dump(2) << "\n";
        return 0;
    }
    const auto labels = trainer.run_label();
    std::size_t comparisons = 0;
    for (const auto& label : labels) comparisons += static_cast<std::size_t>(label.comparisons);
    nlohmann::json j;
    j["split"] = cfg.label.split;
    j["labels"] = labels.size();
    j["comparisons"] = comparisons;
    j["out"] = trainer.label_out_path(cfg.label.split);
    std::cout << j.dump(2) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Preference-distillation trainer for embedding-based retrieval"};
    app.require_subcommand(1);

    std::string config_path;
    std::string checkpoint;
    std::string persona_key;
    std::size_t k = 0;
    bool resume = false;
    bool dry_run = false;
    std::int64_t seed_override = -1;

    const auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON run configuration")->required();
        cmd->add_flag("--resume", resume, "resume from the last checkpoint");
        cmd->add_flag("--dry-run", dry_run, "validate config and print the budget");
        cmd->add_option("--seed", seed_override, "override the config seed");
    };

    CLI::App* cmd_train = app.add_subcommand("train", "run the distillation loop");
    add_common(cmd_train);
    CLI::App* cmd_label = app.add_subcommand("label", "generate tournament labels");
    add_common(cmd_label);
    CLI::App* cmd_eval = app.add_subcommand("eval", "mean percentile rank report");
    add_common(cmd_eval);
    cmd_eval->add_option("--checkpoint", checkpoint, "checkpoint directory");
    CLI::App* cmd_retrieve = app.add_subcommand("retrieve", "top-k retrieval");
    add_common(cmd_retrieve);
    cmd_retrieve->add_option("--persona", persona_key, "persona id or exact text")
        ->required();
    cmd_retrieve->add_option("--k", k, "top-k (default from config)");
    cmd_retrieve->add_option("--checkpoint", checkpoint, "checkpoint directory");

    CLI11_PARSE(app, argc, argv);

    try {
        prefdistill::RunConfig cfg = prefdistill::load_config(config_path);
        if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
        prefdistill::Trainer trainer(cfg);

        if (cmd_train->parsed()) return run_train(trainer, resume, dry_run);
        if (cmd_label->parsed()) return run_label(trainer, dry_run);
        if (cmd_eval->parsed()) {
            const auto report = trainer.run_eval(checkpoint);
            std::cout << prefdistill::report_to_json(report).dump(2) << "\n";
            return 0;
        }
        if (cmd_retrieve->parsed()) {
            const auto result = trainer.run_retrieve(persona_key, k, checkpoint);
            std::cout << prefdistill::retrieval_to_json(result).dump() << "\n";
            return 0;
        }
        return kExitConfig;
    } catch (const prefdistill::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const prefdistill::TeacherUnavailable& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitTeacher;
    } catch (const prefdistill::MalformedResponse& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitTeacher;
    } catch (const prefdistill::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitResumable;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 1;
    }
}
