// SPDX-FileCopyrightText: (c) 2026 The emgllm Authors
//
// SPDX-License-Identifier: Apache-2.0

#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "emgllm/cli/commands.hpp"
#include "emgllm/error.hpp"

using namespace emgllm;

int main(int argc, char** argv) {
    CLI::App app{"EMG-to-text experiments with a frozen decoder LM"};
    app.require_subcommand(0, 1);
    std::string config_path, out_dir;
    std::optional<std::uint64_t> seed;
    std::string checkpoint;
    bool print_config = false;
    cli::CommandOptions options;
    app.add_option("--config", config_path, "run config JSON (defaults apply to absent keys)");
    app.add_option("--seed", seed, "top-level seed; overrides the config file");
    app.add_option("--out", out_dir, "output directory; overrides output_dir");
    app.add_option("--jobs", options.jobs, "worker threads for featurization")->check(CLI::PositiveNumber);
    app.add_flag("--force", options.force, "overwrite existing command outputs");
    app.add_flag("--print-config", print_config, "print the resolved config and exit");
    const std::map<std::string, std::string> about = {
        {"gen", "generate the synthetic corpus"},
        {"featurize", "cache per-utterance feature frames"},
        {"pretrain-lm", "pretrain the text-only LM"},
        {"train", "train adaptors over the configured folds"},
        {"eval", "decode test splits and report WER"},
        {"ablate", "run the adaptor ablation suite"},
        {"sweep", "train on growing data budgets"},
        {"pid", "person-identification pilot"}};
    for (const auto& name : cli::command_names()) {
        auto* sub = app.add_subcommand(name, about.count(name) ? about.at(name) : "");
        if (name == "eval") {
            sub->add_option("--checkpoint", checkpoint, "evaluate one checkpoint instead of every fold");
            sub->add_flag("--oracle", options.oracle, "transcriber returns the references");
        }
    }
    app.fallthrough();
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }
    if (app.get_subcommands().empty() && !print_config) {
        std::cerr << "error: ParameterError: a command is required (see --help)\n";
        return 2;
    }
    try {
        cli::RunConfig config = config_path.empty() ? cli::run_config_from_json(cli::Json::object())
                                                    : cli::load_run_config(config_path);
        if (seed) {
            config.seed = *seed;
        }
        if (!out_dir.empty()) {
            config.output_dir = out_dir;
        }
        config.resolve();
        if (print_config) {
            std::cout << cli::to_json(config).dump(2) << "\n";
            return 0;
        }
        if (!checkpoint.empty()) {
            options.checkpoint = checkpoint;
        }
        cli::run_command(app.get_subcommands().front()->get_name(), config, options);
    } catch (const Error& e) {
        std::cerr << "error: " << e.kind() << ": " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: InternalError: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
