#pragma once

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "absa/commands.hpp"

namespace absa {

/// Parses `args` (without the program name), runs the chosen subcommand and
/// returns the process exit code. Errors are reported on `err`.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Aspect-based sentiment classification: data preparation, training, grid experiments and prediction"};
    app.name("absa");
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    app.add_option("-c,--config", config_path, "INI config file (default: $" + std::string(kConfigEnvVar) + ")");
    app.add_option("-s,--set", overrides, "Override a config value, e.g. --set train.lr=1e-3 (repeatable)");

    auto* prepare = app.add_subcommand("prepare", "Split a JSONL corpus and build the training vocabulary");
    std::string prepare_data, prepare_out;
    prepare->add_option("--data", prepare_data, "Input JSONL corpus")->required();
    prepare->add_option("--out", prepare_out, "Output directory for train/val/test JSONL and vocab.txt")->required();

    auto* stats = app.add_subcommand("stats", "Label, category and length statistics of a JSONL corpus");
    std::string stats_data;
    std::size_t bin_width = 10;
    stats->add_option("--data", stats_data, "Input JSONL corpus")->required();
    stats->add_option("--bin-width", bin_width, "Length histogram bin width in tokens")->capture_default_str();

    auto* train_cmd = app.add_subcommand("train", "Train one encoder + head model");

    auto* experiment = app.add_subcommand("experiment", "Run the encoder x head x seed grid and write report.txt/report.json");

    auto* evaluate = app.add_subcommand("evaluate", "Evaluate a checkpoint on a JSONL split");
    std::string eval_ckpt, eval_data, eval_features;
    evaluate->add_option("--checkpoint", eval_ckpt, "Model checkpoint")->required();
    evaluate->add_option("--data", eval_data, "JSONL split to evaluate")->required();
    evaluate->add_option("--features", eval_features, "Precomputed features for the split (precomputed models only)");

    auto* predict = app.add_subcommand("predict", "Classify the polarity towards one aspect of a text");
    std::string pred_ckpt, pred_text, pred_aspect;
    std::optional<std::size_t> pred_start;
    predict->add_option("--checkpoint", pred_ckpt, "Model checkpoint")->required();
    predict->add_option("--text", pred_text, "Input text")->required();
    predict->add_option("--aspect", pred_aspect, "Aspect phrase as it appears in the text")->required();
    predict->add_option("--start", pred_start, "Code-point offset of the aspect (default: first occurrence)");

    auto* generate = app.add_subcommand("generate", "Write a synthetic cue-word corpus as JSONL");
    SyntheticSpec gen_spec;
    std::string gen_out;
    generate->add_option("--n", gen_spec.n, "Number of examples")->capture_default_str();
    generate->add_option("--seed", gen_spec.seed, "Generator seed")->capture_default_str();
    generate->add_option("--vocab-size", gen_spec.vocab_size, "Filler vocabulary size")->capture_default_str();
    generate->add_option("--out", gen_out, "Output JSONL path")->required();

    auto* export_cmd = app.add_subcommand("export", "Write frozen encoder features for every split");
    std::string export_out;
    export_cmd->add_option("--out", export_out, "Output directory for train/val/test .feat files")->required();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return kExitUsage;
    }

    try {
        auto config = [&] {
            return load_run_config(config_path.empty() ? std::nullopt : std::optional<std::filesystem::path>(config_path),
                                   overrides);
        };
        if (prepare->parsed()) {
            cmd_prepare(config(), prepare_data, prepare_out, out);
        } else if (stats->parsed()) {
            cmd_stats(stats_data, bin_width, out);
        } else if (train_cmd->parsed()) {
            cmd_train(config(), out);
        } else if (experiment->parsed()) {
            cmd_experiment(config(), out);
        } else if (evaluate->parsed()) {
            cmd_evaluate(eval_ckpt, eval_data,
                         eval_features.empty() ? std::nullopt : std::optional<std::filesystem::path>(eval_features), out);
        } else if (predict->parsed()) {
            cmd_predict(pred_ckpt, pred_text, pred_aspect, pred_start, out);
        } else if (generate->parsed()) {
            cmd_generate(gen_spec, gen_out, out);
        } else if (export_cmd->parsed()) {
            cmd_export(config(), export_out, out);
        }
    } catch (const std::exception& e) {
        err << "absa: error: " << e.what() << "\n";
        return exit_code_for(e);
    }
    return 0;
}

}  // namespace absa
