#pragma once

#include <mffqi/experiments.hpp>
#include <mffqi/io.hpp>

#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <vector>

namespace mffqi {

namespace detail {

/// Apply `--set a.b.c=value` overrides onto a config JSON tree. Values parse
/// as JSON when possible (numbers, booleans, arrays) and fall back to strings.
inline void apply_override(json& config, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw config_error("override must look like path.to.field=value: " + assignment);
    const std::string path = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::exception&) {
        value = raw;  // unquoted string
    }
    json* node = &config;
    std::size_t begin = 0;
    while (true) {
        const std::size_t dot = path.find('.', begin);
        const std::string key = path.substr(begin, dot == std::string::npos ? dot : dot - begin);
        if (key.empty()) throw config_error("empty key in override path: " + path);
        if (dot == std::string::npos) {
            (*node)[key] = value;
            return;
        }
        node = &(*node)[key];
        begin = dot + 1;
    }
}

inline ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& sets,
                                    const std::string& expected_experiment = "") {
    json j = load_json(path);
    for (const auto& s : sets) apply_override(j, s);
    if (!expected_experiment.empty()) j["experiment"] = expected_experiment;
    return experiment_config_from_json(j);
}

inline std::string join_argv(int argc, const char* const* argv) {
    std::string out;
    for (int i = 0; i < argc; ++i) {
        if (i > 0) out += ' ';
        out += argv[i];
    }
    return out;
}

inline void write_outputs(const std::string& command, const ExperimentConfig& cfg,
                          const std::vector<ResultRow>& rows,
                          const std::vector<std::string>& extra_outputs = {}) {
    std::vector<std::string> outputs{cfg.output};
    outputs.insert(outputs.end(), extra_outputs.begin(), extra_outputs.end());
    save_csv(cfg.output, rows);
    save_json(cfg.output + ".manifest.json", make_manifest(command, to_json(cfg), outputs));
}

}  // namespace detail

/**
 * Command-line entry point. Exit codes: 0 success, 2 configuration error
 * (bad flags, files, schemas, parameters), 3 numerical failure.
 */
inline int cli_run(int argc, const char* const* argv) {
    CLI::App app{"Mean-field fitted Q-iteration over kernel mean embeddings"};
    app.require_subcommand(1);

    std::string config_path, out_path, batch_path, model_path, results_path;
    std::vector<std::string> overrides;

    const auto add_common = [&](CLI::App* cmd, bool needs_config) {
        if (needs_config)
            cmd->add_option("--config", config_path, "experiment config JSON")->required();
        cmd->add_option("--set", overrides,
                        "override a config field by dotted path, e.g. --set fqi.lambda=1e-4");
    };

    CLI::App* collect = app.add_subcommand("collect", "sample a batch from the environment");
    add_common(collect, true);
    collect->add_option("--out", out_path, "batch file to write")->required();

    CLI::App* train = app.add_subcommand("train", "fit a Q-function on a collected batch");
    add_common(train, true);
    train->add_option("--batch", batch_path, "batch file to train on")->required();
    train->add_option("--out", out_path, "model file to write")->required();
    train->add_option("--results", results_path, "optional diagnostics CSV");

    CLI::App* evaluate = app.add_subcommand("evaluate", "Bellman residual of a model on a batch");
    add_common(evaluate, false);
    evaluate->add_option("--model", model_path, "model file")->required();
    evaluate->add_option("--batch", batch_path, "batch file")->required();
    evaluate->add_option("--out", out_path, "results CSV to write");

    const char* experiment_names[] = {"oracle-compare", "sweep-agents", "sweep-batch",
                                      "convergence", "concentration"};
    const char* experiment_help[] = {
        "train on the discrete env and compare with exact value iteration",
        "error vs number of observed agents N",
        "error vs batch size n, plus the coupled grid n = N^a",
        "error and residual vs iteration count",
        "embedding concentration rate vs N"};
    std::vector<CLI::App*> experiment_cmds;
    for (int i = 0; i < 5; ++i) {
        CLI::App* cmd = app.add_subcommand(experiment_names[i], experiment_help[i]);
        add_common(cmd, true);
        cmd->add_option("--out", out_path, "results CSV (overrides config output)");
        experiment_cmds.push_back(cmd);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }

    const std::string command = detail::join_argv(argc, argv);
    try {
        if (collect->parsed()) {
            ExperimentConfig cfg = detail::load_config(config_path, overrides);
            const std::uint64_t seed = cfg.seeds.empty() ? cfg.env.seed : cfg.seeds.front();
            const Batch batch =
                collect_batch(cfg.env, cfg.collect.n, make_action_policy(cfg.collect), seed);
            save_batch(out_path, batch, cfg.env, seed);
            save_json(out_path + ".manifest.json",
                      make_manifest(command, to_json(cfg), {out_path}));
            std::cout << "wrote " << batch.size() << " records to " << out_path << '\n';
            return 0;
        }
        if (train->parsed()) {
            ExperimentConfig cfg = detail::load_config(config_path, overrides, "train");
            const BatchFile file = load_batch(batch_path);
            TrainArtifacts art = train_on_batch(file.batch, cfg.fqi);
            save_model(out_path, art.result.model);
            std::vector<std::string> outputs{out_path};
            if (!results_path.empty()) {
                std::vector<ResultRow> rows;
                const int n = static_cast<int>(art.batch.size());
                const int n_agents = static_cast<int>(art.batch.records.front().sample.size());
                rows.push_back(ResultRow{"train", file.seed, n_agents, n, std::nullopt,
                                         art.resolved.lambda, "resolved_sigma",
                                         art.resolved.base.sigma, std::nullopt});
                rows.push_back(ResultRow{"train", file.seed, n_agents, n, std::nullopt,
                                         art.resolved.lambda, "resolved_tau", art.resolved.emb.tau,
                                         std::nullopt});
                const auto& diag = art.result.diagnostics;
                for (std::size_t k = 0; k < diag.fit_residual_sq.size(); ++k)
                    rows.push_back(ResultRow{"train", file.seed, n_agents, n,
                                             static_cast<int>(k + 1), art.resolved.lambda,
                                             "fit_residual_sq", diag.fit_residual_sq[k],
                                             std::nullopt});
                save_csv(results_path, rows);
                outputs.push_back(results_path);
            }
            save_json(out_path + ".manifest.json", make_manifest(command, to_json(cfg), outputs));
            std::cout << "wrote model with " << art.result.model.support.size() << " support configs to "
                      << out_path << '\n';
            return 0;
        }
        if (evaluate->parsed()) {
            const QModel model = load_model(model_path);
            const BatchFile file = load_batch(batch_path);
            const double residual = bellman_residual(model, file.batch);
            std::cout << "bellman_residual " << residual << '\n';
            if (!out_path.empty()) {
                const int n = static_cast<int>(file.batch.size());
                const int n_agents =
                    static_cast<int>(file.batch.records.front().sample.size());
                std::vector<ResultRow> rows{ResultRow{"evaluate", file.seed, n_agents, n,
                                                      std::nullopt, std::nullopt,
                                                      "bellman_residual", residual, std::nullopt}};
                save_csv(out_path, rows);
                save_json(out_path + ".manifest.json",
                          make_manifest(command, json{{"model", model_path}, {"batch", batch_path}},
                                        {out_path}));
            }
            return 0;
        }
        for (int i = 0; i < 5; ++i) {
            if (!experiment_cmds[static_cast<std::size_t>(i)]->parsed()) continue;
            ExperimentConfig cfg =
                detail::load_config(config_path, overrides, experiment_names[i]);
            if (!out_path.empty()) cfg.output = out_path;
            const std::vector<ResultRow> rows = run_experiment(cfg);
            detail::write_outputs(command, cfg, rows);
            for (const auto& row : rows)
                if (!row.seed.has_value() || rows.size() <= 12)
                    std::cout << row.metric << " " << detail::format_double(row.value) << '\n';
            std::cout << "wrote " << rows.size() << " rows to " << cfg.output << '\n';
            return 0;
        }
    } catch (const config_error& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const contract_error& e) {
        std::cerr << "input error: " << e.what() << '\n';
        return 2;
    } catch (const numerical_error& e) {
        std::cerr << "numerical error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    }
    return 2;
}

}  // namespace mffqi
