#pragma once

#include <mffqi/envs.hpp>
#include <mffqi/fqi.hpp>
#include <mffqi/io.hpp>
#include <mffqi/oracle.hpp>
#include <mffqi/rng.hpp>
#include <mffqi/stats.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace mffqi {

struct CollectConfig {
    int n = 100;
    std::string policy = "uniform-random";  // or "fixed"
    int fixed_action = 0;
};

struct GridConfig {
    std::vector<int> agents;
    std::vector<int> batch_sizes;
    std::vector<int> kappas;
    std::vector<double> exponents;  // coupled grid n = N^a
};

struct ConcentrationConfig {
    int resamples = 200;
    int ref_multiplier = 100;  // N_ref = ref_multiplier * max(N grid)
};

/**
 * One experiment run: which study to perform, the environment, the training
 * configuration, and the grids/seeds it ranges over. Kernel parameters set to
 * zero are resolved per batch by the median heuristics.
 */
struct ExperimentConfig {
    std::string experiment;  // train | oracle-compare | sweep-agents | sweep-batch |
                             // convergence | concentration
    EnvSpec env;
    FqiConfig fqi;
    CollectConfig collect;
    GridConfig grids;
    ConcentrationConfig concentration;
    std::vector<std::uint64_t> seeds;
    std::string output = "results.csv";
    bool timings = false;
    double vi_tol = 1e-12;
};

inline json to_json(const ExperimentConfig& cfg) {
    return json{{"experiment", cfg.experiment},
                {"env", to_json(cfg.env)},
                {"fqi",
                 json{{"kappa", cfg.fqi.kappa},
                      {"lambda", cfg.fqi.lambda},
                      {"base", to_json(cfg.fqi.base)},
                      {"emb", to_json(cfg.fqi.emb)},
                      {"initial_q", cfg.fqi.initial_q}}},
                {"collect",
                 json{{"n", cfg.collect.n},
                      {"policy", cfg.collect.policy},
                      {"fixed_action", cfg.collect.fixed_action}}},
                {"grids",
                 json{{"agents", cfg.grids.agents},
                      {"batch_sizes", cfg.grids.batch_sizes},
                      {"kappas", cfg.grids.kappas},
                      {"exponents", cfg.grids.exponents}}},
                {"concentration",
                 json{{"resamples", cfg.concentration.resamples},
                      {"ref_multiplier", cfg.concentration.ref_multiplier}}},
                {"seeds", cfg.seeds},
                {"output", cfg.output},
                {"timings", cfg.timings},
                {"vi_tol", cfg.vi_tol}};
}

inline ExperimentConfig experiment_config_from_json(const json& j) {
    ExperimentConfig cfg;
    try {
        cfg.experiment = j.value("experiment", "train");
        cfg.env = env_spec_from_json(j.at("env"));
        if (j.contains("fqi")) {
            const json& f = j.at("fqi");
            cfg.fqi.kappa = f.value("kappa", 1);
            cfg.fqi.lambda = f.value("lambda", 1e-6);
            if (f.contains("base")) cfg.fqi.base = base_spec_from_json(f.at("base"));
            if (f.contains("emb")) cfg.fqi.emb = emb_spec_from_json(f.at("emb"));
            cfg.fqi.initial_q = f.value("initial_q", 0.0);
        }
        if (j.contains("collect")) {
            const json& c = j.at("collect");
            cfg.collect.n = c.value("n", 100);
            cfg.collect.policy = c.value("policy", "uniform-random");
            cfg.collect.fixed_action = c.value("fixed_action", 0);
        }
        if (j.contains("grids")) {
            const json& g = j.at("grids");
            cfg.grids.agents = g.value("agents", std::vector<int>{});
            cfg.grids.batch_sizes = g.value("batch_sizes", std::vector<int>{});
            cfg.grids.kappas = g.value("kappas", std::vector<int>{});
            cfg.grids.exponents = g.value("exponents", std::vector<double>{});
        }
        if (j.contains("concentration")) {
            const json& c = j.at("concentration");
            cfg.concentration.resamples = c.value("resamples", 200);
            cfg.concentration.ref_multiplier = c.value("ref_multiplier", 100);
        }
        cfg.seeds = j.value("seeds", std::vector<std::uint64_t>{});
        cfg.output = j.value("output", "results.csv");
        cfg.timings = j.value("timings", false);
        cfg.vi_tol = j.value("vi_tol", 1e-12);
    } catch (const json::exception& e) {
        throw config_error(std::string("invalid experiment config: ") + e.what());
    }
    std::set<std::uint64_t> distinct(cfg.seeds.begin(), cfg.seeds.end());
    if (distinct.size() != cfg.seeds.size())
        throw config_error("experiment config: seeds must be distinct");
    return cfg;
}

inline ActionPolicy make_action_policy(const CollectConfig& c) {
    if (c.policy == "uniform-random") return ActionPolicy::uniform();
    if (c.policy == "fixed") return ActionPolicy::fixed(c.fixed_action);
    throw config_error("unknown collection policy: " + c.policy);
}

/// Fill in sigma/tau from the batch when the config left them at the auto
/// sentinel (<= 0).
inline FqiConfig resolve_fqi_config(const FqiConfig& raw, const Batch& batch) {
    FqiConfig cfg = raw;
    const std::vector<Config> support = support_configs(batch);
    if (!(cfg.base.sigma > 0.0)) cfg.base.sigma = median_state_distance(support);
    if (cfg.emb.variant == EmbeddingKernelSpec::Variant::gaussian_on_mmd && !(cfg.emb.tau > 0.0))
        cfg.emb.tau = median_pairwise_mmd(support, cfg.base);
    return cfg;
}

struct TrainArtifacts {
    Batch batch;
    FqiConfig resolved;
    FqiResult result;
};

inline TrainArtifacts train_on_batch(Batch batch, const FqiConfig& raw_cfg,
                                     const RunOptions& opt = {}) {
    const FqiConfig cfg = resolve_fqi_config(raw_cfg, batch);
    FqiResult result = run_mffqi(batch, cfg, opt);
    return TrainArtifacts{std::move(batch), cfg, std::move(result)};
}

namespace detail {

inline std::optional<double> maybe_elapsed(bool timings,
                                           std::chrono::steady_clock::time_point start) {
    if (!timings) return std::nullopt;
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

/// Oracle domain matched to the sampling distribution: for fraction-grid
/// resets, the BFS closure of the grid histograms (the same mean-field states
/// at every N); otherwise the full histogram lattice, which is closed under
/// any deterministic dynamics.
inline std::vector<HistogramState> oracle_states_for(const EnvSpec& env) {
    const auto& p = env.chain();
    if (p.init_mode == "fraction-grid") {
        std::set<HistogramState> states;
        for (const auto& f : p.init_fractions) {
            const HistogramState init{fractions_to_counts(f, env.n_agents)};
            for (auto& h : enumerate_configs(p, env.n_agents, init)) states.insert(std::move(h));
        }
        return {states.begin(), states.end()};
    }
    return all_histograms(p.n_states, env.n_agents);
}

inline OracleTable build_chain_oracle(const EnvSpec& env, double tol) {
    return exact_value_iteration(oracle_states_for(env), env.chain(), env.r_max, env.gamma, tol);
}

inline bool has_oracle(const EnvSpec& env) {
    return env.is_chain() && chain_is_deterministic(env.chain());
}

/// Fraction of (action, histogram) configurations present in the batch's
/// support, relative to the oracle's configuration set.
inline double config_coverage(const Batch& batch, const EnvSpec& env) {
    const auto& p = env.chain();
    std::set<std::pair<int, std::vector<int>>> seen;
    for (const auto& rec : batch.records) {
        seen.insert({rec.action, detail::chain_latent_counts(p, rec.sample)});
    }
    const double total =
        static_cast<double>(oracle_states_for(env).size()) * env.n_actions();
    return static_cast<double>(seen.size()) / total;
}

/// Metric of one trained model: sup error against the exact oracle when the
/// env admits one, otherwise the Bellman residual on a held-out batch.
struct RunMetric {
    std::string name;
    double value;
};

inline RunMetric evaluate_run(const EnvSpec& env, const TrainArtifacts& art, double vi_tol,
                              std::uint64_t seed) {
    if (has_oracle(env)) {
        const OracleTable oracle = build_chain_oracle(env, vi_tol);
        const CompareReport report =
            compare_q(art.result.model, oracle, env.chain(), env.n_agents);
        return RunMetric{"sup_err", report.sup_err};
    }
    const std::uint64_t holdout_seed = splitmix64(seed ^ 0x0A02BDBF7BB3C0A7ULL);
    const Batch holdout = collect_batch(env, static_cast<int>(art.batch.size()),
                                        ActionPolicy::uniform(), holdout_seed);
    return RunMetric{"holdout_bellman_residual", bellman_residual(art.result.model, holdout)};
}

}  // namespace detail

/// Train on a freshly collected batch and report per-iteration diagnostics.
inline std::vector<ResultRow> run_train_experiment(const ExperimentConfig& cfg, QModel* model_out = nullptr) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::uint64_t seed = cfg.seeds.empty() ? cfg.env.seed : cfg.seeds.front();
    Batch batch = collect_batch(cfg.env, cfg.collect.n, make_action_policy(cfg.collect), seed);
    TrainArtifacts art = train_on_batch(std::move(batch), cfg.fqi);
    if (model_out != nullptr) *model_out = art.result.model;

    std::vector<ResultRow> rows;
    const int n = static_cast<int>(art.batch.size());
    const int n_agents = static_cast<int>(art.batch.records.front().sample.size());
    const auto base_row = [&](const std::string& metric, double value,
                              std::optional<int> kappa = std::nullopt) {
        rows.push_back(ResultRow{cfg.experiment, seed, n_agents, n, kappa, art.resolved.lambda,
                                 metric, value, detail::maybe_elapsed(cfg.timings, t0)});
    };
    base_row("resolved_sigma", art.resolved.base.sigma);
    base_row("resolved_tau", art.resolved.emb.tau);
    const auto& diag = art.result.diagnostics;
    for (std::size_t k = 0; k < diag.fit_residual_sq.size(); ++k)
        base_row("fit_residual_sq", diag.fit_residual_sq[k], static_cast<int>(k + 1));
    for (std::size_t k = 0; k < diag.target_delta_inf.size(); ++k)
        base_row("target_delta_inf", diag.target_delta_inf[k], static_cast<int>(k + 2));
    base_row("bellman_residual", bellman_residual(art.result.model, art.batch),
             art.resolved.kappa);
    return rows;
}

/// Train on the reference discrete env and compare against the exact table.
inline std::vector<ResultRow> run_oracle_compare(const ExperimentConfig& cfg,
                                                 QModel* model_out = nullptr) {
    if (!detail::has_oracle(cfg.env))
        throw config_error("oracle-compare requires a deterministic discrete-chain env");
    const auto t0 = std::chrono::steady_clock::now();
    const std::uint64_t seed = cfg.seeds.empty() ? cfg.env.seed : cfg.seeds.front();
    Batch batch = collect_batch(cfg.env, cfg.collect.n, make_action_policy(cfg.collect), seed);
    const double coverage = detail::config_coverage(batch, cfg.env);
    TrainArtifacts art = train_on_batch(std::move(batch), cfg.fqi);
    if (model_out != nullptr) *model_out = art.result.model;
    const OracleTable oracle = detail::build_chain_oracle(cfg.env, cfg.vi_tol);
    const CompareReport report = compare_q(art.result.model, oracle, cfg.env.chain(), cfg.env.n_agents);

    std::vector<ResultRow> rows;
    const auto wall = detail::maybe_elapsed(cfg.timings, t0);
    const auto row = [&](const std::string& metric, double value) {
        rows.push_back(ResultRow{cfg.experiment, seed, cfg.env.n_agents,
                                 static_cast<int>(art.batch.size()), art.resolved.kappa,
                                 art.resolved.lambda, metric, value, wall});
    };
    row("resolved_sigma", art.resolved.base.sigma);
    row("resolved_tau", art.resolved.emb.tau);
    row("config_coverage", coverage);
    row("sup_err", report.sup_err);
    row("mean_err", report.mean_err);
    row("argmax_agreement", report.argmax_agreement);
    row("bellman_residual", bellman_residual(art.result.model, art.batch));
    return rows;
}

namespace detail {

/// Shared by the two sweeps: runs (value, seed) pairs of a grid where `value`
/// rebinds either n_agents or the batch size, and appends per-run, aggregate,
/// and trend rows.
inline std::vector<ResultRow> run_sweep(const ExperimentConfig& cfg, const std::vector<int>& grid,
                                        bool vary_agents) {
    if (grid.empty()) throw config_error(cfg.experiment + ": grid must be nonempty");
    if (cfg.seeds.empty()) throw config_error(cfg.experiment + ": needs at least one seed");
    std::vector<ResultRow> rows;
    std::vector<double> grid_values, grid_means;
    std::string metric_name;
    for (const int value : grid) {
        EnvSpec env = cfg.env;
        int n = cfg.collect.n;
        if (vary_agents)
            env.n_agents = value;
        else
            n = value;
        std::vector<double> per_seed;
        for (const std::uint64_t seed : cfg.seeds) {
            const auto t0 = std::chrono::steady_clock::now();
            Batch batch = collect_batch(env, n, make_action_policy(cfg.collect), seed);
            TrainArtifacts art = train_on_batch(std::move(batch), cfg.fqi);
            const RunMetric metric = evaluate_run(env, art, cfg.vi_tol, seed);
            metric_name = metric.name;
            per_seed.push_back(metric.value);
            rows.push_back(ResultRow{cfg.experiment, seed, env.n_agents, n, art.resolved.kappa,
                                     art.resolved.lambda, metric.name, metric.value,
                                     maybe_elapsed(cfg.timings, t0)});
        }
        rows.push_back(ResultRow{cfg.experiment, std::nullopt, env.n_agents, n, std::nullopt,
                                 cfg.fqi.lambda, metric_name + "_mean", mean(per_seed),
                                 std::nullopt});
        rows.push_back(ResultRow{cfg.experiment, std::nullopt, env.n_agents, n, std::nullopt,
                                 cfg.fqi.lambda, metric_name + "_stddev", stddev(per_seed),
                                 std::nullopt});
        grid_values.push_back(static_cast<double>(value));
        grid_means.push_back(mean(per_seed));
    }
    if (grid_values.size() >= 2) {
        rows.push_back(ResultRow{cfg.experiment, std::nullopt, std::nullopt, std::nullopt,
                                 std::nullopt, cfg.fqi.lambda, "spearman_rho",
                                 spearman_rho(grid_values, grid_means), std::nullopt});
    }
    return rows;
}

}  // namespace detail

/// Error vs the number of observed agents N, fixed batch size.
inline std::vector<ResultRow> run_sweep_agents(const ExperimentConfig& cfg) {
    return detail::run_sweep(cfg, cfg.grids.agents, /*vary_agents=*/true);
}

/// Error vs batch size n at fixed N, plus the coupled grid n = N^a.
inline std::vector<ResultRow> run_sweep_batch(const ExperimentConfig& cfg) {
    std::vector<ResultRow> rows = detail::run_sweep(cfg, cfg.grids.batch_sizes,
                                                    /*vary_agents=*/false);
    for (const double a : cfg.grids.exponents) {
        const int n = std::max(1, static_cast<int>(std::lround(
                                      std::pow(static_cast<double>(cfg.env.n_agents), a))));
        std::vector<double> per_seed;
        for (const std::uint64_t seed : cfg.seeds) {
            const auto t0 = std::chrono::steady_clock::now();
            Batch batch = collect_batch(cfg.env, n, make_action_policy(cfg.collect), seed);
            TrainArtifacts art = train_on_batch(std::move(batch), cfg.fqi);
            const detail::RunMetric metric = detail::evaluate_run(cfg.env, art, cfg.vi_tol, seed);
            per_seed.push_back(metric.value);
            rows.push_back(ResultRow{cfg.experiment, seed, cfg.env.n_agents, n, art.resolved.kappa,
                                     art.resolved.lambda, metric.name + "_coupled", metric.value,
                                     detail::maybe_elapsed(cfg.timings, t0)});
        }
        rows.push_back(ResultRow{cfg.experiment, std::nullopt, cfg.env.n_agents, n, std::nullopt,
                                 cfg.fqi.lambda, "exponent_a", a, std::nullopt});
        rows.push_back(ResultRow{cfg.experiment, std::nullopt, cfg.env.n_agents, n, std::nullopt,
                                 cfg.fqi.lambda, "coupled_mean", mean(per_seed), std::nullopt});
    }
    return rows;
}

/**
 * Error to the oracle and Bellman residual as a function of the iteration
 * count, from a single run with per-iteration snapshots (iterate k of a
 * longer run equals the kappa=k run exactly). Emits the fitted geometric
 * decay rate of (sup_err - plateau), with the plateau taken at the largest
 * grid point.
 */
inline std::vector<ResultRow> run_convergence(const ExperimentConfig& cfg) {
    if (!detail::has_oracle(cfg.env))
        throw config_error("convergence requires a deterministic discrete-chain env");
    if (cfg.grids.kappas.empty()) throw config_error("convergence: kappa grid must be nonempty");
    const std::uint64_t seed = cfg.seeds.empty() ? cfg.env.seed : cfg.seeds.front();
    std::vector<int> kappas = cfg.grids.kappas;
    std::sort(kappas.begin(), kappas.end());
    const int kappa_max = kappas.back();
    if (kappas.front() < 0) throw config_error("convergence: kappa grid must be nonnegative");

    Batch batch = collect_batch(cfg.env, cfg.collect.n, make_action_policy(cfg.collect), seed);
    FqiConfig fqi = resolve_fqi_config(cfg.fqi, batch);
    fqi.kappa = std::max(1, kappa_max);
    RunOptions opt;
    opt.keep_history = true;
    const FqiResult result = run_mffqi(batch, fqi, opt);

    const OracleTable oracle = detail::build_chain_oracle(cfg.env, cfg.vi_tol);
    std::vector<ResultRow> rows;
    const auto row = [&](const std::string& metric, double value, int kappa) {
        rows.push_back(ResultRow{cfg.experiment, seed, cfg.env.n_agents,
                                 static_cast<int>(batch.size()), kappa, fqi.lambda, metric, value,
                                 std::nullopt});
    };
    row("resolved_sigma", fqi.base.sigma, 0);
    row("resolved_tau", fqi.emb.tau, 0);

    std::vector<double> fit_kappas, fit_errors;
    QModel snapshot = result.model;
    for (const int kappa : kappas) {
        double sup_err;
        if (kappa == 0) {
            // Initial constant model: error of min(initial_q, q_max) everywhere.
            const double v0 = std::min(cfg.fqi.initial_q, batch.q_max());
            sup_err = (oracle.q.array() - v0).abs().maxCoeff();
            row("sup_err", sup_err, kappa);
            continue;
        }
        snapshot.alpha = result.diagnostics.alpha_history[static_cast<std::size_t>(kappa - 1)];
        const CompareReport report = compare_q(snapshot, oracle, cfg.env.chain(), cfg.env.n_agents);
        sup_err = report.sup_err;
        row("sup_err", sup_err, kappa);
        row("bellman_residual", bellman_residual(snapshot, batch), kappa);
        fit_kappas.push_back(static_cast<double>(kappa));
        fit_errors.push_back(sup_err);
    }

    if (fit_errors.size() >= 3) {
        const double plateau = fit_errors.back();
        std::vector<double> xs, ys;
        for (std::size_t i = 0; i + 1 < fit_errors.size(); ++i) {
            const double delta = fit_errors[i] - plateau;
            if (delta > std::max(1e-12, 1e-9 * plateau)) {
                xs.push_back(fit_kappas[i]);
                ys.push_back(std::log(delta));
            }
        }
        row("plateau", plateau, kappa_max);
        if (xs.size() >= 2) {
            const LinearFit fit = least_squares_fit(xs, ys);
            row("decay_rate", std::exp(fit.slope), kappa_max);
        }
    }
    return rows;
}

/**
 * Monte Carlo estimate of the embedding concentration rate: mean MMD between
 * an N-observation empirical embedding and a large reference embedding of the
 * same distribution, per N, plus the log-log slope (theory: -1/2).
 */
inline std::vector<ResultRow> run_concentration(const ExperimentConfig& cfg) {
    if (cfg.grids.agents.empty()) throw config_error("concentration: agents grid must be nonempty");
    if (cfg.concentration.resamples < 2)
        throw config_error("concentration: needs at least 2 resamples");
    const std::uint64_t seed = cfg.seeds.empty() ? cfg.env.seed : cfg.seeds.front();
    const BaseKernelSpec base =
        cfg.fqi.base.sigma > 0.0 ? cfg.fqi.base : BaseKernelSpec{1.0};
    const int n_max = *std::max_element(cfg.grids.agents.begin(), cfg.grids.agents.end());
    const int n_ref = cfg.concentration.ref_multiplier * n_max;

    EnvSpec ref_env = cfg.env;
    ref_env.n_agents = n_ref;
    std::mt19937_64 ref_rng = make_stream_rng(seed, 0);
    const Config ref{0, env_reset(ref_env, ref_rng)};
    const double ref_self = embedding_inner(ref, ref, base);

    std::vector<ResultRow> rows;
    std::vector<double> log_n, log_mean;
    std::uint64_t stream = 1;
    for (const int n_agents : cfg.grids.agents) {
        EnvSpec env = cfg.env;
        env.n_agents = n_agents;
        std::vector<double> mmds;
        mmds.reserve(static_cast<std::size_t>(cfg.concentration.resamples));
        for (int r = 0; r < cfg.concentration.resamples; ++r, ++stream) {
            std::mt19937_64 rng = make_stream_rng(seed, stream);
            const Config sample{0, env_reset(env, rng)};
            const double self = embedding_inner(sample, sample, base);
            const double cross = embedding_inner(sample, ref, base);
            mmds.push_back(std::sqrt(detail::mmd_sq_from(self, ref_self, cross)));
        }
        const double m = mean(mmds);
        const double se = stddev(mmds) / std::sqrt(static_cast<double>(mmds.size()));
        rows.push_back(ResultRow{cfg.experiment, seed, n_agents, std::nullopt, std::nullopt,
                                 std::nullopt, "mean_mmd", m, std::nullopt});
        rows.push_back(ResultRow{cfg.experiment, seed, n_agents, std::nullopt, std::nullopt,
                                 std::nullopt, "stderr_mmd", se, std::nullopt});
        log_n.push_back(std::log(static_cast<double>(n_agents)));
        log_mean.push_back(std::log(m));
    }
    if (log_n.size() >= 2) {
        const LinearFit fit = least_squares_fit(log_n, log_mean);
        rows.push_back(ResultRow{cfg.experiment, seed, std::nullopt, std::nullopt, std::nullopt,
                                 std::nullopt, "loglog_slope", fit.slope, std::nullopt});
    }
    return rows;
}

inline std::vector<ResultRow> run_experiment(const ExperimentConfig& cfg) {
    if (cfg.experiment == "train") return run_train_experiment(cfg);
    if (cfg.experiment == "oracle-compare") return run_oracle_compare(cfg);
    if (cfg.experiment == "sweep-agents") return run_sweep_agents(cfg);
    if (cfg.experiment == "sweep-batch") return run_sweep_batch(cfg);
    if (cfg.experiment == "convergence") return run_convergence(cfg);
    if (cfg.experiment == "concentration") return run_concentration(cfg);
    throw config_error("unknown experiment: " + cfg.experiment);
}

}  // namespace mffqi
