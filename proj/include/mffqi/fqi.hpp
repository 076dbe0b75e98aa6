#pragma once

#include <mffqi/kernels.hpp>
#include <mffqi/regression.hpp>
#include <mffqi/types.hpp>

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

namespace mffqi {

/// One observed tuple: N agent states, the central action, the reward, and the
/// N agent states observed after the transition.
struct TransitionRecord {
    AgentSample sample;
    ActionId action;
    double reward;
    AgentSample next_sample;
};

/// The dataset one training run consumes.
struct Batch {
    std::vector<TransitionRecord> records;
    int n_actions = 0;
    double r_max = 0.0;
    double gamma = 0.0;

    std::size_t size() const { return records.size(); }
    double q_max() const { return r_max / (1.0 - gamma); }
};

inline void validate(const Batch& b) {
    if (b.records.empty()) throw contract_error("Batch: needs at least one record");
    if (b.n_actions < 1) throw contract_error("Batch: n_actions must be >= 1");
    if (!(b.r_max > 0.0) || !std::isfinite(b.r_max))
        throw contract_error("Batch: r_max must be positive and finite");
    if (!(b.gamma > 0.0 && b.gamma < 1.0)) throw contract_error("Batch: gamma must be in (0,1)");
    const std::size_t n_agents = b.records.front().sample.size();
    const std::size_t dim = b.records.front().sample.dim();
    for (const auto& rec : b.records) {
        if (rec.action < 0 || rec.action >= b.n_actions)
            throw contract_error("Batch: record action out of range");
        if (!std::isfinite(rec.reward) || rec.reward > b.r_max)
            throw contract_error("Batch: reward exceeds r_max or is non-finite");
        if (rec.sample.size() != n_agents || rec.next_sample.size() != n_agents)
            throw contract_error("Batch: number of observed agents differs across records");
        if (rec.sample.dim() != dim || rec.next_sample.dim() != dim)
            throw contract_error("Batch: state dimension differs across records");
    }
}

struct FqiConfig {
    int kappa = 1;                         // iterations, >= 1
    double lambda = 1e-6;                  // ridge parameter, > 0, constant across iterations
    BaseKernelSpec base;
    EmbeddingKernelSpec emb;
    double initial_q = 0.0;                // constant initial action-value function
};

inline void validate(const FqiConfig& cfg) {
    if (cfg.kappa < 1) throw contract_error("FqiConfig: kappa must be >= 1");
    if (!(cfg.lambda > 0.0) || !std::isfinite(cfg.lambda))
        throw contract_error("FqiConfig: lambda must be positive and finite");
    if (!std::isfinite(cfg.initial_q)) throw contract_error("FqiConfig: non-finite initial_q");
    validate(cfg.base);
    validate(cfg.emb);
}

/// Greedy policy with respect to a fitted model; ties break to the lowest
/// action index.
struct GreedyPolicy {
    QModel model;
    int n_actions = 0;
};

/// The batch's support configurations (a_i, sample_i), in record order.
inline std::vector<Config> support_configs(const Batch& batch) {
    std::vector<Config> out;
    out.reserve(batch.size());
    for (const auto& rec : batch.records) out.push_back(Config{rec.action, rec.sample});
    return out;
}

/// Query configurations (a, next_sample_i) for one action, in record order.
inline std::vector<Config> next_query_configs(const Batch& batch, ActionId action) {
    std::vector<Config> out;
    out.reserve(batch.size());
    for (const auto& rec : batch.records) out.push_back(Config{action, rec.next_sample});
    return out;
}

/**
 * Bootstrapped regression targets y_i = r_i + gamma * max_a Q(a, next_i).
 *
 * `caches[a]` must be the cross-Gram between q.support and the action-a next
 * queries. The model must be truncated, so each target is bounded by
 * r_max + gamma * q_max = q_max.
 */
inline Eigen::VectorXd compute_targets(const Batch& batch, const QModel& q,
                                       std::span<const Eigen::MatrixXd> caches) {
    validate(batch);
    validate(q);
    if (!q.truncated) throw contract_error("compute_targets: model must be truncated");
    if (static_cast<int>(caches.size()) != batch.n_actions)
        throw contract_error("compute_targets: need one cache per action");
    const Eigen::Index n = static_cast<Eigen::Index>(batch.size());
    for (const auto& cache : caches)
        if (cache.rows() != static_cast<Eigen::Index>(q.support.size()) || cache.cols() != n)
            throw contract_error("compute_targets: cache shape mismatch");
    Eigen::VectorXd targets(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        double best = -std::numeric_limits<double>::infinity();
        for (int a = 0; a < batch.n_actions; ++a) {
            const double* col =
                caches[static_cast<std::size_t>(a)].data() + static_cast<std::size_t>(q.support.size()) * static_cast<std::size_t>(i);
            const double raw = detail::representer_sum(q.alpha, col, q.support.size());
            const double v = detail::apply_truncation(q, raw);
            if (v > best) best = v;
        }
        targets[i] = batch.records[static_cast<std::size_t>(i)].reward + batch.gamma * best;
    }
    return targets;
}

/// Cache-free variant; evaluates the model per query.
inline Eigen::VectorXd compute_targets(const Batch& batch, const QModel& q) {
    validate(batch);
    validate(q);
    if (!q.truncated) throw contract_error("compute_targets: model must be truncated");
    const Eigen::Index n = static_cast<Eigen::Index>(batch.size());
    Eigen::VectorXd targets(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& rec = batch.records[static_cast<std::size_t>(i)];
        double best = -std::numeric_limits<double>::infinity();
        for (int a = 0; a < batch.n_actions; ++a) {
            const double v = predict(q, Config{a, rec.next_sample});
            if (v > best) best = v;
        }
        targets[i] = rec.reward + batch.gamma * best;
    }
    return targets;
}

/// One update: fit the ridge regression on the bootstrapped targets of q_prev
/// and truncate. The support Gram is precomputed so iterations reuse it.
inline QModel fqi_step(const Batch& batch, const QModel& q_prev, const FqiConfig& cfg,
                       const Eigen::MatrixXd& support_gram,
                       std::span<const Eigen::MatrixXd> caches) {
    validate(cfg);
    const Eigen::VectorXd targets = compute_targets(batch, q_prev, caches);
    const Eigen::VectorXd alpha = fit_krr(RidgeProblem{support_gram, targets, cfg.lambda});
    return QModel{support_configs(batch), alpha, cfg.base, cfg.emb, batch.q_max(), true, false};
}

struct FqiDiagnostics {
    /// (1/n) sum_i (Q_k(support_i) - y_{i,k-1})^2 for each iteration k, where
    /// y_{k-1} are the targets iteration k was fit on.
    std::vector<double> fit_residual_sq;
    /// Sup-norm deltas between consecutive target vectors (kappa - 1 entries).
    std::vector<double> target_delta_inf;
    double gram_build_seconds = 0.0;
    double total_seconds = 0.0;
    /// Populated when RunOptions::keep_history is set: coefficients and
    /// targets after each iteration.
    std::vector<Eigen::VectorXd> alpha_history;
    std::vector<Eigen::VectorXd> target_history;
};

struct FqiResult {
    QModel model;
    GreedyPolicy policy;
    FqiDiagnostics diagnostics;
};

struct RunOptions {
    bool use_cache = true;     // reuse precomputed next-query cross-Grams across iterations
    bool keep_history = false;
};

/**
 * Mean-field fitted Q-iteration over a fixed batch.
 *
 * The support Gram and the per-action next-query cross-Grams are computed once
 * before the loop; each iteration computes targets from the current truncated
 * model, refits the ridge regression (single factorization, one solve per
 * iteration), and truncates. Runs exactly cfg.kappa iterations from the
 * constant initial action-value function. Deterministic: identical inputs give
 * bit-identical models and diagnostics, with or without caching.
 */
inline FqiResult run_mffqi(const Batch& batch, const FqiConfig& cfg, const RunOptions& opt = {}) {
    validate(batch);
    validate(cfg);
    const auto t_start = std::chrono::steady_clock::now();
    const std::size_t n = batch.size();
    std::vector<Config> support = support_configs(batch);

    const auto t_gram = std::chrono::steady_clock::now();
    const Eigen::MatrixXd support_gram = cross_gram(support, support, cfg.base, cfg.emb);
    std::vector<Eigen::MatrixXd> caches;
    if (opt.use_cache) {
        caches.reserve(static_cast<std::size_t>(batch.n_actions));
        for (int a = 0; a < batch.n_actions; ++a)
            caches.push_back(cross_gram(support, next_query_configs(batch, a), cfg.base, cfg.emb));
    }
    FqiDiagnostics diag;
    diag.gram_build_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_gram).count();

    KrrSolver solver(support_gram, cfg.lambda);
    const double q_max = batch.q_max();

    QModel model{support, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n)),
                 cfg.base, cfg.emb, q_max, true, false};
    Eigen::VectorXd prev_targets;
    for (int k = 0; k < cfg.kappa; ++k) {
        Eigen::VectorXd targets;
        if (k == 0) {
            // Initial action-value function is the constant cfg.initial_q;
            // the max over actions of a constant is the constant itself.
            const double v0 = std::min(cfg.initial_q, q_max);
            targets.resize(static_cast<Eigen::Index>(n));
            for (std::size_t i = 0; i < n; ++i)
                targets[static_cast<Eigen::Index>(i)] = batch.records[i].reward + batch.gamma * v0;
        } else if (opt.use_cache) {
            targets = compute_targets(batch, model, caches);
        } else {
            targets = compute_targets(batch, model);
        }
        if (k > 0)
            diag.target_delta_inf.push_back((targets - prev_targets).lpNorm<Eigen::Infinity>());

        model.alpha = solver.solve(targets);

        double resid_sq = 0.0;
        const Eigen::VectorXd fitted = support_gram * model.alpha;
        for (std::size_t i = 0; i < n; ++i) {
            const double q_i = detail::apply_truncation(model, fitted[static_cast<Eigen::Index>(i)]);
            const double e = q_i - targets[static_cast<Eigen::Index>(i)];
            resid_sq += e * e;
        }
        diag.fit_residual_sq.push_back(resid_sq / static_cast<double>(n));

        if (opt.keep_history) {
            diag.alpha_history.push_back(model.alpha);
            diag.target_history.push_back(targets);
        }
        prev_targets = std::move(targets);
    }
    diag.total_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();

    GreedyPolicy policy{model, batch.n_actions};
    return FqiResult{std::move(model), std::move(policy), std::move(diag)};
}

/// argmax over actions of the model's Q-value at the given sample; ties break
/// to the lowest action index.
inline ActionId greedy_action(const GreedyPolicy& policy, const AgentSample& sample) {
    if (policy.n_actions < 1) throw contract_error("greedy_action: invalid action count");
    ActionId best_action = 0;
    double best = -std::numeric_limits<double>::infinity();
    for (int a = 0; a < policy.n_actions; ++a) {
        const double v = predict(policy.model, Config{a, sample});
        if (v > best) {
            best = v;
            best_action = a;
        }
    }
    return best_action;
}

/// Empirical Bellman residual of a model on a batch:
/// sqrt((1/n) sum_i (Q(w_i) - [r_i + gamma max_a Q(a, next_i)])^2).
inline double bellman_residual(const QModel& q, const Batch& batch) {
    validate(batch);
    const Eigen::VectorXd targets = compute_targets(batch, q);
    double acc = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& rec = batch.records[i];
        const double v = predict(q, Config{rec.action, rec.sample});
        const double e = v - targets[static_cast<Eigen::Index>(i)];
        acc += e * e;
    }
    return std::sqrt(acc / static_cast<double>(batch.size()));
}

}  // namespace mffqi
