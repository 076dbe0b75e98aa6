#pragma once

#include <mffqi/envs.hpp>
#include <mffqi/fqi.hpp>
#include <mffqi/regression.hpp>
#include <mffqi/types.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <deque>
#include <set>
#include <vector>

namespace mffqi {

/// Canonical multiset encoding of an N-agent discrete joint state: per-state
/// occupancy counts. Permutation-invariant by construction.
struct HistogramState {
    std::vector<int> counts;

    int total() const {
        int n = 0;
        for (int c : counts) n += c;
        return n;
    }

    friend bool operator==(const HistogramState& a, const HistogramState& b) {
        return a.counts == b.counts;
    }
    friend bool operator<(const HistogramState& a, const HistogramState& b) {
        return a.counts < b.counts;
    }
};

/// Deterministic successor histogram: all agents at state s move to dest(a, s).
inline HistogramState chain_next_histogram(const DiscreteChainParams& p, ActionId action,
                                           const HistogramState& h) {
    HistogramState next;
    next.counts.assign(static_cast<std::size_t>(p.n_states), 0);
    for (int s = 0; s < p.n_states; ++s) {
        const int c = h.counts[static_cast<std::size_t>(s)];
        if (c > 0) next.counts[static_cast<std::size_t>(chain_dest(p, action, s))] += c;
    }
    return next;
}

inline double chain_reward(const DiscreteChainParams& p, ActionId action, const HistogramState& h) {
    return detail::chain_reward_from_counts(p, action, h.counts);
}

/**
 * BFS closure of `init` under all actions. Requires the deterministic
 * transition variant; the result is sorted lexicographically so indices are
 * stable regardless of traversal order.
 */
inline std::vector<HistogramState> enumerate_configs(const DiscreteChainParams& p, int n_agents,
                                                     const HistogramState& init) {
    if (!chain_is_deterministic(p))
        throw config_error("enumerate_configs: stochastic transition variant is unsupported");
    if (static_cast<int>(init.counts.size()) != p.n_states || init.total() != n_agents)
        throw contract_error("enumerate_configs: init histogram does not match n_states/n_agents");
    const int n_actions = static_cast<int>(p.transitions.size());
    std::set<std::vector<int>> seen;
    std::deque<HistogramState> queue;
    seen.insert(init.counts);
    queue.push_back(init);
    while (!queue.empty()) {
        HistogramState h = queue.front();
        queue.pop_front();
        for (int a = 0; a < n_actions; ++a) {
            HistogramState next = chain_next_histogram(p, a, h);
            if (seen.insert(next.counts).second) queue.push_back(next);
        }
    }
    std::vector<HistogramState> out;
    out.reserve(seen.size());
    for (const auto& counts : seen) out.push_back(HistogramState{counts});
    return out;
}

/// All histograms of N agents over n_states states, in lexicographic order.
/// Closed under any deterministic dynamics, so usable as a full oracle domain.
inline std::vector<HistogramState> all_histograms(int n_states, int n_agents) {
    if (n_states < 1 || n_agents < 1) throw contract_error("all_histograms: invalid sizes");
    std::vector<HistogramState> out;
    std::vector<int> counts(static_cast<std::size_t>(n_states), 0);
    const auto recurse = [&](auto&& self, int state, int remaining) -> void {
        if (state == n_states - 1) {
            counts[static_cast<std::size_t>(state)] = remaining;
            out.push_back(HistogramState{counts});
            return;
        }
        for (int c = 0; c <= remaining; ++c) {
            counts[static_cast<std::size_t>(state)] = c;
            self(self, state + 1, remaining - c);
        }
    };
    recurse(recurse, 0, n_agents);
    std::sort(out.begin(), out.end());
    return out;
}

/// Exact optimal Q-values over a finite, transition-closed set of histograms.
struct OracleTable {
    std::vector<HistogramState> states;  // sorted
    Eigen::MatrixXd q;                   // states x actions
    std::vector<std::vector<int>> next;  // successor index per (state, action)
    double gamma = 0.0;
    double r_max = 0.0;
    /// Sup-norm change per value-iteration sweep, for convergence diagnostics.
    std::vector<double> sweep_deltas;

    int index_of(const HistogramState& h) const {
        const auto it = std::lower_bound(states.begin(), states.end(), h);
        if (it == states.end() || !(*it == h))
            throw contract_error("OracleTable: histogram not in table");
        return static_cast<int>(it - states.begin());
    }
};

/**
 * Value iteration to the Bellman fixed point: Q(h, a) <- r(a, h) +
 * gamma max_a' Q(next(h, a), a'), iterated until the sup-norm change is at
 * most tol. The converged table has Bellman residual at most tol / (1-gamma).
 */
inline OracleTable exact_value_iteration(const std::vector<HistogramState>& reachable,
                                         const DiscreteChainParams& p, double r_max, double gamma,
                                         double tol = 1e-12) {
    if (!chain_is_deterministic(p))
        throw config_error("exact_value_iteration: stochastic variant is unsupported");
    if (reachable.empty()) throw contract_error("exact_value_iteration: empty state set");
    if (!(gamma >= 0.0 && gamma < 1.0))
        throw contract_error("exact_value_iteration: gamma must be in [0,1)");
    OracleTable table;
    table.states = reachable;
    std::sort(table.states.begin(), table.states.end());
    table.gamma = gamma;
    table.r_max = r_max;
    const int n_states = static_cast<int>(table.states.size());
    const int n_actions = static_cast<int>(p.transitions.size());

    Eigen::MatrixXd rewards(n_states, n_actions);
    table.next.assign(static_cast<std::size_t>(n_states),
                      std::vector<int>(static_cast<std::size_t>(n_actions), -1));
    for (int si = 0; si < n_states; ++si) {
        for (int a = 0; a < n_actions; ++a) {
            rewards(si, a) = chain_reward(p, a, table.states[static_cast<std::size_t>(si)]);
            const HistogramState succ =
                chain_next_histogram(p, a, table.states[static_cast<std::size_t>(si)]);
            table.next[static_cast<std::size_t>(si)][static_cast<std::size_t>(a)] =
                table.index_of(succ);  // throws when the set is not closed
        }
    }

    table.q = Eigen::MatrixXd::Zero(n_states, n_actions);
    const long max_sweeps = 1000000;
    for (long sweep = 0; sweep < max_sweeps; ++sweep) {
        Eigen::MatrixXd next_q(n_states, n_actions);
        for (int si = 0; si < n_states; ++si) {
            for (int a = 0; a < n_actions; ++a) {
                const int succ = table.next[static_cast<std::size_t>(si)][static_cast<std::size_t>(a)];
                next_q(si, a) = rewards(si, a) + gamma * table.q.row(succ).maxCoeff();
            }
        }
        const double delta = (next_q - table.q).cwiseAbs().maxCoeff();
        table.q = std::move(next_q);
        table.sweep_deltas.push_back(delta);
        if (delta <= tol) return table;
    }
    throw numerical_error("exact_value_iteration: did not converge");
}

/// Histogram of a sample whose states sit exactly on the lattice points.
inline HistogramState lift_sample(const AgentSample& sample, const DiscreteChainParams& p) {
    if (sample.dim() != 1) throw contract_error("lift_sample: states must be one-dimensional");
    HistogramState h;
    h.counts.assign(static_cast<std::size_t>(p.n_states), 0);
    const double tol = 1e-9 * std::max(1.0, p.separation);
    for (std::size_t i = 0; i < sample.size(); ++i) {
        const double x = sample.state(i)[0];
        const int s = detail::chain_latent_state(p, x);
        if (std::abs(x - static_cast<double>(s) * p.separation) > tol)
            throw contract_error("lift_sample: off-lattice state");
        ++h.counts[static_cast<std::size_t>(s)];
    }
    return h;
}

/// Exact lattice observation of a histogram (no jitter).
inline AgentSample histogram_to_sample(const HistogramState& h, const DiscreteChainParams& p) {
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(h.total()));
    for (int s = 0; s < p.n_states; ++s)
        for (int k = 0; k < h.counts[static_cast<std::size_t>(s)]; ++k)
            flat.push_back(static_cast<double>(s) * p.separation);
    return AgentSample(std::move(flat), 1);
}

struct CompareReport {
    double sup_err = 0.0;
    double mean_err = 0.0;
    /// Fraction of configurations where the model's greedy action attains the
    /// oracle's optimum; oracle ties count as agreement when the model picks
    /// any tied action.
    double argmax_agreement = 0.0;
};

/// Evaluate a trained model against the exact table over the full finite
/// configuration set, using exact lattice observations as queries.
/// Predictions run through one batched pass, which matches per-config
/// predict calls to 0 ulp.
inline CompareReport compare_q(const QModel& model, const OracleTable& oracle,
                               const DiscreteChainParams& p, int n_agents) {
    validate(model);
    if (oracle.states.empty()) throw contract_error("compare_q: empty oracle");
    if (model.support.front().sample.dim() != 1)
        throw contract_error("compare_q: model was not trained on one-dimensional observations");
    const int n_actions = static_cast<int>(oracle.q.cols());
    std::vector<Config> queries;
    queries.reserve(oracle.states.size() * static_cast<std::size_t>(n_actions));
    for (const HistogramState& h : oracle.states) {
        if (h.total() != n_agents)
            throw contract_error("compare_q: oracle histogram does not match n_agents");
        const AgentSample sample = histogram_to_sample(h, p);
        for (int a = 0; a < n_actions; ++a) queries.push_back(Config{a, sample});
    }
    const std::vector<double> preds = predict_batch(model, queries);

    CompareReport report;
    double total_err = 0.0;
    int agreements = 0;
    const double tie_tol = 1e-9;
    for (std::size_t si = 0; si < oracle.states.size(); ++si) {
        int model_best = 0;
        double model_best_value = -std::numeric_limits<double>::infinity();
        for (int a = 0; a < n_actions; ++a) {
            const double pred = preds[si * static_cast<std::size_t>(n_actions) + static_cast<std::size_t>(a)];
            const double err = std::abs(pred - oracle.q(static_cast<Eigen::Index>(si), a));
            report.sup_err = std::max(report.sup_err, err);
            total_err += err;
            if (pred > model_best_value) {
                model_best_value = pred;
                model_best = a;
            }
        }
        const double row_max = oracle.q.row(static_cast<Eigen::Index>(si)).maxCoeff();
        if (oracle.q(static_cast<Eigen::Index>(si), model_best) >= row_max - tie_tol) ++agreements;
    }
    const double n_configs = static_cast<double>(oracle.states.size() * static_cast<std::size_t>(n_actions));
    report.mean_err = total_err / n_configs;
    report.argmax_agreement =
        static_cast<double>(agreements) / static_cast<double>(oracle.states.size());
    return report;
}

}  // namespace mffqi
