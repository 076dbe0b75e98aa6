#pragma once

#include <mffqi/fqi.hpp>
#include <mffqi/rng.hpp>
#include <mffqi/stats.hpp>
#include <mffqi/types.hpp>

#include <cmath>
#include <cstdint>
#include <random>
#include <variant>
#include <vector>

namespace mffqi {

/**
 * Continuous-state mean-field environment. Each agent is coupled to the
 * population through the empirical mean:
 *
 *   s' = (1 - pull) s + pull mean(states) + drift_a + noise,
 *   reward = r_max * sigmoid(w . mean(states) + offset_a)  (+ optional noise).
 */
struct GaussianDriftParams {
    int d = 1;
    std::vector<std::vector<double>> drifts;  // one vector in R^d per action
    double pull = 0.0;                        // in [0, 1)
    double noise_std = 0.0;
    std::vector<double> reward_weights;       // w in R^d
    std::vector<double> reward_offsets;       // one offset per action
    double reward_noise_std = 0.0;
};

/**
 * Finite-state environment on a 1-D lattice. Agents occupy states
 * {0, ..., n_states-1} embedded at coordinates s * separation; observations
 * optionally carry Gaussian jitter. Per-agent transitions follow the
 * row-stochastic matrices P_a; when every row is one-hot the N-agent
 * histogram evolves deterministically and the configuration space is finite.
 * Rewards are linear in histogram fractions: r(a, h) = sum_s W[a][s] h_s / N,
 * which keeps them inside [0, r_max] whenever the weights are.
 */
struct DiscreteChainParams {
    int n_states = 2;
    std::vector<std::vector<std::vector<double>>> transitions;  // [action][state][state']
    std::vector<std::vector<double>> reward_weights;            // [action][state], in [0, r_max]
    double separation = 3.0;       // lattice spacing of the R^1 embedding
    double obs_noise_std = 0.0;    // jitter on observed coordinates
    std::vector<double> init_probs;  // initial per-agent state distribution ("iid" mode)
    /// "iid": each agent draws init_probs independently. "uniform-histogram":
    /// the latent histogram is drawn uniformly over all occupancy vectors, so
    /// the sampling distribution covers the whole mean-field simplex at every
    /// N instead of concentrating multinomially around its center.
    /// "fraction-grid": the latent histogram is drawn uniformly from
    /// init_fractions (occupancy fractions rounded to N agents), pinning the
    /// sampling distribution to the same mean-field states at every N so that
    /// N varies observation quality only.
    std::string init_mode = "iid";
    std::vector<std::vector<double>> init_fractions;  // used by "fraction-grid"
};

struct EnvSpec {
    std::variant<GaussianDriftParams, DiscreteChainParams> params;
    int n_agents = 1;
    double r_max = 1.0;
    double gamma = 0.9;
    std::uint64_t seed = 0;

    int n_actions() const {
        if (const auto* g = std::get_if<GaussianDriftParams>(&params))
            return static_cast<int>(g->drifts.size());
        return static_cast<int>(std::get<DiscreteChainParams>(params).transitions.size());
    }
    int state_dim() const {
        if (const auto* g = std::get_if<GaussianDriftParams>(&params)) return g->d;
        return 1;
    }
    bool is_chain() const { return std::holds_alternative<DiscreteChainParams>(params); }
    const DiscreteChainParams& chain() const { return std::get<DiscreteChainParams>(params); }
    const GaussianDriftParams& gauss() const { return std::get<GaussianDriftParams>(params); }
};

inline void validate(const GaussianDriftParams& p, double /*r_max*/) {
    if (p.d < 1) throw config_error("GaussianDriftParams: d must be >= 1");
    if (p.drifts.empty()) throw config_error("GaussianDriftParams: needs at least one action");
    for (const auto& v : p.drifts)
        if (static_cast<int>(v.size()) != p.d)
            throw config_error("GaussianDriftParams: drift dimension mismatch");
    if (!(p.pull >= 0.0 && p.pull < 1.0))
        throw config_error("GaussianDriftParams: pull must be in [0, 1)");
    if (p.noise_std < 0.0 || p.reward_noise_std < 0.0)
        throw config_error("GaussianDriftParams: negative noise std");
    if (static_cast<int>(p.reward_weights.size()) != p.d)
        throw config_error("GaussianDriftParams: reward weight dimension mismatch");
    if (p.reward_offsets.size() != p.drifts.size())
        throw config_error("GaussianDriftParams: need one reward offset per action");
}

inline void validate(const DiscreteChainParams& p, double r_max) {
    if (p.n_states < 1) throw config_error("DiscreteChainParams: n_states must be >= 1");
    if (p.transitions.empty()) throw config_error("DiscreteChainParams: needs at least one action");
    for (const auto& matrix : p.transitions) {
        if (static_cast<int>(matrix.size()) != p.n_states)
            throw config_error("DiscreteChainParams: transition matrix shape mismatch");
        for (const auto& row : matrix) {
            if (static_cast<int>(row.size()) != p.n_states)
                throw config_error("DiscreteChainParams: transition matrix shape mismatch");
            double sum = 0.0;
            for (double v : row) {
                if (v < 0.0) throw config_error("DiscreteChainParams: negative transition entry");
                sum += v;
            }
            if (std::abs(sum - 1.0) > 1e-12)
                throw config_error("DiscreteChainParams: transition row does not sum to 1");
        }
    }
    if (p.reward_weights.size() != p.transitions.size())
        throw config_error("DiscreteChainParams: need one reward row per action");
    for (const auto& row : p.reward_weights) {
        if (static_cast<int>(row.size()) != p.n_states)
            throw config_error("DiscreteChainParams: reward row shape mismatch");
        for (double v : row)
            if (v < 0.0 || v > r_max)
                throw config_error("DiscreteChainParams: reward weight outside [0, r_max]");
    }
    if (!(p.separation > 0.0)) throw config_error("DiscreteChainParams: separation must be positive");
    if (p.obs_noise_std < 0.0) throw config_error("DiscreteChainParams: negative obs noise");
    if (p.init_mode != "iid" && p.init_mode != "uniform-histogram" &&
        p.init_mode != "fraction-grid")
        throw config_error("DiscreteChainParams: unknown init_mode " + p.init_mode);
    if (p.init_mode == "fraction-grid") {
        if (p.init_fractions.empty())
            throw config_error("DiscreteChainParams: fraction-grid needs init_fractions");
        for (const auto& f : p.init_fractions) {
            if (static_cast<int>(f.size()) != p.n_states)
                throw config_error("DiscreteChainParams: init fraction size mismatch");
            double sum = 0.0;
            for (double v : f) {
                if (v < 0.0) throw config_error("DiscreteChainParams: negative init fraction");
                sum += v;
            }
            if (std::abs(sum - 1.0) > 1e-12)
                throw config_error("DiscreteChainParams: init fractions do not sum to 1");
        }
    }
    if (static_cast<int>(p.init_probs.size()) != p.n_states)
        throw config_error("DiscreteChainParams: init_probs size mismatch");
    double sum = 0.0;
    for (double v : p.init_probs) {
        if (v < 0.0) throw config_error("DiscreteChainParams: negative init probability");
        sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-12)
        throw config_error("DiscreteChainParams: init_probs do not sum to 1");
}

inline void validate(const EnvSpec& spec) {
    if (spec.n_agents < 1) throw config_error("EnvSpec: n_agents must be >= 1");
    if (!(spec.r_max > 0.0)) throw config_error("EnvSpec: r_max must be positive");
    if (!(spec.gamma > 0.0 && spec.gamma < 1.0)) throw config_error("EnvSpec: gamma must be in (0,1)");
    std::visit([&](const auto& p) { validate(p, spec.r_max); }, spec.params);
}

/// True when every transition row is a point mass, so the N-agent histogram
/// evolves deterministically.
inline bool chain_is_deterministic(const DiscreteChainParams& p) {
    for (const auto& matrix : p.transitions)
        for (const auto& row : matrix)
            for (double v : row)
                if (v != 0.0 && v != 1.0) return false;
    return true;
}

/// Destination state of a deterministic transition row.
inline int chain_dest(const DiscreteChainParams& p, ActionId action, int state) {
    const auto& row = p.transitions[static_cast<std::size_t>(action)][static_cast<std::size_t>(state)];
    for (int s = 0; s < p.n_states; ++s)
        if (row[static_cast<std::size_t>(s)] == 1.0) return s;
    throw contract_error("chain_dest: transition row is not deterministic");
}

namespace detail {

inline std::uint64_t binomial(int n, int k) {
    if (k < 0 || k > n) return 0;
    k = std::min(k, n - k);
    std::uint64_t result = 1;
    for (int i = 1; i <= k; ++i) result = result * static_cast<std::uint64_t>(n - k + i) / static_cast<std::uint64_t>(i);
    return result;
}

/// Number of occupancy vectors of n_agents over n_states (stars and bars).
inline std::uint64_t lattice_size(int n_states, int n_agents) {
    return binomial(n_agents + n_states - 1, n_states - 1);
}

/// Occupancy counts of N agents closest to the given fractions (remainder
/// lands on the last state).
inline std::vector<int> fractions_to_counts(const std::vector<double>& fractions, int n_agents) {
    const int n_states = static_cast<int>(fractions.size());
    std::vector<int> counts(static_cast<std::size_t>(n_states), 0);
    int assigned = 0;
    for (int s = 0; s + 1 < n_states; ++s) {
        int c = static_cast<int>(std::lround(fractions[static_cast<std::size_t>(s)] *
                                             static_cast<double>(n_agents)));
        c = std::min(c, n_agents - assigned);
        counts[static_cast<std::size_t>(s)] = c;
        assigned += c;
    }
    counts[static_cast<std::size_t>(n_states) - 1] = n_agents - assigned;
    return counts;
}

/// Histogram at `rank` in the lexicographic (by counts) enumeration of the
/// occupancy lattice.
inline std::vector<int> unrank_histogram(int n_states, int n_agents, std::uint64_t rank) {
    std::vector<int> counts(static_cast<std::size_t>(n_states), 0);
    int remaining = n_agents;
    for (int s = 0; s + 1 < n_states; ++s) {
        for (int c = 0; c <= remaining; ++c) {
            const std::uint64_t block = lattice_size(n_states - 1 - s, remaining - c);
            if (rank < block) {
                counts[static_cast<std::size_t>(s)] = c;
                remaining -= c;
                break;
            }
            rank -= block;
        }
    }
    counts[static_cast<std::size_t>(n_states) - 1] = remaining;
    return counts;
}

inline int draw_categorical(const std::vector<double>& probs, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    const double u = uni(rng);
    double acc = 0.0;
    for (std::size_t s = 0; s + 1 < probs.size(); ++s) {
        acc += probs[s];
        if (u < acc) return static_cast<int>(s);
    }
    return static_cast<int>(probs.size()) - 1;
}

/// Nearest-lattice rounding recovers the latent state from a (possibly
/// jittered) observed coordinate.
inline int chain_latent_state(const DiscreteChainParams& p, double coord) {
    const double idx = coord / p.separation;
    int s = static_cast<int>(std::lround(idx));
    if (s < 0) s = 0;
    if (s >= p.n_states) s = p.n_states - 1;
    return s;
}

inline std::vector<int> chain_latent_counts(const DiscreteChainParams& p, const AgentSample& sample) {
    if (sample.dim() != 1)
        throw contract_error("DiscreteChain: observations must be one-dimensional");
    std::vector<int> counts(static_cast<std::size_t>(p.n_states), 0);
    for (std::size_t i = 0; i < sample.size(); ++i)
        ++counts[static_cast<std::size_t>(chain_latent_state(p, sample.state(i)[0]))];
    return counts;
}

/// Convex combination of per-state weights by histogram fractions; stays in
/// [0, r_max] because the weights do.
inline double chain_reward_from_counts(const DiscreteChainParams& p, ActionId action,
                                       const std::vector<int>& counts) {
    double total = 0.0;
    double n = 0.0;
    for (int c : counts) n += c;
    for (int s = 0; s < p.n_states; ++s)
        total += p.reward_weights[static_cast<std::size_t>(action)][static_cast<std::size_t>(s)] *
                 (static_cast<double>(counts[static_cast<std::size_t>(s)]) / n);
    return total;
}

}  // namespace detail

/// Draw N agent states from the environment's initial distribution.
/// Deterministic given the rng stream.
inline AgentSample env_reset(const EnvSpec& spec, std::mt19937_64& rng) {
    validate(spec);
    const std::size_t n = static_cast<std::size_t>(spec.n_agents);
    if (const auto* g = std::get_if<GaussianDriftParams>(&spec.params)) {
        std::normal_distribution<double> normal(0.0, 1.0);
        std::vector<double> flat(n * static_cast<std::size_t>(g->d));
        for (double& v : flat) v = normal(rng);
        return AgentSample(std::move(flat), static_cast<std::size_t>(g->d));
    }
    const auto& p = spec.chain();
    std::normal_distribution<double> jitter(0.0, 1.0);
    std::vector<double> flat;
    flat.reserve(n);
    if (p.init_mode == "uniform-histogram" || p.init_mode == "fraction-grid") {
        std::vector<int> counts;
        if (p.init_mode == "uniform-histogram") {
            const std::uint64_t size = detail::lattice_size(p.n_states, spec.n_agents);
            std::uniform_int_distribution<std::uint64_t> uni(0, size - 1);
            counts = detail::unrank_histogram(p.n_states, spec.n_agents, uni(rng));
        } else {
            std::uniform_int_distribution<std::size_t> uni(0, p.init_fractions.size() - 1);
            counts = detail::fractions_to_counts(p.init_fractions[uni(rng)], spec.n_agents);
        }
        for (int s = 0; s < p.n_states; ++s) {
            for (int k = 0; k < counts[static_cast<std::size_t>(s)]; ++k) {
                double coord = static_cast<double>(s) * p.separation;
                if (p.obs_noise_std > 0.0) coord += p.obs_noise_std * jitter(rng);
                flat.push_back(coord);
            }
        }
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            const int s = detail::draw_categorical(p.init_probs, rng);
            double coord = static_cast<double>(s) * p.separation;
            if (p.obs_noise_std > 0.0) coord += p.obs_noise_std * jitter(rng);
            flat.push_back(coord);
        }
    }
    return AgentSample(std::move(flat), 1);
}

struct StepResult {
    double reward;
    AgentSample next;
};

/**
 * One environment transition. The reward depends on the sample only through
 * permutation-invariant statistics (the empirical mean, or the recovered
 * lattice histogram), and the returned observation set has the same N.
 */
inline StepResult env_step(const EnvSpec& spec, const AgentSample& sample, ActionId action,
                           std::mt19937_64& rng) {
    validate(spec);
    if (action < 0 || action >= spec.n_actions())
        throw contract_error("env_step: action out of range");
    if (sample.size() != static_cast<std::size_t>(spec.n_agents))
        throw contract_error("env_step: sample size does not match n_agents");
    const std::size_t n = sample.size();

    if (const auto* g = std::get_if<GaussianDriftParams>(&spec.params)) {
        if (sample.dim() != static_cast<std::size_t>(g->d))
            throw contract_error("env_step: sample dimension mismatch");
        const std::size_t d = sample.dim();
        std::vector<double> center(d, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const auto s = sample.state(i);
            for (std::size_t c = 0; c < d; ++c) center[c] += s[c];
        }
        for (double& v : center) v /= static_cast<double>(n);

        double z = g->reward_offsets[static_cast<std::size_t>(action)];
        for (std::size_t c = 0; c < d; ++c) z += g->reward_weights[c] * center[c];
        double reward = spec.r_max * sigmoid(z);
        std::normal_distribution<double> normal(0.0, 1.0);
        if (g->reward_noise_std > 0.0) {
            reward += g->reward_noise_std * normal(rng);
            reward = std::min(spec.r_max, std::max(0.0, reward));
        }

        const auto& drift = g->drifts[static_cast<std::size_t>(action)];
        std::vector<double> flat(n * d);
        for (std::size_t i = 0; i < n; ++i) {
            const auto s = sample.state(i);
            for (std::size_t c = 0; c < d; ++c) {
                double v = (1.0 - g->pull) * s[c] + g->pull * center[c] + drift[c];
                if (g->noise_std > 0.0) v += g->noise_std * normal(rng);
                flat[i * d + c] = v;
            }
        }
        return StepResult{reward, AgentSample(std::move(flat), d)};
    }

    const auto& p = spec.chain();
    const std::vector<int> counts = detail::chain_latent_counts(p, sample);
    const double reward = detail::chain_reward_from_counts(p, action, counts);
    const bool deterministic = chain_is_deterministic(p);
    std::normal_distribution<double> jitter(0.0, 1.0);
    std::vector<double> flat;
    flat.reserve(n);
    // Latent agents iterate in ascending state order: a canonical order over
    // the multiset, so rng consumption is permutation-independent.
    for (int s = 0; s < p.n_states; ++s) {
        for (int k = 0; k < counts[static_cast<std::size_t>(s)]; ++k) {
            int dest;
            if (deterministic) {
                dest = chain_dest(p, action, s);
            } else {
                dest = detail::draw_categorical(
                    p.transitions[static_cast<std::size_t>(action)][static_cast<std::size_t>(s)], rng);
            }
            double coord = static_cast<double>(dest) * p.separation;
            if (p.obs_noise_std > 0.0) coord += p.obs_noise_std * jitter(rng);
            flat.push_back(coord);
        }
    }
    return StepResult{reward, AgentSample(std::move(flat), 1)};
}

struct ActionPolicy {
    enum class Kind { uniform_random, fixed, from_policy };

    Kind kind = Kind::uniform_random;
    ActionId fixed_action = 0;
    const GreedyPolicy* policy = nullptr;

    static ActionPolicy uniform() { return ActionPolicy{}; }
    static ActionPolicy fixed(ActionId a) { return ActionPolicy{Kind::fixed, a, nullptr}; }
    static ActionPolicy greedy(const GreedyPolicy& p) {
        return ActionPolicy{Kind::from_policy, 0, &p};
    }
};

namespace detail {

inline ActionId choose_action(const ActionPolicy& policy, int n_actions, const AgentSample& sample,
                              std::mt19937_64& rng) {
    switch (policy.kind) {
        case ActionPolicy::Kind::uniform_random: {
            std::uniform_int_distribution<int> uni(0, n_actions - 1);
            return uni(rng);
        }
        case ActionPolicy::Kind::fixed:
            if (policy.fixed_action < 0 || policy.fixed_action >= n_actions)
                throw contract_error("ActionPolicy: fixed action out of range");
            return policy.fixed_action;
        case ActionPolicy::Kind::from_policy:
            if (policy.policy == nullptr) throw contract_error("ActionPolicy: missing policy");
            return greedy_action(*policy.policy, sample);
    }
    throw contract_error("ActionPolicy: unknown kind");
}

}  // namespace detail

/**
 * Collect n transition records, each from a fresh reset followed by one step.
 * Record i consumes its own rng stream derived from (seed, i), so the batch
 * contents are independent of collection order.
 */
inline Batch collect_batch(const EnvSpec& spec, int n, const ActionPolicy& policy,
                           std::uint64_t seed) {
    validate(spec);
    if (n < 1) throw contract_error("collect_batch: n must be >= 1");
    Batch batch;
    batch.n_actions = spec.n_actions();
    batch.r_max = spec.r_max;
    batch.gamma = spec.gamma;
    batch.records.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        std::mt19937_64 rng = make_stream_rng(seed, static_cast<std::uint64_t>(i));
        AgentSample sample = env_reset(spec, rng);
        const ActionId action = detail::choose_action(policy, batch.n_actions, sample, rng);
        StepResult step = env_step(spec, sample, action, rng);
        batch.records.push_back(
            TransitionRecord{std::move(sample), action, step.reward, std::move(step.next)});
    }
    return batch;
}

}  // namespace mffqi
