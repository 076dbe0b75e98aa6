#pragma once

#include <mffqi/stats.hpp>
#include <mffqi/types.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

namespace mffqi {

namespace detail {

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
    double d2 = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double diff = a[i] - b[i];
        d2 += diff * diff;
    }
    return d2;
}

/// Gram sum over two samples in canonical (sorted-row, fixed-operand) order.
/// Callers must have ordered the operands; this keeps every code path that
/// touches the same pair of samples bit-identical.
inline double gram_sum(const AgentSample& x, const AgentSample& y, double inv_two_sigma_sq) {
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const auto xi = x.state(i);
        for (std::size_t j = 0; j < y.size(); ++j) {
            acc += std::exp(-squared_distance(xi, y.state(j)) * inv_two_sigma_sq);
        }
    }
    return acc;
}

inline double mmd_sq_from(double self_a, double self_b, double cross) {
    // Clamp guards against cancellation for near-identical samples.
    return std::max(0.0, self_a + self_b - 2.0 * cross);
}

inline double gaussian_on_mmd(double self_a, double self_b, double cross, double tau) {
    return std::exp(-mmd_sq_from(self_a, self_b, cross) / (2.0 * tau * tau));
}

}  // namespace detail

/// k((a,s),(a',s')) = 1{a=a'} * exp(-|s-s'|^2 / (2 sigma^2)).
/// Symmetric, in [0,1], and k(u,u) = 1.
inline double base_kernel_eval(ActionId action_x, std::span<const double> state_x,
                               ActionId action_y, std::span<const double> state_y,
                               const BaseKernelSpec& spec) {
    validate(spec);
    if (state_x.size() != state_y.size())
        throw contract_error("base_kernel_eval: state dimensions differ");
    if (state_x.empty()) throw contract_error("base_kernel_eval: empty states");
    if (action_x != action_y) return 0.0;
    const double inv = 1.0 / (2.0 * spec.sigma * spec.sigma);
    return std::exp(-detail::squared_distance(state_x, state_y) * inv);
}

/**
 * Inner product of the empirical mean embeddings of two configurations,
 * reduced to a Gram sum over the raw agent samples:
 *
 *   <mu_A, mu_B> = 1{a_A = a_B} / (N_A N_B) * sum_ij k(s_i, s'_j).
 *
 * The summation runs over canonically sorted samples with the
 * lexicographically smaller operand outermost, so the value is invariant
 * under permutation of either sample and under swapping A and B, bit-exactly.
 */
inline double embedding_inner(const Config& a, const Config& b, const BaseKernelSpec& spec) {
    validate(spec);
    if (a.sample.dim() != b.sample.dim())
        throw contract_error("embedding_inner: state dimensions differ");
    if (a.action != b.action) return 0.0;
    const AgentSample* x = &a.sample;
    const AgentSample* y = &b.sample;
    if (sample_less(*y, *x)) std::swap(x, y);
    const double inv = 1.0 / (2.0 * spec.sigma * spec.sigma);
    return detail::gram_sum(*x, *y, inv) /
           (static_cast<double>(x->size()) * static_cast<double>(y->size()));
}

/// Squared MMD between the embeddings of two configurations, clamped at 0.
inline double mmd_sq(const Config& a, const Config& b, const BaseKernelSpec& spec) {
    const double self_a = embedding_inner(a, a, spec);
    const double self_b = embedding_inner(b, b, spec);
    const double cross = embedding_inner(a, b, spec);
    return detail::mmd_sq_from(self_a, self_b, cross);
}

/// Second-level kernel K on mean embeddings. Linear: <mu_A, mu_B>.
/// GaussianOnMMD: exp(-mmd^2 / (2 tau^2)). Both are bounded by 1 and Hoelder
/// with exponent 1 (L = 1/tau for the Gaussian variant).
inline double embedding_kernel_eval(const Config& a, const Config& b, const BaseKernelSpec& base,
                                    const EmbeddingKernelSpec& emb) {
    validate(emb);
    if (emb.variant == EmbeddingKernelSpec::Variant::linear) return embedding_inner(a, b, base);
    const double self_a = embedding_inner(a, a, base);
    const double self_b = embedding_inner(b, b, base);
    const double cross = embedding_inner(a, b, base);
    return detail::gaussian_on_mmd(self_a, self_b, cross, emb.tau);
}

/**
 * Matrix of K(rows[i], cols[j]). Entries match element-wise
 * embedding_kernel_eval calls to 0 ulp: per-configuration self inner products
 * are hoisted but combined through the same expressions.
 */
inline Eigen::MatrixXd cross_gram(std::span<const Config> rows, std::span<const Config> cols,
                                  const BaseKernelSpec& base, const EmbeddingKernelSpec& emb) {
    validate(base);
    validate(emb);
    if (rows.empty() || cols.empty()) throw contract_error("cross_gram: empty config sequence");
    Eigen::MatrixXd g(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
    if (emb.variant == EmbeddingKernelSpec::Variant::linear) {
        for (std::size_t i = 0; i < rows.size(); ++i)
            for (std::size_t j = 0; j < cols.size(); ++j)
                g(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                    embedding_inner(rows[i], cols[j], base);
        return g;
    }
    std::vector<double> self_rows(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i)
        self_rows[i] = embedding_inner(rows[i], rows[i], base);
    std::vector<double> self_cols(cols.size());
    for (std::size_t j = 0; j < cols.size(); ++j)
        self_cols[j] = embedding_inner(cols[j], cols[j], base);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < cols.size(); ++j) {
            const double cross = embedding_inner(rows[i], cols[j], base);
            g(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                detail::gaussian_on_mmd(self_rows[i], self_cols[j], cross, emb.tau);
        }
    }
    return g;
}

inline Eigen::MatrixXd cross_gram(const std::vector<Config>& rows, const std::vector<Config>& cols,
                                  const BaseKernelSpec& base, const EmbeddingKernelSpec& emb) {
    return cross_gram(std::span<const Config>(rows), std::span<const Config>(cols), base, emb);
}

/**
 * Median heuristic for the base bandwidth: median pairwise Euclidean distance
 * between individual states drawn from the given configurations. States are
 * subsampled with a deterministic stride when there are many. Falls back to
 * the median of the positive distances (duplicated states make the plain
 * median collapse to zero), then to 1.0.
 */
inline double median_state_distance(std::span<const Config> configs,
                                    std::size_t max_states = 1024) {
    if (configs.empty()) throw contract_error("median_state_distance: empty config sequence");
    std::vector<std::span<const double>> states;
    std::size_t total = 0;
    for (const auto& c : configs) total += c.sample.size();
    const std::size_t stride = std::max<std::size_t>(1, total / max_states);
    std::size_t counter = 0;
    for (const auto& c : configs) {
        for (std::size_t i = 0; i < c.sample.size(); ++i, ++counter) {
            if (counter % stride == 0) states.push_back(c.sample.state(i));
        }
    }
    if (states.size() < 2) return 1.0;
    std::vector<double> dists;
    dists.reserve(states.size() * (states.size() - 1) / 2);
    for (std::size_t i = 0; i < states.size(); ++i)
        for (std::size_t j = i + 1; j < states.size(); ++j)
            dists.push_back(std::sqrt(detail::squared_distance(states[i], states[j])));
    double m = median(dists);
    if (m > 0.0) return m;
    std::vector<double> positive;
    for (double d : dists)
        if (d > 0.0) positive.push_back(d);
    if (positive.empty()) return 1.0;
    return median(positive);
}

/// Median heuristic for tau: median pairwise MMD over the given configurations
/// (deterministic stride subsample). Same zero-collapse fallbacks as above.
inline double median_pairwise_mmd(std::span<const Config> configs, const BaseKernelSpec& base,
                                  std::size_t max_configs = 256) {
    validate(base);
    if (configs.empty()) throw contract_error("median_pairwise_mmd: empty config sequence");
    const std::size_t stride = std::max<std::size_t>(1, configs.size() / max_configs);
    std::vector<const Config*> subset;
    for (std::size_t i = 0; i < configs.size(); i += stride) subset.push_back(&configs[i]);
    if (subset.size() < 2) return 1.0;
    std::vector<double> selfs(subset.size());
    for (std::size_t i = 0; i < subset.size(); ++i)
        selfs[i] = embedding_inner(*subset[i], *subset[i], base);
    std::vector<double> mmds;
    mmds.reserve(subset.size() * (subset.size() - 1) / 2);
    for (std::size_t i = 0; i < subset.size(); ++i) {
        for (std::size_t j = i + 1; j < subset.size(); ++j) {
            const double cross = embedding_inner(*subset[i], *subset[j], base);
            mmds.push_back(std::sqrt(detail::mmd_sq_from(selfs[i], selfs[j], cross)));
        }
    }
    double m = median(mmds);
    if (m > 0.0) return m;
    std::vector<double> positive;
    for (double d : mmds)
        if (d > 0.0) positive.push_back(d);
    if (positive.empty()) return 1.0;
    return median(positive);
}

}  // namespace mffqi
