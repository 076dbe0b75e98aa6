#pragma once

#include <mffqi/kernels.hpp>
#include <mffqi/types.hpp>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cmath>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace mffqi {

/// Ridge regression instance over a support Gram matrix: minimize
/// (1/n) |G a - y|^2 + lambda a' G a, i.e. the representer form of the
/// regularized least squares problem in H(K).
struct RidgeProblem {
    Eigen::MatrixXd gram;     // n x n, symmetric PSD up to tolerance
    Eigen::VectorXd targets;  // n
    double lambda = 0.0;      // > 0
};

inline void validate(const RidgeProblem& p) {
    const Eigen::Index n = p.gram.rows();
    if (n == 0 || p.gram.cols() != n) throw contract_error("RidgeProblem: gram must be square");
    if (p.targets.size() != n) throw contract_error("RidgeProblem: targets/gram size mismatch");
    if (!(p.lambda > 0.0) || !std::isfinite(p.lambda))
        throw contract_error("RidgeProblem: lambda must be positive and finite");
    if (!p.gram.allFinite() || !p.targets.allFinite())
        throw contract_error("RidgeProblem: non-finite inputs");
}

/**
 * Cholesky factorization of (G + n lambda I), reused across solves.
 *
 * If the factorization fails (Gram matrices built from duplicated
 * configurations are singular and tiny lambda may not rescue them), a jitter
 * of eps * trace(G)/n is added with eps escalating 1e-12 -> 1e-6 before
 * giving up.
 */
class KrrSolver {
public:
    KrrSolver(const Eigen::MatrixXd& gram, double lambda) : n_(gram.rows()), lambda_(lambda) {
        RidgeProblem probe{gram, Eigen::VectorXd::Zero(n_), lambda};
        validate(probe);
        const double scale = gram.trace() / static_cast<double>(n_);
        const Eigen::MatrixXd regularized =
            gram + static_cast<double>(n_) * lambda * Eigen::MatrixXd::Identity(n_, n_);
        double eps = 0.0;
        while (true) {
            Eigen::MatrixXd m = regularized;
            if (eps > 0.0) m.diagonal().array() += eps * scale;
            llt_.compute(m);
            if (llt_.info() == Eigen::Success) {
                jitter_ = eps * scale;
                regularized_ = std::move(m);
                return;
            }
            if (eps == 0.0)
                eps = 1e-12;
            else if (eps < 1e-6)
                eps *= 10.0;
            else
                break;
        }
        std::ostringstream msg;
        msg << "KrrSolver: Cholesky failed after jitter escalation (n=" << n_
            << ", lambda=" << lambda << ", trace/n=" << scale << ")";
        throw numerical_error(msg.str());
    }

    /// Solve (G + n lambda I) alpha = y; relative residual must be <= 1e-10.
    /// One step of iterative refinement keeps near-singular Gram matrices
    /// (duplicated configurations with tiny lambda) inside the contract.
    Eigen::VectorXd solve(const Eigen::VectorXd& y) const {
        if (y.size() != n_) throw contract_error("KrrSolver: target size mismatch");
        if (!y.allFinite()) throw contract_error("KrrSolver: non-finite targets");
        Eigen::VectorXd alpha = llt_.solve(y);
        alpha += llt_.solve(y - regularized_ * alpha);
        const double ynorm = y.lpNorm<Eigen::Infinity>();
        const double resid = (regularized_ * alpha - y).lpNorm<Eigen::Infinity>();
        const double rel = resid / std::max(ynorm, 1e-300);
        if (!(rel <= 1e-10)) {
            std::ostringstream msg;
            msg << "KrrSolver: solve residual " << rel << " exceeds 1e-10 (n=" << n_
                << ", lambda=" << lambda_ << ", jitter=" << jitter_ << ")";
            throw numerical_error(msg.str());
        }
        return alpha;
    }

    double jitter() const { return jitter_; }

private:
    Eigen::Index n_;
    double lambda_;
    double jitter_ = 0.0;
    Eigen::MatrixXd regularized_;
    Eigen::LLT<Eigen::MatrixXd> llt_;
};

/// Closed-form representer coefficients alpha = (G + n lambda I)^{-1} y.
/// The 1/n factors of the empirical operators cancel in this scaling, so
/// lambda sweeps are comparable across n.
inline Eigen::VectorXd fit_krr(const RidgeProblem& problem) {
    validate(problem);
    KrrSolver solver(problem.gram, problem.lambda);
    return solver.solve(problem.targets);
}

/// Value of the regularized empirical objective at representer coefficients:
/// (1/n) |G a - y|^2 + lambda a' G a.
inline double krr_objective(const RidgeProblem& problem, const Eigen::VectorXd& alpha) {
    const Eigen::Index n = problem.gram.rows();
    if (alpha.size() != n) throw contract_error("krr_objective: coefficient size mismatch");
    const Eigen::VectorXd fitted = problem.gram * alpha;
    const double loss = (fitted - problem.targets).squaredNorm() / static_cast<double>(n);
    return loss + problem.lambda * alpha.dot(fitted);
}

/**
 * A fitted kernel-ridge Q-function: raw value is the representer expansion
 * sum_i alpha_i K(mu_query, mu_support_i); the truncated model caps it at
 * q_max = R_max / (1 - gamma). An optional symmetric clamp at -q_max is
 * exposed but off by default; the truncation the update rule prescribes is
 * one-sided.
 */
struct QModel {
    std::vector<Config> support;
    Eigen::VectorXd alpha;
    BaseKernelSpec base;
    EmbeddingKernelSpec emb;
    double q_max = 0.0;
    bool truncated = true;
    bool clamp_below = false;
};

inline void validate(const QModel& m) {
    if (m.support.empty()) throw contract_error("QModel: empty support");
    if (static_cast<std::size_t>(m.alpha.size()) != m.support.size())
        throw contract_error("QModel: alpha/support size mismatch");
    if (!(m.q_max > 0.0) || !std::isfinite(m.q_max))
        throw contract_error("QModel: q_max must be positive and finite");
    validate(m.base);
    validate(m.emb);
    const std::size_t d = m.support.front().sample.dim();
    for (const auto& c : m.support)
        if (c.sample.dim() != d) throw contract_error("QModel: ragged support dimensions");
    if (!m.alpha.allFinite()) throw contract_error("QModel: non-finite coefficients");
}

namespace detail {

inline double apply_truncation(const QModel& m, double raw) {
    double out = raw;
    if (m.truncated) out = std::min(out, m.q_max);
    if (m.clamp_below) out = std::max(out, -m.q_max);
    return out;
}

/// Representer sum in fixed support order; every predict path funnels through
/// this so cached and uncached evaluation agree to 0 ulp.
inline double representer_sum(const Eigen::VectorXd& alpha, const double* kernel_column,
                              std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += alpha[static_cast<Eigen::Index>(i)] * kernel_column[i];
    return acc;
}

}  // namespace detail

/// Q-value at one configuration. Permuting the query sample leaves the output
/// bit-identical (the sample is canonicalized at construction).
inline double predict(const QModel& m, const Config& query) {
    validate(m);
    if (query.sample.dim() != m.support.front().sample.dim())
        throw contract_error("predict: query dimension does not match support");
    std::vector<double> column(m.support.size());
    for (std::size_t i = 0; i < m.support.size(); ++i)
        column[i] = embedding_kernel_eval(m.support[i], query, m.base, m.emb);
    const double raw = detail::representer_sum(m.alpha, column.data(), m.support.size());
    return detail::apply_truncation(m, raw);
}

/**
 * Batched predict. `cache`, when given, must be the support x queries
 * cross-Gram built with the model's kernels; per-query cost is then
 * O(n_support) multiply-adds. Without a cache the same matrix is built
 * internally, so both paths produce identical bits.
 */
inline std::vector<double> predict_batch(const QModel& m, std::span<const Config> queries,
                                         const Eigen::MatrixXd* cache = nullptr) {
    validate(m);
    if (queries.empty()) return {};
    Eigen::MatrixXd local;
    if (cache == nullptr) {
        local = cross_gram(std::span<const Config>(m.support), queries, m.base, m.emb);
        cache = &local;
    } else if (cache->rows() != static_cast<Eigen::Index>(m.support.size()) ||
               cache->cols() != static_cast<Eigen::Index>(queries.size())) {
        throw contract_error("predict_batch: cache shape mismatch");
    }
    std::vector<double> out(queries.size());
    for (std::size_t j = 0; j < queries.size(); ++j) {
        // Eigen is column-major: a column is contiguous with stride 1.
        const double* col = cache->data() + static_cast<std::size_t>(cache->rows()) * j;
        const double raw = detail::representer_sum(m.alpha, col, m.support.size());
        out[j] = detail::apply_truncation(m, raw);
    }
    return out;
}

inline std::vector<double> predict_batch(const QModel& m, const std::vector<Config>& queries,
                                         const Eigen::MatrixXd* cache = nullptr) {
    return predict_batch(m, std::span<const Config>(queries), cache);
}

}  // namespace mffqi
