#pragma once

#include <mffqi/errors.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace mffqi {

/// Index of the central controller's action, in [0, n_actions).
using ActionId = int;

/// One agent's state: a point in R^d.
using IndividualState = std::vector<double>;

/**
 * A bag of N observed agent states representing an empirical mean-field state.
 *
 * Storage is a flat row-major (N x d) buffer whose rows are sorted
 * lexicographically at construction. Sorting fixes a canonical multiset
 * encoding, so every downstream Gram sum accumulates in the same order for
 * any permutation of the input: permutation invariance is bit-exact, not
 * merely approximate.
 */
class AgentSample {
public:
    AgentSample(std::vector<double> flat, std::size_t dim) : flat_(std::move(flat)), dim_(dim) {
        if (dim_ == 0) throw contract_error("AgentSample: state dimension must be >= 1");
        if (flat_.empty()) throw contract_error("AgentSample: needs at least one agent state");
        if (flat_.size() % dim_ != 0)
            throw contract_error("AgentSample: buffer size not a multiple of the state dimension");
        for (double& v : flat_) {
            if (!std::isfinite(v)) throw contract_error("AgentSample: non-finite coordinate");
            v += 0.0;  // normalize -0.0 so equal multisets share one bit pattern
        }
        canonicalize();
    }

    static AgentSample from_states(const std::vector<IndividualState>& states) {
        if (states.empty()) throw contract_error("AgentSample: needs at least one agent state");
        const std::size_t d = states.front().size();
        std::vector<double> flat;
        flat.reserve(states.size() * d);
        for (const auto& s : states) {
            if (s.size() != d) throw contract_error("AgentSample: ragged state dimensions");
            flat.insert(flat.end(), s.begin(), s.end());
        }
        return AgentSample(std::move(flat), d);
    }

    std::size_t size() const { return flat_.size() / dim_; }  // N
    std::size_t dim() const { return dim_; }                  // d

    std::span<const double> state(std::size_t i) const {
        return {flat_.data() + i * dim_, dim_};
    }

    const std::vector<double>& flat() const { return flat_; }

    friend bool operator==(const AgentSample& a, const AgentSample& b) {
        return a.dim_ == b.dim_ && a.flat_ == b.flat_;
    }

private:
    void canonicalize() {
        const std::size_t n = size();
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        const auto row_less = [&](std::size_t i, std::size_t j) {
            const double* a = flat_.data() + i * dim_;
            const double* b = flat_.data() + j * dim_;
            return std::lexicographical_compare(a, a + dim_, b, b + dim_);
        };
        std::sort(order.begin(), order.end(), row_less);
        if (std::is_sorted(order.begin(), order.end())) return;
        std::vector<double> sorted(flat_.size());
        for (std::size_t i = 0; i < n; ++i) {
            const double* src = flat_.data() + order[i] * dim_;
            std::copy(src, src + dim_, sorted.data() + i * dim_);
        }
        flat_ = std::move(sorted);
    }

    std::vector<double> flat_;
    std::size_t dim_;
};

/// Total order on samples; used to canonicalize kernel operand order.
inline bool sample_less(const AgentSample& a, const AgentSample& b) {
    if (a.dim() != b.dim()) return a.dim() < b.dim();
    if (a.size() != b.size()) return a.size() < b.size();
    return std::lexicographical_compare(a.flat().begin(), a.flat().end(), b.flat().begin(),
                                        b.flat().end());
}

/// A state-action configuration: one central action paired with one observed
/// mean-field state. Inherits the sample's permutation-insensitivity.
struct Config {
    ActionId action;
    AgentSample sample;
};

inline bool config_less(const Config& a, const Config& b) {
    if (a.action != b.action) return a.action < b.action;
    return sample_less(a.sample, b.sample);
}

/// Base kernel on individual state-action pairs:
/// k((a,s),(a',s')) = 1{a=a'} * exp(-|s-s'|^2 / (2 sigma^2)), so k(u,u) = 1.
struct BaseKernelSpec {
    double sigma = 1.0;  // bandwidth, state-space units
};

inline void validate(const BaseKernelSpec& spec) {
    if (!(spec.sigma > 0.0) || !std::isfinite(spec.sigma))
        throw contract_error("BaseKernelSpec: sigma must be positive and finite");
}

/// Second-level kernel on mean embeddings.
struct EmbeddingKernelSpec {
    enum class Variant { linear, gaussian_on_mmd };

    Variant variant = Variant::gaussian_on_mmd;
    double tau = 1.0;  // RKHS-norm units; used by gaussian_on_mmd only

    /// Upper bound on K(mu, mu); equals 1 for both variants since the base
    /// kernel has unit diagonal.
    double bound() const { return 1.0; }
};

inline void validate(const EmbeddingKernelSpec& spec) {
    if (spec.variant == EmbeddingKernelSpec::Variant::gaussian_on_mmd &&
        (!(spec.tau > 0.0) || !std::isfinite(spec.tau)))
        throw contract_error("EmbeddingKernelSpec: tau must be positive and finite");
}

inline std::string to_string(EmbeddingKernelSpec::Variant v) {
    return v == EmbeddingKernelSpec::Variant::linear ? "linear" : "gaussian-on-mmd";
}

}  // namespace mffqi
