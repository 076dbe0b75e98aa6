#pragma once

#include <stdexcept>
#include <string>

namespace mffqi {

/// Violated precondition or malformed input (dimension mismatch, bad action id, ...).
class contract_error : public std::runtime_error {
public:
    explicit contract_error(const std::string& what) : std::runtime_error(what) {}
};

/// Invalid or missing configuration (files, schemas, parameter ranges).
class config_error : public std::runtime_error {
public:
    explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

/// Numerical failure that survived all fallbacks (e.g. factorization after jitter escalation).
class numerical_error : public std::runtime_error {
public:
    explicit numerical_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace mffqi
