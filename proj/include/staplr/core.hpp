#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdlib>
#include <iostream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace staplr {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Error taxonomy. Each class maps onto one CLI exit code.

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed arguments: dimension mismatches, single-class outcomes, bad configs.
class InputError : public Error {
public:
    using Error::Error;
};

/// A CV fold whose training part cannot be fitted (e.g. only one class present).
class FoldError : public Error {
public:
    FoldError(const std::string& what, std::size_t fold) : Error(what), fold_(fold) {}
    std::size_t fold() const noexcept { return fold_; }

private:
    std::size_t fold_;
};

/// Solver gave up before reaching tolerance. Carries the last iterate.
class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& what, double intercept, Vector coefficients)
        : Error(what), intercept_(intercept), coefficients_(std::move(coefficients)) {}
    double intercept() const noexcept { return intercept_; }
    const Vector& coefficients() const noexcept { return coefficients_; }

private:
    double intercept_;
    Vector coefficients_;
};

/// Dataset / manifest ingestion failure.
class LoadError : public Error {
public:
    using Error::Error;
};

/// Failure while fitting a node of a stacked model; message carries the node path.
class FitError : public Error {
public:
    using Error::Error;
};

/// Output files could not be written.
class IoError : public Error {
public:
    using Error::Error;
};

/// Unreadable or structurally invalid model file.
class ModelFormatError : public Error {
public:
    using Error::Error;
};

/// New data does not match the schema recorded in a fitted model.
class SchemaError : public InputError {
public:
    using InputError::InputError;
};

/// Metric undefined for the given labels (e.g. AUC with one class).
class MetricError : public Error {
public:
    using Error::Error;
};

/// Logistic function exp(x) / (1 + exp(x)), evaluated without overflow.
inline double logistic(double x) noexcept {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

/// log(1 + exp(x)) without overflow.
inline double log1pexp(double x) noexcept {
    if (x > 0.0) {
        return x + std::log1p(std::exp(-x));
    }
    return std::log1p(std::exp(x));
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

// Minimal leveled logging to stderr, controlled by STAPLR_LOG
// (off, error, warn, info, debug). Default is warn.
enum class LogLevel { off = 0, error = 1, warn = 2, info = 3, debug = 4 };

inline LogLevel log_level() {
    static const LogLevel level = [] {
        const char* env = std::getenv("STAPLR_LOG");
        if (env == nullptr) return LogLevel::warn;
        const std::string_view v{env};
        if (v == "off") return LogLevel::off;
        if (v == "error") return LogLevel::error;
        if (v == "info") return LogLevel::info;
        if (v == "debug") return LogLevel::debug;
        return LogLevel::warn;
    }();
    return level;
}

inline void log(LogLevel level, std::string_view message) {
    if (level == LogLevel::off || level > log_level()) return;
    static constexpr std::string_view names[] = {"", "error", "warn", "info", "debug"};
    std::cerr << "[staplr " << names[static_cast<int>(level)] << "] " << message << '\n';
}

}  // namespace staplr
