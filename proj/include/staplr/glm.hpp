#pragma once

// Penalized binomial GLM: ridge, lasso and elastic net with optional
// nonnegativity, lambda paths, and k-fold cross-validated lambda selection.
//
// Objective minimized at a fixed lambda, in the internal (possibly
// standardized) frame:
//
//   (1/n) sum_i [log(1 + exp(eta_i)) - y_i eta_i]
//       + lambda * (alpha * |beta|_1 + (1 - alpha) / 2 * |beta|_2^2)
//
// with the intercept unpenalized and beta >= 0 when `nonnegative` is set.

#include "staplr/audit.hpp"
#include "staplr/core.hpp"
#include "staplr/folds.hpp"
#include "staplr/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace staplr {

/// Ridge has no finite lambda_max; the path is anchored as if alpha were this value.
inline constexpr double kRidgeAlphaFloor = 0.001;

struct PenaltySpec {
    double alpha = 0.0;  ///< 0 = ridge, 1 = lasso
    bool nonnegative = false;
    bool standardize = true;
    std::size_t nlambda = 100;
    double epsilon = 0.01;  ///< lambda_min / lambda_max

    void validate() const {
        if (!(alpha >= 0.0 && alpha <= 1.0)) throw InputError("penalty alpha must lie in [0, 1]");
        if (nlambda < 2) throw InputError("nlambda must be at least 2");
        if (!(epsilon > 0.0 && epsilon < 1.0)) throw InputError("epsilon must lie in (0, 1)");
    }

    static PenaltySpec ridge() { return PenaltySpec{}; }

    static PenaltySpec nonnegative_lasso(bool standardize = false) {
        PenaltySpec p;
        p.alpha = 1.0;
        p.nonnegative = true;
        p.standardize = standardize;
        return p;
    }

    static PenaltySpec elastic_net(double alpha) {
        PenaltySpec p;
        p.alpha = alpha;
        return p;
    }

    friend bool operator==(const PenaltySpec&, const PenaltySpec&) = default;
};

struct SolverControl {
    double tolerance = 1e-7;      ///< max |coefficient change| (internal scale)
    long max_sweeps = 100000;     ///< coordinate-descent sweeps, summed over IRLS steps
    double weight_floor = 1e-5;   ///< lower bound on IRLS weights p(1-p)
    std::vector<double>* objective_trace = nullptr;  ///< if set, objective after every IRLS step
};

/// Per-column centering and scaling used inside the solver. A zero scale marks
/// a constant column whose coefficient is pinned at zero.
struct ScalingRecord {
    Vector center;
    Vector scale;
};

/// Solution at a single lambda, coefficients on the original predictor scale.
struct GlmPoint {
    double intercept = 0.0;
    Vector coefficients;
    double objective = 0.0;
    long sweeps = 0;
};

struct CvCurve {
    std::vector<double> lambda;
    std::vector<double> mean_deviance;
    std::vector<double> se_deviance;
    std::size_t selected = 0;
};

struct FittedGlm {
    double intercept = 0.0;
    Vector coefficients;
    double lambda_selected = 0.0;
    CvCurve cv;
    ScalingRecord scaling;
    PenaltySpec penalty;
    double outcome_mean = 0.0;
};

struct CvOptions {
    unsigned threads = 1;
    SolverControl control;
    AuditContext audit;
};

// ---------------------------------------------------------------------------
// validation

inline void validate_outcome(const Vector& y) {
    bool has0 = false, has1 = false;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        if (y[i] == 0.0)
            has0 = true;
        else if (y[i] == 1.0)
            has1 = true;
        else
            throw InputError("outcome must be coded 0/1");
    }
    if (!has0 || !has1) throw InputError("outcome must contain both classes");
}

inline void validate_problem(const Matrix& x, const Vector& y) {
    if (x.rows() != y.size())
        throw InputError("predictor rows (" + std::to_string(x.rows()) + ") do not match outcome length (" +
                         std::to_string(y.size()) + ")");
    if (!x.allFinite()) throw InputError("predictors contain non-finite values");
    validate_outcome(y);
}

namespace detail {

struct Design {
    Matrix x;  // centered, and scaled when standardizing
    ScalingRecord scaling;
    std::vector<char> usable;
};

inline Design make_design(const Matrix& x, bool standardize) {
    const auto n = x.rows();
    const auto p = x.cols();
    Design d;
    d.x = x;
    d.scaling.center = Vector::Zero(p);
    d.scaling.scale = Vector::Ones(p);
    d.usable.assign(static_cast<std::size_t>(p), 1);
    for (Eigen::Index j = 0; j < p; ++j) {
        auto col = d.x.col(j);
        const double mean = col.mean();
        col.array() -= mean;
        const double sd = std::sqrt(col.squaredNorm() / static_cast<double>(n));
        d.scaling.center[j] = mean;
        const bool constant = (x.col(j).array() == x(0, j)).all();
        if (constant || !(sd > 0.0)) {
            d.usable[static_cast<std::size_t>(j)] = 0;
            d.scaling.scale[j] = 0.0;
            col.setZero();
            continue;
        }
        if (standardize) {
            col /= sd;
            d.scaling.scale[j] = sd;
        }
    }
    return d;
}

// Internal-frame iterate.
struct Iterate {
    double b0 = 0.0;
    Vector beta;
};

inline Iterate to_internal(const ScalingRecord& s, double intercept, const Vector& coef) {
    Iterate it;
    it.beta = Vector::Zero(coef.size());
    it.b0 = intercept;
    for (Eigen::Index j = 0; j < coef.size(); ++j) {
        if (s.scale[j] == 0.0) continue;
        it.beta[j] = coef[j] * s.scale[j];
        it.b0 += s.center[j] * coef[j];
    }
    return it;
}

inline std::pair<double, Vector> to_original(const ScalingRecord& s, const Iterate& it) {
    Vector coef = Vector::Zero(it.beta.size());
    double b0 = it.b0;
    for (Eigen::Index j = 0; j < coef.size(); ++j) {
        if (s.scale[j] == 0.0) continue;
        coef[j] = it.beta[j] / s.scale[j];
        b0 -= s.center[j] * coef[j];
    }
    return {b0, coef};
}

inline double penalty_value(const PenaltySpec& pen, double lambda, const Vector& beta) {
    return lambda * (pen.alpha * beta.lpNorm<1>() + 0.5 * (1.0 - pen.alpha) * beta.squaredNorm());
}

inline double loss_from_eta(const Vector& eta, const Vector& y) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < eta.size(); ++i) s += log1pexp(eta[i]) - y[i] * eta[i];
    return s / static_cast<double>(eta.size());
}

/// <x_j, y - ybar> / n for each usable column of the design; zero elsewhere.
inline Vector null_scores(const Design& d, const Vector& y) {
    const Vector r = y.array() - y.mean();
    Vector g = (d.x.transpose() * r) / static_cast<double>(y.size());
    for (std::size_t j = 0; j < d.usable.size(); ++j)
        if (!d.usable[j]) g[static_cast<Eigen::Index>(j)] = 0.0;
    return g;
}

inline double lambda_max(const Design& d, const Vector& y, const PenaltySpec& pen) {
    const Vector g = null_scores(d, y);
    double m = 0.0;
    for (Eigen::Index j = 0; j < g.size(); ++j) m = std::max(m, pen.nonnegative ? g[j] : std::abs(g[j]));
    if (pen.nonnegative && !(m > 0.0)) m = g.cwiseAbs().maxCoeff();
    // no usable column carries any signal: every lambda gives the null model
    if (!(m > 0.0)) return 1.0;
    return m / std::max(pen.alpha, kRidgeAlphaFloor);
}

// True when beta = 0 satisfies the optimality conditions at `lambda`.
inline bool null_is_optimal(const Design& d, const Vector& y, const PenaltySpec& pen, double lambda) {
    const Vector g = null_scores(d, y);
    const double bound = lambda * pen.alpha * (1.0 + 1e-12);
    for (Eigen::Index j = 0; j < g.size(); ++j) {
        const double score = pen.nonnegative ? g[j] : std::abs(g[j]);
        if (score > bound) return false;
    }
    return true;
}

inline double soft_threshold(double z, double t) {
    if (z > t) return z - t;
    if (z < -t) return z + t;
    return 0.0;
}


// Average logistic loss at `eta`; also stores the fitted probabilities in `mu`.
inline double loss_and_mean(const Vector& eta, const Vector& y, Vector& mu) {
    // vectorized exp/log; log(1 + e) for e in (0, 1] is accurate to ~1e-16 absolute
    const Eigen::ArrayXd e = (-eta.array().abs()).exp();
    const Eigen::ArrayXd one_e = 1.0 + e;
    const double s = (eta.array().max(0.0) + one_e.log() - y.array() * eta.array()).sum();
    mu = (eta.array() >= 0.0).select(1.0 / one_e, e / one_e);
    return s / static_cast<double>(eta.size());
}

// Keeps W r for the working residual r; coordinate descent reads the scaled
// inner products x_j' W r / n and shifts W r as coordinates move.
struct ResidualOps {
    const Matrix& x;
    const Vector& w;
    Vector& wres;
    double sumw;
    double nd;

    double intercept_delta() const { return wres.sum() / sumw; }
    void shift_intercept(double delta) { wres -= delta * w; }
    double dot(Eigen::Index j) const { return x.col(j).dot(wres) / nd; }
    void shift(Eigen::Index j, double delta) { wres.array() -= delta * (w.array() * x.col(j).array()); }
};

// Coordinate descent on the weighted quadratic model with an active-set cycle.
// Only coordinates in `candidates` (ascending) move; the rest stay at zero.
inline void coordinate_descent(const PenaltySpec& pen, ResidualOps& ops, const Vector& xwx, double l1, double l2,
                               double tol, const SolverControl& ctl, const std::vector<Eigen::Index>& candidates,
                               Iterate& next, std::vector<Eigen::Index>& active, long& sweeps) {
    auto sweep = [&](const std::vector<Eigen::Index>& coords) {
        const double delta = ops.intercept_delta();
        next.b0 += delta;
        ops.shift_intercept(delta);
        double change = std::abs(delta);
        for (auto j : coords) {
            const double old = next.beta[j];
            const double grad = ops.dot(j) + xwx[j] * old;
            double nb = soft_threshold(grad, l1) / (xwx[j] + l2);
            if (pen.nonnegative && nb < 0.0) nb = 0.0;
            if (nb != old) {
                ops.shift(j, nb - old);
                next.beta[j] = nb;
                change = std::max(change, std::abs(nb - old));
            }
        }
        ++sweeps;
        return change;
    };

    while (true) {
        if (sweep(candidates) <= tol) break;
        active.clear();
        for (auto j : candidates)
            if (next.beta[j] != 0.0) active.push_back(j);
        while (sweep(active) > tol) {
            if (sweeps >= ctl.max_sweeps) break;
        }
        // with every coordinate active the last sweep was already a full one
        if (sweeps >= ctl.max_sweeps || active.size() == candidates.size()) break;
    }
}

// Linear predictor, fitted means, loss and loss gradient at an iterate,
// carried along a path so the next lambda need not recompute them.
struct LossCache {
    Vector eta;
    Vector mu;
    Vector grad;  // x_j' (y - mu) / n for every column
    double loss = 0.0;
    bool valid = false;
};

/// Proximal Newton: each IRLS step solves the weighted, penalized quadratic
/// model by coordinate descent, then backtracks along the step until the true
/// objective does not increase. Stops once a full step moves no coefficient
/// by more than the tolerance.
///
/// With an L1 term, coordinates are screened by the sequential strong rule
/// (|gradient| >= alpha (2 lambda - lambda_prev) at the warm start); after
/// convergence every screened-out coordinate is checked against its KKT
/// condition and violators are added back, so the result does not depend on
/// the screen.
inline Iterate solve(const Design& d, const Vector& y, const PenaltySpec& pen, double lambda, Iterate start,
                     const SolverControl& ctl, long& sweeps, LossCache* cache = nullptr, double lambda_prev = 0.0) {
    const auto n = d.x.rows();
    const auto p = d.x.cols();
    const double nd = static_cast<double>(n);
    const double l1 = lambda * pen.alpha;
    const double l2 = lambda * (1.0 - pen.alpha);

    Iterate cur = std::move(start);
    for (Eigen::Index j = 0; j < p; ++j) {
        if (!d.usable[static_cast<std::size_t>(j)]) cur.beta[j] = 0.0;
        if (pen.nonnegative && cur.beta[j] < 0.0) cur.beta[j] = 0.0;
    }
    Vector eta, mu, grad, mu_try(n);
    double loss = 0.0;
    if (cache != nullptr && cache->valid) {
        eta.swap(cache->eta);
        mu.swap(cache->mu);
        grad.swap(cache->grad);
        loss = cache->loss;
    } else {
        mu.resize(n);
        eta = (d.x * cur.beta).array() + cur.b0;
        loss = loss_and_mean(eta, y, mu);
        if (l1 > 0.0) grad = d.x.transpose() * (y - mu) / nd;
    }
    double obj = loss + penalty_value(pen, lambda, cur.beta);

    // coordinates allowed to move; the KKT check below may extend the set
    std::vector<Eigen::Index> candidates;
    std::vector<char> in_set(static_cast<std::size_t>(p), 0);
    auto violates = [&](Eigen::Index j, double bound) {
        return pen.nonnegative ? grad[j] > bound : std::abs(grad[j]) > bound;
    };
    {
        const double screen = pen.alpha * (2.0 * lambda - std::max(lambda_prev, lambda));
        for (Eigen::Index j = 0; j < p; ++j) {
            if (!d.usable[static_cast<std::size_t>(j)]) continue;
            if (l1 == 0.0 || cur.beta[j] != 0.0 || violates(j, screen) || !(screen > 0.0)) {
                candidates.push_back(j);
                in_set[static_cast<std::size_t>(j)] = 1;
            }
        }
    }

    Vector w(n), wres(n), xwx = Vector::Zero(p), eta_try(n), deta(n), dbeta(p), trial(p);
    Iterate next;
    // inexact Newton for L1 problems, whose inner solves need many sweeps: early
    // quadratic models are solved loosely, the last one to full tolerance
    double inner_tol = l1 > 0.0 ? std::max(ctl.tolerance, 1e-4) : ctl.tolerance;
    std::vector<Eigen::Index> active;
    active.reserve(static_cast<std::size_t>(p));

    while (true) {
        for (Eigen::Index i = 0; i < n; ++i) {
            w[i] = std::max(mu[i] * (1.0 - mu[i]), ctl.weight_floor);
            wres[i] = y[i] - mu[i];
        }
        for (auto j : candidates) xwx[j] = d.x.col(j).cwiseAbs2().dot(w) / nd;
        next.b0 = cur.b0;
        next.beta = cur.beta;
        ResidualOps ops{d.x, w, wres, w.sum(), nd};
        coordinate_descent(pen, ops, xwx, l1, l2, inner_tol, ctl, candidates, next, active, sweeps);

        const double d0 = next.b0 - cur.b0;
        dbeta = next.beta - cur.beta;
        const double full_step = std::max(std::abs(d0), p > 0 ? dbeta.cwiseAbs().maxCoeff() : 0.0);
        bool converged = false;
        if (full_step <= ctl.tolerance) {
            if (inner_tol > ctl.tolerance) {
                inner_tol = ctl.tolerance;
                continue;
            }
            converged = true;
        } else {
            deta.setConstant(d0);
            for (auto j : candidates)
                if (dbeta[j] != 0.0) deta += dbeta[j] * d.x.col(j);
            double t = 1.0;
            double obj_try = 0.0;
            bool accepted = false;
            for (int halvings = 0; halvings < 40; ++halvings, t *= 0.5) {
                eta_try = eta + t * deta;
                const double loss_try = loss_and_mean(eta_try, y, mu_try);
                trial = cur.beta + t * dbeta;
                obj_try = loss_try + penalty_value(pen, lambda, trial);
                if (obj_try <= obj) {
                    loss = loss_try;
                    accepted = true;
                    break;
                }
            }
            if (!accepted) {
                converged = true;
            } else {
                cur.b0 += t * d0;
                cur.beta += t * dbeta;
                if (pen.nonnegative) cur.beta = cur.beta.cwiseMax(0.0);
                eta.swap(eta_try);
                mu.swap(mu_try);
                obj = obj_try;
                if (ctl.objective_trace != nullptr) ctl.objective_trace->push_back(obj);
                converged = t * full_step <= ctl.tolerance && inner_tol <= ctl.tolerance;
                inner_tol = std::max(ctl.tolerance, std::min(inner_tol, 1e-2 * t * full_step));
            }
        }
        if (converged) {
            if (l1 == 0.0) break;
            grad = d.x.transpose() * (y - mu) / nd;
            if (candidates.size() == static_cast<std::size_t>(std::count(d.usable.begin(), d.usable.end(), 1))) break;
            bool added = false;
            for (Eigen::Index j = 0; j < p; ++j) {
                if (in_set[static_cast<std::size_t>(j)] || !d.usable[static_cast<std::size_t>(j)]) continue;
                if (violates(j, l1)) {
                    candidates.push_back(j);
                    in_set[static_cast<std::size_t>(j)] = 1;
                    added = true;
                }
            }
            if (!added) break;
            std::sort(candidates.begin(), candidates.end());
            inner_tol = ctl.tolerance;
        }
        if (sweeps >= ctl.max_sweeps) {
            auto [b0, coef] = to_original(d.scaling, cur);
            throw ConvergenceError("solver did not converge within " + std::to_string(ctl.max_sweeps) + " sweeps", b0,
                                   coef);
        }
    }
    if (cache != nullptr) {
        if (l1 > 0.0 && grad.size() != p) grad = d.x.transpose() * (y - mu) / nd;
        cache->eta.swap(eta);
        cache->mu.swap(mu);
        cache->grad.swap(grad);
        cache->loss = loss;
        cache->valid = true;
    }
    return cur;
}

inline Iterate null_iterate(const Vector& y, Eigen::Index p) {
    return Iterate{logit(y.mean()), Vector::Zero(p)};
}

// Fit along `lambdas` (decreasing) with warm starts; stops after index `last`.
inline std::vector<Iterate> fit_path(const Design& d, const Vector& y, const PenaltySpec& pen,
                                     const std::vector<double>& lambdas, std::size_t last, const SolverControl& ctl) {
    std::vector<Iterate> out;
    out.reserve(last + 1);
    Iterate warm = null_iterate(y, d.x.cols());
    LossCache cache;
    long sweeps = 0;
    for (std::size_t l = 0; l <= last && l < lambdas.size(); ++l) {
        if (warm.beta.isZero(0.0) && null_is_optimal(d, y, pen, lambdas[l])) {
            warm = null_iterate(y, d.x.cols());
            cache.valid = false;
        } else {
            warm = solve(d, y, pen, lambdas[l], std::move(warm), ctl, sweeps, &cache, lambdas[l > 0 ? l - 1 : 0]);
        }
        out.push_back(warm);
    }
    return out;
}

inline std::vector<double> log_spaced(double lmax, const PenaltySpec& pen) {
    std::vector<double> path(pen.nlambda);
    const double step = std::log(pen.epsilon) / static_cast<double>(pen.nlambda - 1);
    for (std::size_t l = 0; l < pen.nlambda; ++l) path[l] = lmax * std::exp(step * static_cast<double>(l));
    path.front() = lmax;
    path.back() = lmax * pen.epsilon;
    return path;
}

inline Matrix rows_of(const Matrix& x, const std::vector<std::size_t>& rows) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), x.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = x.row(static_cast<Eigen::Index>(rows[r]));
    return out;
}

inline Vector rows_of(const Vector& v, const std::vector<std::size_t>& rows) {
    Vector out(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) out[static_cast<Eigen::Index>(r)] = v[static_cast<Eigen::Index>(rows[r])];
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// public operations

/// Penalized objective for original-scale coefficients. With standardization
/// the penalty applies to coefficient * column SD, as inside the solver.
inline double penalized_objective(const Matrix& x, const Vector& y, const PenaltySpec& pen, double lambda,
                                  double intercept, const Vector& coef) {
    const auto d = detail::make_design(x, pen.standardize);
    const auto it = detail::to_internal(d.scaling, intercept, coef);
    const Vector eta = (x * coef).array() + intercept;
    return detail::loss_from_eta(eta, y) + detail::penalty_value(pen, lambda, it.beta);
}

/// Gradient of the smooth part of the objective (loss + ridge term) with
/// respect to (intercept, coefficients) on the original scale. Element 0 is
/// the intercept.
inline Vector smooth_gradient(const Matrix& x, const Vector& y, const PenaltySpec& pen, double lambda,
                              double intercept, const Vector& coef) {
    const auto d = detail::make_design(x, pen.standardize);
    const double n = static_cast<double>(y.size());
    Vector mu(y.size());
    const Vector eta = (x * coef).array() + intercept;
    for (Eigen::Index i = 0; i < eta.size(); ++i) mu[i] = logistic(eta[i]);
    const Vector r = mu - y;
    Vector g(coef.size() + 1);
    g[0] = r.sum() / n;
    g.tail(coef.size()) = x.transpose() * r / n;
    for (Eigen::Index j = 0; j < coef.size(); ++j) {
        const double s = d.scaling.scale[j];
        g[j + 1] += lambda * (1.0 - pen.alpha) * s * s * coef[j];
    }
    return g;
}

/// Largest violation of the optimality conditions, measured in the internal frame.
inline double kkt_residual(const Matrix& x, const Vector& y, const PenaltySpec& pen, double lambda, double intercept,
                           const Vector& coef) {
    const auto d = detail::make_design(x, pen.standardize);
    const auto it = detail::to_internal(d.scaling, intercept, coef);
    const double n = static_cast<double>(y.size());
    const Vector eta = (d.x * it.beta).array() + it.b0;
    Vector r(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) r[i] = logistic(eta[i]) - y[i];
    double worst = std::abs(r.sum() / n);
    const double l1 = lambda * pen.alpha;
    for (Eigen::Index j = 0; j < coef.size(); ++j) {
        if (!d.usable[static_cast<std::size_t>(j)]) continue;
        const double b = it.beta[j];
        const double g = d.x.col(j).dot(r) / n + lambda * (1.0 - pen.alpha) * b;
        double v;
        if (b > 0.0)
            v = std::abs(g + l1);
        else if (b < 0.0)
            v = std::abs(g - l1);
        else if (pen.nonnegative)
            v = std::max(0.0, -(g + l1));
        else
            v = std::max(0.0, std::abs(g) - l1);
        worst = std::max(worst, v);
    }
    return worst;
}

/// Decreasing, log-spaced lambda sequence from lambda_max down to epsilon * lambda_max.
inline std::vector<double> lambda_path(const Matrix& x, const Vector& y, const PenaltySpec& pen) {
    pen.validate();
    validate_problem(x, y);
    const auto d = detail::make_design(x, pen.standardize);
    return detail::log_spaced(detail::lambda_max(d, y, pen), pen);
}

/// Minimize the penalized objective at one lambda.
inline GlmPoint fit_at_lambda(const Matrix& x, const Vector& y, const PenaltySpec& pen, double lambda,
                              const std::optional<GlmPoint>& warm_start = std::nullopt,
                              const SolverControl& ctl = {}) {
    pen.validate();
    validate_problem(x, y);
    if (!(lambda > 0.0)) throw InputError("lambda must be positive");
    const auto d = detail::make_design(x, pen.standardize);
    detail::Iterate start = detail::null_iterate(y, x.cols());
    if (warm_start) {
        if (warm_start->coefficients.size() != x.cols()) throw InputError("warm start has wrong length");
        start = detail::to_internal(d.scaling, warm_start->intercept, warm_start->coefficients);
    }
    long sweeps = 0;
    detail::Iterate it;
    if (start.beta.isZero(0.0) && detail::null_is_optimal(d, y, pen, lambda))
        it = detail::null_iterate(y, x.cols());
    else
        it = detail::solve(d, y, pen, lambda, std::move(start), ctl, sweeps, nullptr, detail::lambda_max(d, y, pen));
    auto [b0, coef] = detail::to_original(d.scaling, it);
    GlmPoint out;
    out.intercept = b0;
    out.coefficients = std::move(coef);
    out.sweeps = sweeps;
    const Vector eta = (d.x * it.beta).array() + it.b0;
    out.objective = detail::loss_from_eta(eta, y) + detail::penalty_value(pen, lambda, it.beta);
    return out;
}

/// Binomial deviance -2 [y log p + (1-y) log(1-p)] for one linear predictor.
inline double binomial_deviance(double eta, double y) { return 2.0 * (log1pexp(eta) - y * eta); }

/// Cross-validated deviance curve over a fixed lambda sequence.
inline CvCurve cross_validate(const Matrix& x, const Vector& y, const PenaltySpec& pen,
                              const std::vector<double>& lambdas, const FoldAssignment& folds,
                              const CvOptions& opt = {}) {
    if (folds.size() != static_cast<std::size_t>(y.size())) throw InputError("fold assignment does not cover all observations");
    const std::size_t k = folds.k;
    const std::size_t m = lambdas.size();
    std::vector<std::vector<double>> fold_dev(k, std::vector<double>(m, 0.0));
    std::vector<std::size_t> fold_n(k, 0);

    parallel_for(k, opt.threads, [&](std::size_t f) {
        const auto train = folds.complement(f);
        const auto held = folds.members(f);
        if (held.empty()) throw FoldError("fold " + std::to_string(f) + " is empty", f);
        const Vector ytr = detail::rows_of(y, train);
        bool has0 = false, has1 = false;
        for (Eigen::Index i = 0; i < ytr.size(); ++i) (ytr[i] > 0.5 ? has1 : has0) = true;
        if (!has0 || !has1)
            throw FoldError("training part of fold " + std::to_string(f) + " contains a single class", f);
        opt.audit.report("cv" + std::to_string(f), train, held);

        const auto d = detail::make_design(detail::rows_of(x, train), pen.standardize);
        const auto path = detail::fit_path(d, ytr, pen, lambdas, m - 1, opt.control);
        const Matrix xh = detail::rows_of(x, held);
        const Vector yh = detail::rows_of(y, held);
        for (std::size_t l = 0; l < m; ++l) {
            auto [b0, coef] = detail::to_original(d.scaling, path[l]);
            const Vector eta = (xh * coef).array() + b0;
            double s = 0.0;
            for (Eigen::Index i = 0; i < eta.size(); ++i) s += binomial_deviance(eta[i], yh[i]);
            fold_dev[f][l] = s / static_cast<double>(eta.size());
        }
        fold_n[f] = held.size();
    });

    CvCurve cv;
    cv.lambda = lambdas;
    cv.mean_deviance.assign(m, 0.0);
    cv.se_deviance.assign(m, 0.0);
    const double total = static_cast<double>(y.size());
    for (std::size_t l = 0; l < m; ++l) {
        double mean = 0.0;
        for (std::size_t f = 0; f < k; ++f) mean += static_cast<double>(fold_n[f]) * fold_dev[f][l];
        mean /= total;
        double var = 0.0;
        for (std::size_t f = 0; f < k; ++f) {
            const double dlt = fold_dev[f][l] - mean;
            var += static_cast<double>(fold_n[f]) * dlt * dlt;
        }
        var /= total;
        cv.mean_deviance[l] = mean;
        cv.se_deviance[l] = std::sqrt(var / static_cast<double>(k - 1));
    }
    // minimum mean deviance; near-ties (1e-12) go to the largest lambda
    const double best = *std::min_element(cv.mean_deviance.begin(), cv.mean_deviance.end());
    for (std::size_t l = 0; l < m; ++l) {
        if (cv.mean_deviance[l] <= best + 1e-12) {
            cv.selected = l;
            break;
        }
    }
    return cv;
}

/// Fit on all rows at lambdas[index], following the path with warm starts.
inline FittedGlm refit_at(const Matrix& x, const Vector& y, const PenaltySpec& pen, const CvCurve& cv,
                          const SolverControl& ctl = {}) {
    const auto d = detail::make_design(x, pen.standardize);
    const auto path = detail::fit_path(d, y, pen, cv.lambda, cv.selected, ctl);
    auto [b0, coef] = detail::to_original(d.scaling, path.back());
    FittedGlm fit;
    fit.intercept = b0;
    fit.coefficients = std::move(coef);
    fit.lambda_selected = cv.lambda[cv.selected];
    fit.cv = cv;
    fit.scaling = d.scaling;
    fit.penalty = pen;
    fit.outcome_mean = y.mean();
    return fit;
}

/// Lambda path on all data, k-fold deviance curve, refit at the minimizing lambda.
inline FittedGlm cv_fit(const Matrix& x, const Vector& y, const PenaltySpec& pen, const FoldAssignment& folds,
                        const CvOptions& opt = {}) {
    const auto lambdas = lambda_path(x, y, pen);
    const auto cv = cross_validate(x, y, pen, lambdas, folds, opt);
    return refit_at(x, y, pen, cv, opt.control);
}

/// Logistic link applied to intercept + X * coefficients.
inline Vector predict_proba(double intercept, const Vector& coef, const Matrix& x) {
    if (x.cols() != coef.size())
        throw InputError("predictor count (" + std::to_string(x.cols()) + ") does not match model (" +
                         std::to_string(coef.size()) + ")");
    Vector eta = (x * coef).array() + intercept;
    for (Eigen::Index i = 0; i < eta.size(); ++i) eta[i] = logistic(eta[i]);
    return eta;
}

inline Vector predict_proba(const FittedGlm& model, const Matrix& x) {
    return predict_proba(model.intercept, model.coefficients, x);
}

inline Vector predict_proba(const GlmPoint& point, const Matrix& x) {
    return predict_proba(point.intercept, point.coefficients, x);
}

}  // namespace staplr
