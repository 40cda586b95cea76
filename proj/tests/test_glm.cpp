#include "oracle.hpp"

#include "staplr/glm.hpp"
#include "staplr/metrics.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace staplr;

namespace {

// Solver coefficients mapped into the oracle's frame, then scored by the oracle objective.
double oracle_score(const oracle::Instance& ins, const PenaltySpec& pen, double lambda, const GlmPoint& pt) {
    if (!pen.standardize) return oracle::objective(ins.x, ins.y, pen.alpha, lambda, pt.intercept, pt.coefficients);
    const Matrix xs = oracle::standardize(ins.x);
    Vector beta(pt.coefficients.size());
    double b0 = pt.intercept;
    for (Eigen::Index j = 0; j < beta.size(); ++j) {
        const auto c = ins.x.col(j);
        const double mean = c.mean();
        const double sd = std::sqrt((c.array() - mean).square().sum() / static_cast<double>(c.size()));
        beta[j] = pt.coefficients[j] * sd;
        b0 += pt.coefficients[j] * mean;
    }
    return oracle::objective(xs, ins.y, pen.alpha, lambda, b0, beta);
}

oracle::Solution oracle_solve(const oracle::Instance& ins, const PenaltySpec& pen, double lambda) {
    const Matrix x = pen.standardize ? oracle::standardize(ins.x) : ins.x;
    return oracle::proximal_gradient(x, ins.y, pen.alpha, lambda, pen.nonnegative);
}

Vector balanced_outcome(int n) {
    Vector y(n);
    for (int i = 0; i < n; ++i) y[i] = i % 2;
    return y;
}

}  // namespace

TEST(Glm, HugeLambdaLassoGivesInterceptOnly) {
    std::mt19937_64 rng(1);
    auto ins = oracle::random_instance(rng, 40, 4);
    PenaltySpec pen = PenaltySpec::elastic_net(1.0);
    const auto pt = fit_at_lambda(ins.x, ins.y, pen, 1e6);
    EXPECT_TRUE(pt.coefficients.isZero(0.0));
    EXPECT_DOUBLE_EQ(pt.intercept, logit(ins.y.mean()));
}

TEST(Glm, ZeroColumnsGiveInterceptOnly) {
    const Matrix x = Matrix::Zero(12, 3);
    Vector y = balanced_outcome(12);
    y[0] = 1;  // 7 of 12
    for (double lambda : {1e-3, 0.1, 10.0}) {
        for (double alpha : {0.0, 0.5, 1.0}) {
            const auto pt = fit_at_lambda(x, y, PenaltySpec::elastic_net(alpha), lambda);
            EXPECT_TRUE(pt.coefficients.isZero(0.0));
            EXPECT_NEAR(pt.intercept, logit(7.0 / 12.0), 1e-12);
        }
    }
}

TEST(Glm, NonnegativeLassoMatchesOracleOn20x5) {
    std::mt19937_64 rng(20);
    auto ins = oracle::random_instance(rng, 20, 5);
    PenaltySpec pen = PenaltySpec::nonnegative_lasso(false);
    const auto pt = fit_at_lambda(ins.x, ins.y, pen, 0.1);
    const auto ref = oracle_solve(ins, pen, 0.1);
    const double ours = oracle_score(ins, pen, 0.1, pt);
    EXPECT_LE(std::abs(ours - ref.objective), 1e-6 * std::abs(ref.objective));
    EXPECT_GE(pt.coefficients.minCoeff(), 0.0);
}

TEST(Glm, PathEndpointsAndLength) {
    std::mt19937_64 rng(3);
    auto ins = oracle::random_instance(rng, 30, 4);
    PenaltySpec pen = PenaltySpec::elastic_net(0.7);
    const auto path = lambda_path(ins.x, ins.y, pen);
    ASSERT_EQ(path.size(), 100u);
    EXPECT_NEAR(path.back() / path.front(), 0.01, 1e-14);
    for (std::size_t i = 1; i < path.size(); ++i) {
        EXPECT_LT(path[i], path[i - 1]);
        EXPECT_NEAR(std::log(path[i - 1] / path[i]), std::log(100.0) / 99.0, 1e-10);
    }
}

TEST(Glm, LassoLambdaMaxIsMaxAbsInnerProduct) {
    std::mt19937_64 rng(4);
    auto ins = oracle::random_instance(rng, 25, 5);
    const Matrix xs = oracle::standardize(ins.x);
    const Vector r = ins.y.array() - ins.y.mean();
    const double expected = (xs.transpose() * r).cwiseAbs().maxCoeff() / 25.0;
    const auto path = lambda_path(ins.x, ins.y, PenaltySpec::elastic_net(1.0));
    EXPECT_NEAR(path.front(), expected, 1e-14 * expected);
}

TEST(Glm, RidgeLambdaMaxUsesAlphaFloor) {
    std::mt19937_64 rng(5);
    auto ins = oracle::random_instance(rng, 25, 3);
    const auto lasso = lambda_path(ins.x, ins.y, PenaltySpec::elastic_net(1.0));
    const auto ridge = lambda_path(ins.x, ins.y, PenaltySpec::ridge());
    EXPECT_NEAR(ridge.front(), lasso.front() / kRidgeAlphaFloor, 1e-9 * ridge.front());
}

TEST(Glm, ElasticNetLambdaMaxBoundary) {
    std::mt19937_64 rng(6);
    auto ins = oracle::random_instance(rng, 20, 5);
    PenaltySpec pen = PenaltySpec::elastic_net(0.5);
    const auto path = lambda_path(ins.x, ins.y, pen);
    EXPECT_TRUE(fit_at_lambda(ins.x, ins.y, pen, path[0]).coefficients.isZero(0.0));
    EXPECT_TRUE(fit_at_lambda(ins.x, ins.y, pen, path[0] * 1.0001).coefficients.isZero(0.0));
    // at path[1] the oracle leaves the null model
    const auto ref = oracle_solve(ins, pen, path[1]);
    EXPECT_GT(ref.beta.cwiseAbs().maxCoeff(), 0.0);
    const auto pt = fit_at_lambda(ins.x, ins.y, pen, path[1]);
    EXPECT_GT(pt.coefficients.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_LE(oracle_score(ins, pen, path[1], pt), ref.objective + 1e-6 * (1 + std::abs(ref.objective)));
}

TEST(Glm, OracleEquivalenceProperty) {
    std::mt19937_64 rng(7);
    std::uniform_int_distribution<int> nd(12, 30), pd(1, 6);
    std::uniform_real_distribution<double> frac(0.05, 0.9);
    for (int trial = 0; trial < 36; ++trial) {
        auto ins = oracle::random_instance(rng, nd(rng), pd(rng));
        PenaltySpec pen = PenaltySpec::elastic_net(std::array{0.0, 0.5, 1.0}[trial % 3]);
        pen.nonnegative = (trial / 3) % 2 == 1;
        pen.standardize = (trial / 6) % 2 == 0;
        const auto path = lambda_path(ins.x, ins.y, pen);
        const double lambda = path[0] * (pen.alpha == 0.0 ? 0.01 : 1.0) * frac(rng);
        const auto pt = fit_at_lambda(ins.x, ins.y, pen, lambda);
        const auto ref = oracle_solve(ins, pen, lambda);
        const double ours = oracle_score(ins, pen, lambda, pt);
        EXPECT_LE(ours, ref.objective + 1e-6 * (1 + std::abs(ref.objective))) << "trial " << trial;
        EXPECT_LE(kkt_residual(ins.x, ins.y, pen, lambda, pt.intercept, pt.coefficients), 1e-5) << "trial " << trial;
    }
}

TEST(Glm, ObjectiveNeverIncreasesAcrossIrlsSteps) {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 10; ++trial) {
        auto ins = oracle::random_instance(rng, 30, 5, 3.0);
        PenaltySpec pen = PenaltySpec::elastic_net(trial % 2 ? 1.0 : 0.3);
        std::vector<double> trace;
        SolverControl ctl;
        ctl.objective_trace = &trace;
        const auto path = lambda_path(ins.x, ins.y, pen);
        fit_at_lambda(ins.x, ins.y, pen, path.back(), std::nullopt, ctl);
        ASSERT_FALSE(trace.empty());
        for (std::size_t i = 1; i < trace.size(); ++i) EXPECT_LE(trace[i], trace[i - 1]);
    }
}

TEST(Glm, KktCertificationNonnegativeLasso) {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 10; ++trial) {
        auto ins = oracle::random_instance(rng, 30, 6);
        PenaltySpec pen = PenaltySpec::nonnegative_lasso(true);
        const auto path = lambda_path(ins.x, ins.y, pen);
        const double lambda = path[20];
        const auto pt = fit_at_lambda(ins.x, ins.y, pen, lambda);
        // gradient of the loss in the standardized frame
        const Matrix xs = oracle::standardize(ins.x);
        Vector beta(6);
        double b0 = pt.intercept;
        for (int j = 0; j < 6; ++j) {
            const double mean = ins.x.col(j).mean();
            const double sd = std::sqrt((ins.x.col(j).array() - mean).square().mean());
            beta[j] = pt.coefficients[j] * sd;
            b0 += pt.coefficients[j] * mean;
        }
        Vector r(30);
        for (int i = 0; i < 30; ++i) r[i] = oracle::sigmoid(b0 + xs.row(i).dot(beta)) - ins.y[i];
        for (int j = 0; j < 6; ++j) {
            const double g = xs.col(j).dot(r) / 30.0;
            if (beta[j] > 0)
                EXPECT_LE(std::abs(g + lambda), 1e-5);
            else
                EXPECT_GE(g + lambda, -1e-5);
        }
    }
}

TEST(Glm, RidgeGradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(10);
    std::normal_distribution<double> nd;
    auto ins = oracle::random_instance(rng, 25, 4);
    PenaltySpec pen = PenaltySpec::ridge();
    const double lambda = 0.05;
    const auto pt = fit_at_lambda(ins.x, ins.y, pen, lambda);
    Vector theta(5);
    theta[0] = pt.intercept;
    theta.tail(4) = pt.coefficients;
    for (int probe = 0; probe < 3; ++probe) {
        Vector at = theta;
        if (probe > 0)
            for (int j = 0; j < 5; ++j) at[j] += 0.3 * nd(rng);
        const Vector g = smooth_gradient(ins.x, ins.y, pen, lambda, at[0], at.tail(4));
        const double h = 1e-5;
        for (int j = 0; j < 5; ++j) {
            Vector up = at, dn = at;
            up[j] += h;
            dn[j] -= h;
            const double fd = (penalized_objective(ins.x, ins.y, pen, lambda, up[0], up.tail(4)) -
                               penalized_objective(ins.x, ins.y, pen, lambda, dn[0], dn.tail(4))) /
                              (2 * h);
            EXPECT_LE(std::abs(g[j] - fd), 1e-4 * std::max(1.0, std::abs(fd)));
        }
        if (probe == 0) EXPECT_LE(g.cwiseAbs().maxCoeff(), 1e-5);
    }
}

TEST(Glm, OriginalScalePredictionsMatchInternalFrame) {
    std::mt19937_64 rng(11);
    auto ins = oracle::random_instance(rng, 40, 5);
    ins.x.col(2).array() *= 250.0;
    ins.x.col(3).array() += 40.0;
    PenaltySpec pen = PenaltySpec::elastic_net(0.4);
    const auto path = lambda_path(ins.x, ins.y, pen);
    const auto pt = fit_at_lambda(ins.x, ins.y, pen, path[30]);
    const auto d = detail::make_design(ins.x, true);
    const auto it = detail::to_internal(d.scaling, pt.intercept, pt.coefficients);
    const Vector internal = predict_proba(it.b0, it.beta, d.x);
    const Vector original = predict_proba(pt, ins.x);
    EXPECT_LE((internal - original).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Glm, NonnegativityIsExact) {
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 10; ++trial) {
        auto ins = oracle::random_instance(rng, 30, 6, 2.0);
        for (bool standardize : {false, true}) {
            PenaltySpec pen = PenaltySpec::nonnegative_lasso(standardize);
            const auto path = lambda_path(ins.x, ins.y, pen);
            const auto pt = fit_at_lambda(ins.x, ins.y, pen, path.back());
            EXPECT_GE(pt.coefficients.minCoeff(), 0.0);
        }
    }
}

TEST(Glm, InputErrors) {
    Matrix x = Matrix::Random(10, 2);
    Vector ones = Vector::Ones(10);
    EXPECT_THROW(fit_at_lambda(x, ones, PenaltySpec::ridge(), 0.1), InputError);
    Vector y = balanced_outcome(10);
    EXPECT_THROW(fit_at_lambda(x, y, PenaltySpec::ridge(), 0.0), InputError);
    Vector bad = y;
    bad[0] = 2;
    EXPECT_THROW(lambda_path(x, bad, PenaltySpec::ridge()), InputError);
    EXPECT_THROW(predict_proba(0.0, Vector::Zero(3), x), InputError);
    PenaltySpec p;
    p.alpha = 1.5;
    EXPECT_THROW(p.validate(), InputError);
    p = {};
    p.nlambda = 1;
    EXPECT_THROW(p.validate(), InputError);
    Matrix nan = x;
    nan(0, 0) = std::nan("");
    EXPECT_THROW(fit_at_lambda(nan, y, PenaltySpec::ridge(), 0.1), InputError);
}

TEST(Glm, ConvergenceErrorCarriesIterate) {
    std::mt19937_64 rng(13);
    auto ins = oracle::random_instance(rng, 30, 5, 3.0);
    SolverControl ctl;
    ctl.max_sweeps = 1;
    try {
        fit_at_lambda(ins.x, ins.y, PenaltySpec::elastic_net(0.5), 1e-4, std::nullopt, ctl);
        FAIL() << "expected ConvergenceError";
    } catch (const ConvergenceError& e) {
        EXPECT_EQ(e.coefficients().size(), 5);
        EXPECT_TRUE(std::isfinite(e.intercept()));
    }
}

TEST(Glm, PredictProbaLogisticContract) {
    const Matrix x = Matrix::Zero(1, 1);
    EXPECT_DOUBLE_EQ(predict_proba(0.0, Vector::Zero(1), x)[0], 0.5);
    for (double t : {-30.0, -1.0, 0.0, 2.0, 30.0}) EXPECT_NEAR(logistic(t) + logistic(-t), 1.0, 1e-15);
    for (double t : {-1000.0, 1000.0}) {
        const double v = predict_proba(t, Vector::Zero(1), x)[0];
        EXPECT_TRUE(std::isfinite(v));
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
    EXPECT_GT(logistic(-700.0), 0.0);
    EXPECT_LT(logistic(30.0), 1.0);
}

TEST(CvFit, SeparableFeatureGetsPositiveWeightAndPerfectAuc) {
    const int n = 60;
    Matrix x(n, 1);
    Vector y(n);
    for (int i = 0; i < n; ++i) {
        y[i] = i % 2;
        x(i, 0) = (y[i] > 0 ? 1.0 : -1.0) + 0.01 * i;
    }
    for (double alpha : {0.0, 1.0}) {
        const auto folds = make_folds(y, 10, 99);
        const auto fit = cv_fit(x, y, PenaltySpec::elastic_net(alpha), folds);
        EXPECT_GT(fit.coefficients[0], 0.0);
        EXPECT_DOUBLE_EQ(auc(predict_proba(fit, x), y), 1.0);
        EXPECT_EQ(fit.lambda_selected, fit.cv.lambda[fit.cv.selected]);
    }
}

TEST(CvFit, PureNoiseMostlySelectsNullModel) {
    // Monte Carlo over 20 seeds. Observed: 20/20 all-zero at the time of writing.
    int zero = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(1000 + seed);
        std::normal_distribution<double> nd;
        Matrix x(100, 10);
        Vector y(100);
        for (int i = 0; i < 100; ++i) {
            for (int j = 0; j < 10; ++j) x(i, j) = nd(rng);
            y[i] = i < 50 ? 1.0 : 0.0;
        }
        const auto fit = cv_fit(x, y, PenaltySpec::elastic_net(1.0), make_folds(y, 10, seed));
        if (fit.coefficients.isZero(0.0)) ++zero;
    }
    EXPECT_GT(zero, 10);
}

TEST(CvFit, ThreadCountDoesNotChangeResult) {
    std::mt19937_64 rng(14);
    auto ins = oracle::random_instance(rng, 80, 6);
    const auto folds = make_folds(ins.y, 10, 5);
    CvOptions one, four;
    four.threads = 4;
    const auto a = cv_fit(ins.x, ins.y, PenaltySpec::elastic_net(0.5), folds, one);
    const auto b = cv_fit(ins.x, ins.y, PenaltySpec::elastic_net(0.5), folds, four);
    EXPECT_EQ(a.lambda_selected, b.lambda_selected);
    EXPECT_EQ(a.intercept, b.intercept);
    EXPECT_TRUE(a.coefficients == b.coefficients);
    EXPECT_EQ(a.cv.mean_deviance, b.cv.mean_deviance);
}

TEST(CvFit, SingleClassTrainingFoldIsFoldError) {
    Matrix x = Matrix::Random(12, 2);
    Vector y = Vector::Zero(12);
    y[0] = 1;
    FoldAssignment folds;
    folds.k = 2;
    folds.fold_of.assign(12, 1);
    folds.fold_of[0] = 0;  // fold 1's training part is {obs 0}... fold 0 trains on zeros only
    try {
        cv_fit(x, y, PenaltySpec::ridge(), folds);
        FAIL() << "expected FoldError";
    } catch (const FoldError& e) {
        EXPECT_EQ(e.fold(), 0u);
    }
}

TEST(CvFit, TiesGoToLargestLambda) {
    // all-zero predictors: every lambda gives the same deviance
    Matrix x = Matrix::Zero(30, 2);
    Vector y = balanced_outcome(30);
    const auto fit = cv_fit(x, y, PenaltySpec::elastic_net(1.0), make_folds(y, 5, 1));
    EXPECT_EQ(fit.cv.selected, 0u);
}
