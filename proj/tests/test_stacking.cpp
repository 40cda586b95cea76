#include "staplr/importance.hpp"
#include "staplr/metrics.hpp"
#include "staplr/stacking.hpp"
#include "staplr/synthetic.hpp"

#include "two_level.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <mutex>
#include <random>
#include <set>

using namespace staplr;

namespace {

Dataset small_synthetic(std::vector<std::vector<std::size_t>> shape, std::vector<SignalLeaf> signal, std::size_t n,
                        std::uint64_t seed) {
    SyntheticSpec s;
    s.tree = synthetic_tree(shape);
    s.signal = std::move(signal);
    s.correlation = 0.3;
    s.n = n;
    s.seed = seed;
    return generate_synthetic(s);
}

StackingConfig quick_config(std::uint64_t seed, std::size_t k = 5) {
    StackingConfig cfg;
    cfg.k = k;
    cfg.seed = seed;
    cfg.leaf_penalty.nlambda = 30;
    cfg.internal_penalty.nlambda = 30;
    return cfg;
}

void expect_same_glm(const FittedGlm& a, const FittedGlm& b) {
    EXPECT_EQ(a.intercept, b.intercept);
    EXPECT_EQ(a.coefficients, b.coefficients);
    EXPECT_EQ(a.lambda_selected, b.lambda_selected);
}

ModelNode hand_leaf(const std::string& id, double b0, std::vector<double> beta) {
    ModelNode n;
    n.id = id;
    n.glm.intercept = b0;
    n.glm.coefficients = Eigen::Map<Vector>(beta.data(), static_cast<Eigen::Index>(beta.size()));
    for (std::size_t j = 0; j < beta.size(); ++j) n.predictors.push_back(id + "_x" + std::to_string(j));
    return n;
}

StackedModel hand_two_leaf_model() {
    StackedModel m;
    m.root.id = "root";
    m.root.glm.intercept = -0.4;
    m.root.glm.coefficients = Vector(2);
    m.root.glm.coefficients << 1.3, 0.7;
    m.root.children = {hand_leaf("a", 0.2, {0.5, -1.0}), hand_leaf("b", -0.3, {2.0})};
    m.root.predictors = {"a", "b"};
    m.training_mean = 0.4;
    return m;
}

}  // namespace

TEST(OutOfFold, InterceptOnlyGivesComplementProportion) {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> g;
    const Eigen::Index n = 60;
    Matrix x(n, 2);
    Vector y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        y[i] = i % 3 == 0 ? 1.0 : 0.0;
        // tiny columns that point against y in every subset: the nonnegative
        // lasso keeps both coefficients at zero for every lambda
        x(i, 0) = -1e-3 * y[i] + 1e-6 * g(rng);
        x(i, 1) = -1e-3 * y[i] + 1e-6 * g(rng);
    }
    PenaltySpec pen = PenaltySpec::nonnegative_lasso();
    pen.nlambda = 5;
    const auto folds = make_folds(y, 5, 10);
    const auto oof = out_of_fold(x, y, pen, folds);
    for (std::size_t f = 0; f < 5; ++f) {
        double ones = 0.0;
        const auto train = folds.complement(f);
        for (auto i : train) ones += y[static_cast<Eigen::Index>(i)];
        const double expected = ones / static_cast<double>(train.size());
        for (auto i : folds.members(f)) EXPECT_NEAR(oof.z[static_cast<Eigen::Index>(i)], expected, 1e-9);
    }
}

TEST(OutOfFold, SizeAndRangeForStudySizedData) {
    const auto data = small_synthetic({{4}}, {{"s1m1", 1.0}}, 249, 6);
    const Matrix& x = data.hierarchy.leaves()[0]->data.values;
    PenaltySpec pen = PenaltySpec::ridge();
    pen.nlambda = 20;
    const auto oof = out_of_fold(x, data.outcome, pen, make_folds(data.outcome, 10, 1));
    ASSERT_EQ(oof.z.size(), 249);
    EXPECT_TRUE((oof.z.array() > 0.0).all() && (oof.z.array() < 1.0).all());
}

TEST(OutOfFold, SeparableFeatureRanksWell) {
    const Eigen::Index n = 80;
    Matrix x(n, 1);
    Vector y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        y[i] = i % 2;
        x(i, 0) = (y[i] > 0 ? 1.0 : -1.0) + 0.01 * static_cast<double>(i % 7);
    }
    PenaltySpec pen = PenaltySpec::ridge();
    pen.nlambda = 20;
    const auto oof = out_of_fold(x, y, pen, make_folds(y, 10, 3));
    EXPECT_GE(auc(oof.z, y), 0.95);
}

TEST(OutOfFold, NoPredictionComesFromAModelThatSawIt) {
    const auto data = small_synthetic({{3, 3}, {3}}, {{"s1m1", 1.0}}, 60, 12);
    std::mutex mu;
    std::vector<AuditEvent> events;
    const AuditHook hook = [&](const AuditEvent& e) {
        std::lock_guard lock(mu);
        events.push_back(e);
    };
    fit_staplr(data, quick_config(3, 4), {}, AuditContext(&hook, "fit"));
    ASSERT_FALSE(events.empty());
    std::size_t oof_events = 0;
    for (const auto& e : events) {
        const std::set<std::size_t> train(e.train.begin(), e.train.end());
        for (auto i : e.evaluate) EXPECT_EQ(train.count(i), 0u) << e.context << " " << e.stage;
        oof_events += e.stage.rfind("oof", 0) == 0;
    }
    EXPECT_GT(oof_events, 0u);
}

TEST(FitStaplr, ModelCountsForFortyLeaves) {
    std::vector<std::vector<std::size_t>> shape{std::vector<std::size_t>(5, 2), std::vector<std::size_t>(4, 2),
                                                std::vector<std::size_t>(31, 2)};
    const auto data = small_synthetic(shape, {{"s1m1", 1.5}}, 60, 2);
    auto cfg = quick_config(1, 3);
    cfg.leaf_penalty.nlambda = 8;
    cfg.internal_penalty.nlambda = 8;
    const auto model = fit_staplr(data, cfg);
    EXPECT_EQ(model.leaves().size(), 40u);
    EXPECT_EQ(model.nodes().size(), 44u);
    ASSERT_EQ(model.root.children.size(), 3u);
    EXPECT_EQ(model.root.glm.coefficients.size(), 3);
    EXPECT_EQ(model.root.children[0].glm.coefficients.size(), 5);
    EXPECT_EQ(model.root.children[1].glm.coefficients.size(), 4);
    EXPECT_EQ(model.root.children[2].glm.coefficients.size(), 31);
    for (const auto* n : model.nodes())
        if (!n->is_leaf()) EXPECT_TRUE((n->glm.coefficients.array() >= 0.0).all());
}

TEST(FitStaplr, DepthTwoMatchesDirectImplementation) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const auto data = flatten_to_leaves(small_synthetic({{4, 3}, {5}}, {{"s1m2", 1.2}}, 70, seed));
        const auto cfg = quick_config(seed + 100);
        const auto got = fit_staplr(data, cfg);
        const auto want = reference::two_level(data, cfg);
        expect_same_glm(got.root.glm, want.root.glm);
        ASSERT_EQ(got.root.children.size(), want.root.children.size());
        for (std::size_t v = 0; v < want.root.children.size(); ++v)
            expect_same_glm(got.root.children[v].glm, want.root.children[v].glm);
    }
}

TEST(FitStaplr, SeparableDataClassifiedWell) {
    const auto data = small_synthetic({{5}, {5}}, {{"s1m1", 8.0}}, 120, 9);
    const auto model = fit_staplr(data, quick_config(5));
    const Vector p = predict_stacked(model, data.hierarchy);
    EXPECT_GE(auc(p, data.outcome), 0.95);
    EXPECT_GE(accuracy(p, data.outcome), 0.9);
}

TEST(FitStaplr, SameResultAcrossThreadCounts) {
    const auto data = small_synthetic({{3, 3}, {3, 3}}, {{"s2m1", 1.0}}, 60, 21);
    auto cfg = quick_config(8);
    const auto one = model_to_json(fit_staplr(data, cfg)).dump();
    cfg.threads = 3;
    EXPECT_EQ(model_to_json(fit_staplr(data, cfg)).dump(), one);
}

TEST(FitStaplr, NodeFailureNamesPath) {
    auto data = small_synthetic({{3}, {3}}, {{"s1m1", 1.0}}, 30, 5);
    auto cfg = quick_config(1, 5);
    cfg.k = 40;  // more folds than observations
    try {
        fit_staplr(data, cfg);
        FAIL() << "expected FitError";
    } catch (const FitError& e) {
        EXPECT_NE(std::string(e.what()).find("root/"), std::string::npos);
    }
}

TEST(Predict, ZeroWeightsGiveHalf) {
    auto m = hand_two_leaf_model();
    m.root.glm.intercept = 0.0;
    m.root.glm.coefficients.setZero();
    std::map<std::string, Vector> outputs{{"a", Vector::Constant(3, 0.9)}, {"b", Vector::Constant(3, 0.1)}};
    EXPECT_TRUE(predict_from_leaf_outputs(m, outputs).isApprox(Vector::Constant(3, 0.5)));
}

TEST(Predict, HandComputedComposition) {
    const auto m = hand_two_leaf_model();
    FeatureMatrix a{Matrix(1, 2), {"a_x0", "a_x1"}, "a"};
    a.values << 0.8, -0.2;
    FeatureMatrix b{Matrix(1, 1), {"b_x0"}, "b"};
    b.values << 0.3;
    const double pa = 1.0 / (1.0 + std::exp(-(0.2 + 0.5 * 0.8 + (-1.0) * (-0.2))));
    const double pb = 1.0 / (1.0 + std::exp(-(-0.3 + 2.0 * 0.3)));
    const double want = 1.0 / (1.0 + std::exp(-(-0.4 + 1.3 * pa + 0.7 * pb)));
    EXPECT_NEAR(predict_stacked(m, {{"a", a}, {"b", b}})[0], want, 1e-15);
}

TEST(Predict, ColumnsMatchedByIdNotPosition) {
    const auto m = hand_two_leaf_model();
    FeatureMatrix a{Matrix(1, 3), {"extra", "a_x1", "a_x0"}, "a"};
    a.values << 99.0, -0.2, 0.8;
    FeatureMatrix a2{Matrix(1, 2), {"a_x0", "a_x1"}, "a"};
    a2.values << 0.8, -0.2;
    FeatureMatrix b{Matrix(1, 1), {"b_x0"}, "b"};
    b.values << 0.3;
    EXPECT_EQ(predict_stacked(m, {{"a", a}, {"b", b}})[0], predict_stacked(m, {{"a", a2}, {"b", b}})[0]);
}

TEST(Predict, SchemaMismatchesRejected) {
    const auto m = hand_two_leaf_model();
    FeatureMatrix a{Matrix::Zero(1, 2), {"a_x0", "wrong"}, "a"};
    FeatureMatrix b{Matrix::Zero(1, 1), {"b_x0"}, "b"};
    EXPECT_THROW(predict_stacked(m, {{"a", a}, {"b", b}}), SchemaError);
    EXPECT_THROW(predict_stacked(m, {{"b", b}}), SchemaError);
}

TEST(Predict, MonotoneInEachLeafOutput) {
    const auto data = small_synthetic({{3, 3}, {3}}, {{"s1m1", 1.5}, {"s2m1", 0.8}}, 80, 31);
    const auto model = fit_staplr(data, quick_config(2));
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.01, 0.99);
    for (const auto* leaf : model.leaves()) {
        for (int trial = 0; trial < 20; ++trial) {
            std::map<std::string, Vector> outs;
            for (const auto* l : model.leaves()) outs[l->id] = Vector::Constant(1, u(rng));
            const double lo = predict_from_leaf_outputs(model, outs)[0];
            outs[leaf->id][0] = std::min(1.0, outs[leaf->id][0] + 0.2);
            EXPECT_GE(predict_from_leaf_outputs(model, outs)[0], lo);
        }
    }
}

TEST(Classify, TieGoesToClassOne) {
    Vector p(3);
    p << 0.5, 0.2, 0.9;
    EXPECT_EQ(classify(p), (std::vector<int>{1, 0, 1}));
}

TEST(Serialization, RoundTripIsExact) {
    const auto data = small_synthetic({{3, 2}, {4}}, {{"s1m1", 1.0}}, 60, 41);
    const auto model = fit_staplr(data, quick_config(4));
    const auto path = std::filesystem::temp_directory_path() / "staplr_model_rt.json";
    save_model(model, path);
    const auto back = load_model(path);
    EXPECT_EQ(model_to_json(back).dump(), model_to_json(model).dump());
    EXPECT_EQ(predict_stacked(back, data.hierarchy), predict_stacked(model, data.hierarchy));
}

TEST(Serialization, CorruptFileRejected) {
    const auto path = std::filesystem::temp_directory_path() / "staplr_model_bad.json";
    std::ofstream(path) << R"({"format":"staplr-model","version":1,"root":{"id":"r"}})";
    EXPECT_THROW(load_model(path), ModelFormatError);
    std::ofstream(path) << "not json";
    EXPECT_THROW(load_model(path), ModelFormatError);
}
