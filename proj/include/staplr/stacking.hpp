#pragma once

// Hierarchical stacked penalized logistic regression.
//
// Every leaf view gets a cross-validated (ridge by default) logistic model and
// a vector of out-of-fold predictions. Every internal node is fitted, by a
// nonnegative logistic lasso by default, on the columns of its children's
// out-of-fold predictions, and in turn produces out-of-fold predictions for
// its own parent. The root model is the meta-learner. Prediction composes the
// fitted models bottom-up.
//
// Folds: one stratified assignment per tree depth, drawn from the master seed,
// is shared by all nodes at that depth for both lambda tuning and out-of-fold
// prediction. Inside out-of-fold fold f, lambda is tuned on fresh folds of the
// training part only, drawn from (depth seed, f).

#include "staplr/audit.hpp"
#include "staplr/folds.hpp"
#include "staplr/glm.hpp"
#include "staplr/io.hpp"
#include "staplr/parallel.hpp"
#include "staplr/views.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

namespace staplr {

struct StackingConfig {
    PenaltySpec leaf_penalty = PenaltySpec::ridge();
    PenaltySpec internal_penalty = PenaltySpec::nonnegative_lasso(/*standardize=*/false);
    std::size_t k = 10;
    std::uint64_t seed = 0;
    unsigned threads = 1;
    SolverControl control;
};

struct OutOfFoldPredictions {
    std::string node_id;
    Vector z;
    FoldAssignment folds;
};

struct ModelNode {
    std::string id;
    FittedGlm glm;
    std::vector<std::string> predictors;  // leaf: feature column ids; internal: child node ids
    std::vector<ModelNode> children;
    bool degenerate = false;  // every input column was constant; intercept-only model

    bool is_leaf() const noexcept { return children.empty(); }
};

struct StackedModel {
    ModelNode root;
    double training_mean = 0.0;
    std::size_t n_train = 0;
    StackingConfig config;

    std::vector<const ModelNode*> leaves() const {
        std::vector<const ModelNode*> out;
        collect(root, out, true);
        return out;
    }

    std::vector<const ModelNode*> nodes() const {
        std::vector<const ModelNode*> out;
        collect(root, out, false);
        return out;
    }

    const ModelNode* find(std::string_view id) const {
        for (const auto* n : nodes())
            if (n->id == id) return n;
        return nullptr;
    }

private:
    static void collect(const ModelNode& n, std::vector<const ModelNode*>& out, bool leaves_only) {
        if (!leaves_only || n.is_leaf()) out.push_back(&n);
        for (const auto& c : n.children) collect(c, out, leaves_only);
    }
};

/// Fold assignment shared by every node at `depth` (root = 0).
inline FoldAssignment level_folds(const Vector& y, std::size_t k, std::uint64_t seed, std::size_t depth) {
    return make_folds(y, k, derive_seed(seed, {depth}), true);
}

/// Tuning folds used inside fold `fold` of an out-of-fold loop.
inline FoldAssignment nested_folds(const Vector& y_train, const FoldAssignment& outer, std::size_t fold) {
    return make_folds(y_train, outer.k, derive_seed(outer.seed, {fold}), true);
}

/// Out-of-fold predictions: for each fold, tune and fit on the other folds and
/// predict the held-out fold.
inline OutOfFoldPredictions out_of_fold(const Matrix& x, const Vector& y, const PenaltySpec& pen,
                                        const FoldAssignment& folds, const CvOptions& opt = {}) {
    if (folds.size() != static_cast<std::size_t>(y.size())) throw InputError("fold assignment does not cover all observations");
    OutOfFoldPredictions out;
    out.z = Vector::Zero(y.size());
    out.folds = folds;
    for (std::size_t f = 0; f < folds.k; ++f) {
        const auto train = folds.complement(f);
        const auto held = folds.members(f);
        const Vector ytr = detail::rows_of(y, train);
        try {
            validate_outcome(ytr);
        } catch (const InputError&) {
            throw FoldError("out-of-fold fold " + std::to_string(f) + ": training part contains a single class", f);
        }
        opt.audit.report("oof" + std::to_string(f), train, held);
        CvOptions inner = opt;
        inner.audit = opt.audit.sub("oof" + std::to_string(f), train);
        FittedGlm fit;
        try {
            fit = cv_fit(detail::rows_of(x, train), ytr, pen, nested_folds(ytr, folds, f), inner);
        } catch (const FoldError& e) {
            throw FoldError("out-of-fold fold " + std::to_string(f) + ": " + e.what(), f);
        }
        const Vector p = predict_proba(fit, detail::rows_of(x, held));
        for (std::size_t i = 0; i < held.size(); ++i) out.z[static_cast<Eigen::Index>(held[i])] = p[static_cast<Eigen::Index>(i)];
    }
    return out;
}

namespace detail {

struct NodeResult {
    ModelNode model;
    Vector z;  // empty for the root
};

inline bool all_columns_constant(const Matrix& z) {
    for (Eigen::Index j = 0; j < z.cols(); ++j)
        if (!(z.col(j).array() == z(0, j)).all()) return false;
    return true;
}

class StackingFitter {
public:
    StackingFitter(const Dataset& data, const StackingConfig& cfg, std::vector<std::size_t> rows, AuditContext audit)
        : data_(data), cfg_(cfg), rows_(std::move(rows)), audit_(std::move(audit)) {
        y_ = rows_of(data.outcome, rows_);
    }

    StackedModel run() {
        // leaves first (independent of each other), in parallel
        std::vector<std::pair<const ViewNode*, std::string>> leaves;  // node, path
        std::vector<std::size_t> depths;
        collect_leaves(data_.hierarchy.root, data_.hierarchy.root.id, 0, leaves, depths);
        std::vector<NodeResult> leaf_results(leaves.size());
        parallel_for(leaves.size(), cfg_.threads, [&](std::size_t i) {
            leaf_results[i] = fit_leaf(*leaves[i].first, leaves[i].second, depths[i]);
        });
        for (std::size_t i = 0; i < leaves.size(); ++i) done_.emplace(leaves[i].first, std::move(leaf_results[i]));

        StackedModel model;
        model.root = fit_internal(data_.hierarchy.root, data_.hierarchy.root.id, 0).model;
        model.training_mean = y_.mean();
        model.n_train = static_cast<std::size_t>(y_.size());
        model.config = cfg_;
        return model;
    }

private:
    void collect_leaves(const ViewNode& n, const std::string& path, std::size_t depth,
                        std::vector<std::pair<const ViewNode*, std::string>>& out, std::vector<std::size_t>& depths) {
        if (n.is_leaf()) {
            out.emplace_back(&n, path);
            depths.push_back(depth);
            return;
        }
        for (const auto& c : n.children) collect_leaves(c, path + "/" + c.id, depth + 1, out, depths);
    }

    const FoldAssignment& folds_at(std::size_t depth) {
        std::lock_guard lock(mutex_);
        auto it = folds_.find(depth);
        if (it == folds_.end()) it = folds_.emplace(depth, level_folds(y_, cfg_.k, cfg_.seed, depth)).first;
        return it->second;
    }

    NodeResult fit_leaf(const ViewNode& leaf, const std::string& path, std::size_t depth) {
        const PenaltySpec pen = leaf.penalty.value_or(cfg_.leaf_penalty);
        const Matrix x = rows_of(leaf.data.values, rows_);
        NodeResult r;
        r.model.id = leaf.id;
        r.model.predictors = leaf.data.column_ids;
        try {
            const auto& folds = folds_at(depth);
            CvOptions opt{1, cfg_.control, audit_.child("node:" + leaf.id)};
            r.model.glm = cv_fit(x, y_, pen, folds, opt);
            r.z = out_of_fold(x, y_, pen, folds, opt).z;
        } catch (const Error& e) {
            throw FitError("node " + path + ": " + e.what());
        }
        return r;
    }

    NodeResult fit_internal(const ViewNode& node, const std::string& path, std::size_t depth) {
        if (node.is_leaf()) return std::move(done_.at(&node));
        std::vector<NodeResult> kids;
        for (const auto& c : node.children) kids.push_back(fit_internal(c, path + "/" + c.id, depth + 1));

        Matrix z(y_.size(), static_cast<Eigen::Index>(kids.size()));
        NodeResult r;
        r.model.id = node.id;
        for (std::size_t c = 0; c < kids.size(); ++c) {
            z.col(static_cast<Eigen::Index>(c)) = kids[c].z;
            r.model.predictors.push_back(kids[c].model.id);
            r.model.children.push_back(std::move(kids[c].model));
        }
        const PenaltySpec pen = node.penalty.value_or(cfg_.internal_penalty);
        try {
            r.model.degenerate = all_columns_constant(z);
            if (r.model.degenerate)
                log(LogLevel::warn, "node " + path + ": all child predictions are constant; fitting intercept only");
            const auto& folds = folds_at(depth);
            CvOptions opt{cfg_.threads, cfg_.control, audit_.child("node:" + node.id)};
            r.model.glm = cv_fit(z, y_, pen, folds, opt);
            if (depth > 0) r.z = out_of_fold(z, y_, pen, folds, opt).z;
        } catch (const Error& e) {
            throw FitError("node " + path + ": " + e.what());
        }
        return r;
    }

    const Dataset& data_;
    const StackingConfig& cfg_;
    std::vector<std::size_t> rows_;
    AuditContext audit_;
    Vector y_;
    std::mutex mutex_;
    std::map<std::size_t, FoldAssignment> folds_;
    std::map<const ViewNode*, NodeResult> done_;
};

}  // namespace detail

/// Fit the full stacked model on `rows` of the dataset (all rows when empty).
inline StackedModel fit_staplr(const Dataset& data, const StackingConfig& cfg, std::vector<std::size_t> rows = {},
                               const AuditContext& audit = {}) {
    if (rows.empty()) {
        rows.resize(data.size());
        for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    }
    cfg.leaf_penalty.validate();
    cfg.internal_penalty.validate();
    if (data.hierarchy.root.is_leaf()) throw InputError("hierarchy root must have children");
    return detail::StackingFitter(data, cfg, std::move(rows), audit).run();
}

// ---------------------------------------------------------------------------
// prediction

namespace detail {

inline Vector compose(const ModelNode& node, const std::function<Vector(const ModelNode&)>& leaf_output) {
    if (node.is_leaf()) return leaf_output(node);
    std::vector<Vector> cols;
    cols.reserve(node.children.size());
    for (const auto& c : node.children) cols.push_back(compose(c, leaf_output));
    Matrix z(cols.front().size(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c) z.col(static_cast<Eigen::Index>(c)) = cols[c];
    return predict_proba(node.glm, z);
}

// Pick the model's columns out of `x` by id.
inline Matrix select_columns(const ModelNode& leaf, const FeatureMatrix& x) {
    std::unordered_map<std::string, Eigen::Index> where;
    for (std::size_t j = 0; j < x.column_ids.size(); ++j) where.emplace(x.column_ids[j], static_cast<Eigen::Index>(j));
    Matrix out(x.rows(), static_cast<Eigen::Index>(leaf.predictors.size()));
    for (std::size_t j = 0; j < leaf.predictors.size(); ++j) {
        const auto it = where.find(leaf.predictors[j]);
        if (it == where.end())
            throw SchemaError("view '" + leaf.id + "' lacks column '" + leaf.predictors[j] + "'");
        out.col(static_cast<Eigen::Index>(j)) = x.values.col(it->second);
    }
    return out;
}

}  // namespace detail

/// Stacked class-1 probabilities for new data given as leaf id -> feature matrix.
inline Vector predict_stacked(const StackedModel& model, const std::map<std::string, FeatureMatrix>& views) {
    Eigen::Index n = -1;
    return detail::compose(model.root, [&](const ModelNode& leaf) {
        const auto it = views.find(leaf.id);
        if (it == views.end()) throw SchemaError("no data for view '" + leaf.id + "'");
        if (n >= 0 && it->second.rows() != n) throw SchemaError("view '" + leaf.id + "' has a different row count");
        n = it->second.rows();
        return predict_proba(leaf.glm, detail::select_columns(leaf, it->second));
    });
}

inline std::map<std::string, FeatureMatrix> leaf_views(const ViewHierarchy& h) {
    std::map<std::string, FeatureMatrix> out;
    for (const auto* l : h.leaves()) out.emplace(l->id, l->data);
    return out;
}

inline Vector predict_stacked(const StackedModel& model, const ViewHierarchy& h) {
    return predict_stacked(model, leaf_views(h));
}

/// Composition from given leaf outputs instead of leaf models; every leaf must be supplied.
inline Vector predict_from_leaf_outputs(const StackedModel& model, const std::map<std::string, Vector>& outputs) {
    return detail::compose(model.root, [&](const ModelNode& leaf) {
        const auto it = outputs.find(leaf.id);
        if (it == outputs.end()) throw InputError("no output supplied for leaf '" + leaf.id + "'");
        return it->second;
    });
}

/// Threshold probabilities; values equal to the threshold go to class 1.
inline std::vector<int> classify(const Vector& probabilities, double threshold = 0.5) {
    std::vector<int> out(static_cast<std::size_t>(probabilities.size()));
    for (Eigen::Index i = 0; i < probabilities.size(); ++i) out[static_cast<std::size_t>(i)] = probabilities[i] >= threshold ? 1 : 0;
    return out;
}

inline std::vector<int> classify(const StackedModel& model, const std::map<std::string, FeatureMatrix>& views,
                                 double threshold = 0.5) {
    return classify(predict_stacked(model, views), threshold);
}

// ---------------------------------------------------------------------------
// serialization

namespace detail {

inline nlohmann::json node_to_json(const ModelNode& n) {
    nlohmann::json j;
    j["id"] = n.id;
    j["intercept"] = n.glm.intercept;
    j["coefficients"] = std::vector<double>(n.glm.coefficients.data(), n.glm.coefficients.data() + n.glm.coefficients.size());
    j["predictors"] = n.predictors;
    j["lambda"] = n.glm.lambda_selected;
    j["outcome_mean"] = n.glm.outcome_mean;
    j["penalty"] = penalty_to_json(n.glm.penalty);
    j["degenerate"] = n.degenerate;
    j["children"] = nlohmann::json::array();
    for (const auto& c : n.children) j["children"].push_back(node_to_json(c));
    return j;
}

inline ModelNode node_from_json(const nlohmann::json& j) {
    ModelNode n;
    n.id = j.at("id").get<std::string>();
    n.glm.intercept = j.at("intercept").get<double>();
    const auto coef = j.at("coefficients").get<std::vector<double>>();
    n.glm.coefficients = Eigen::Map<const Vector>(coef.data(), static_cast<Eigen::Index>(coef.size()));
    n.predictors = j.at("predictors").get<std::vector<std::string>>();
    n.glm.lambda_selected = j.at("lambda").get<double>();
    n.glm.outcome_mean = j.value("outcome_mean", 0.0);
    n.glm.penalty = penalty_from_json(j.at("penalty"));
    n.degenerate = j.value("degenerate", false);
    for (const auto& c : j.at("children")) n.children.push_back(node_from_json(c));
    if (n.predictors.size() != coef.size()) throw ModelFormatError("node '" + n.id + "': predictor/coefficient count mismatch");
    if (!n.is_leaf() && n.children.size() != coef.size())
        throw ModelFormatError("node '" + n.id + "': coefficient count differs from child count");
    return n;
}

}  // namespace detail

inline nlohmann::json model_to_json(const StackedModel& m) {
    nlohmann::json j;
    j["format"] = "staplr-model";
    j["version"] = 1;
    j["training_mean"] = m.training_mean;
    j["n_train"] = m.n_train;
    j["config"] = {{"k", m.config.k},
                   {"seed", m.config.seed},
                   {"leaf_penalty", detail::penalty_to_json(m.config.leaf_penalty)},
                   {"internal_penalty", detail::penalty_to_json(m.config.internal_penalty)}};
    j["root"] = detail::node_to_json(m.root);
    return j;
}

inline StackedModel model_from_json(const nlohmann::json& j) {
    try {
        if (j.at("format").get<std::string>() != "staplr-model") throw ModelFormatError("not a staplr model file");
        StackedModel m;
        m.training_mean = j.at("training_mean").get<double>();
        m.n_train = j.at("n_train").get<std::size_t>();
        const auto& c = j.at("config");
        m.config.k = c.at("k").get<std::size_t>();
        m.config.seed = c.at("seed").get<std::uint64_t>();
        m.config.leaf_penalty = detail::penalty_from_json(c.at("leaf_penalty"));
        m.config.internal_penalty = detail::penalty_from_json(c.at("internal_penalty"));
        m.root = detail::node_from_json(j.at("root"));
        return m;
    } catch (const ModelFormatError&) {
        throw;
    } catch (const std::exception& e) {
        throw ModelFormatError(std::string("invalid model file: ") + e.what());
    }
}

inline void save_model(const StackedModel& m, const std::filesystem::path& path) {
    auto out = io::open_out(path);
    out << model_to_json(m).dump(2) << '\n';
    if (!out) throw IoError("failed writing " + path.string());
}

inline StackedModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ModelFormatError("cannot open model file " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const std::exception& e) {
        throw ModelFormatError("model file is not valid JSON: " + std::string(e.what()));
    }
    return model_from_json(j);
}

}  // namespace staplr
