#pragma once

// View importance for fitted stacked models: the Minority Report Measure,
// flattened coefficient tables and selection proportions over repeated fits.

#include "staplr/io.hpp"
#include "staplr/stacking.hpp"

#include <algorithm>
#include <ostream>
#include <string>
#include <vector>

namespace staplr {

/// MRM(leaf) = g(leaf, b, c) - g(leaf, a, c), where g pins the leaf's
/// prediction to b (or a) and every other leaf's prediction to c.
struct MrmSpec {
    double a = 0.0;
    double b = 1.0;
    double c = 0.5;

    void validate() const {
        if (!(a >= 0.0 && b <= 1.0 && a < b)) throw InputError("MRM bounds need 0 <= a < b <= 1");
        if (!(c >= 0.0 && c <= 1.0)) throw InputError("MRM reference value c must lie in [0, 1]");
    }

    /// a = 0, b = 1, c = class-1 proportion of the model's training data.
    static MrmSpec defaults(const StackedModel& model) { return {0.0, 1.0, model.training_mean}; }

    /// a and b at the smallest and largest out-of-fold leaf prediction seen.
    static MrmSpec empirical_range(const std::vector<OutOfFoldPredictions>& oof, double c) {
        if (oof.empty()) throw InputError("no out-of-fold predictions supplied");
        double lo = 1.0;
        double hi = 0.0;
        for (const auto& o : oof) {
            if (o.z.size() == 0) continue;
            lo = std::min(lo, o.z.minCoeff());
            hi = std::max(hi, o.z.maxCoeff());
        }
        MrmSpec s{lo, hi, c};
        s.validate();
        return s;
    }
};

namespace detail {

inline double pinned_eval(const ModelNode& node, const std::string& target, double v, double c) {
    if (node.is_leaf()) return node.id == target ? v : c;
    double eta = node.glm.intercept;
    for (std::size_t k = 0; k < node.children.size(); ++k)
        eta += node.glm.coefficients[static_cast<Eigen::Index>(k)] * pinned_eval(node.children[k], target, v, c);
    return logistic(eta);
}

}  // namespace detail

/// Stacked prediction with `leaf` pinned to v and all other leaves pinned to c.
inline double g_eval(const StackedModel& model, const std::string& leaf, double v, double c) {
    const ModelNode* n = model.find(leaf);
    if (n == nullptr || !n->is_leaf()) throw InputError("unknown leaf '" + leaf + "'");
    if (!(v >= 0.0 && v <= 1.0) || !(c >= 0.0 && c <= 1.0)) throw InputError("pinned values must lie in [0, 1]");
    return detail::pinned_eval(model.root, leaf, v, c);
}

inline double mrm(const StackedModel& model, const std::string& leaf, const MrmSpec& spec) {
    spec.validate();
    return g_eval(model, leaf, spec.b, spec.c) - g_eval(model, leaf, spec.a, spec.c);
}

struct MrmReport {
    std::string model_id;
    MrmSpec spec;
    std::vector<std::pair<std::string, double>> values;  // leaf id, MRM; hierarchy order
};

inline MrmReport mrm_report(const StackedModel& model, const MrmSpec& spec, std::string model_id = "model") {
    spec.validate();
    MrmReport r{std::move(model_id), spec, {}};
    for (const auto* leaf : model.leaves()) r.values.emplace_back(leaf->id, mrm(model, leaf->id, spec));
    return r;
}

struct CoefficientRow {
    std::string node_id;
    bool leaf = false;
    double intercept = 0.0;
    double lambda = 0.0;
    std::vector<std::string> predictors;
    std::vector<double> coefficients;
    std::vector<bool> selected;
};

using CoefficientTable = std::vector<CoefficientRow>;

/// One row per node in hierarchy (pre-)order; selected means coefficient != 0.
inline CoefficientTable coefficient_table(const StackedModel& model) {
    CoefficientTable t;
    for (const auto* n : model.nodes()) {
        CoefficientRow r;
        r.node_id = n->id;
        r.leaf = n->is_leaf();
        r.intercept = n->glm.intercept;
        r.lambda = n->glm.lambda_selected;
        r.predictors = n->predictors;
        for (Eigen::Index j = 0; j < n->glm.coefficients.size(); ++j) {
            r.coefficients.push_back(n->glm.coefficients[j]);
            r.selected.push_back(n->glm.coefficients[j] != 0.0);
        }
        t.push_back(std::move(r));
    }
    return t;
}

struct SelectionRow {
    std::string node_id;
    std::string predictor;
    double proportion = 0.0;
};

/// Fraction of tables in which each coefficient is nonzero.
inline std::vector<SelectionRow> selection_proportions(const std::vector<CoefficientTable>& tables) {
    if (tables.empty()) throw InputError("no coefficient tables supplied");
    const auto& ref = tables.front();
    std::vector<SelectionRow> out;
    std::vector<std::size_t> counts;
    for (const auto& row : ref)
        for (const auto& p : row.predictors) {
            out.push_back({row.node_id, p, 0.0});
            counts.push_back(0);
        }
    for (const auto& t : tables) {
        if (t.size() != ref.size()) throw InputError("coefficient tables differ in node count");
        std::size_t at = 0;
        for (std::size_t r = 0; r < t.size(); ++r) {
            if (t[r].node_id != ref[r].node_id || t[r].predictors != ref[r].predictors)
                throw InputError("coefficient tables differ in structure at node '" + ref[r].node_id + "'");
            for (bool s : t[r].selected) counts[at++] += s ? 1 : 0;
        }
    }
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i].proportion = static_cast<double>(counts[i]) / static_cast<double>(tables.size());
    return out;
}

/// Leaves that can move the final prediction: the leaf's weight at its parent
/// and every weight on the way to the root are nonzero.
inline std::vector<std::string> effective_leaves(const StackedModel& model) {
    std::vector<std::string> out;
    auto rec = [&](auto&& self, const ModelNode& n) -> void {
        for (std::size_t k = 0; k < n.children.size(); ++k) {
            if (n.glm.coefficients[static_cast<Eigen::Index>(k)] == 0.0) continue;
            const auto& c = n.children[k];
            if (c.is_leaf())
                out.push_back(c.id);
            else
                self(self, c);
        }
    };
    rec(rec, model.root);
    return out;
}

// ---------------------------------------------------------------------------
// tabular output

/// Rows "node_id,predictor,coefficient,selected"; the intercept appears as
/// predictor "(intercept)". `prefix` (e.g. "3,7,") is prepended to every row.
inline void write_coefficient_rows(std::ostream& out, const CoefficientTable& t, const std::string& prefix = {}) {
    for (const auto& r : t) {
        out << prefix << io::csv_escape(r.node_id) << ",(intercept)," << io::format_double(r.intercept) << ",1\n";
        for (std::size_t j = 0; j < r.predictors.size(); ++j)
            out << prefix << io::csv_escape(r.node_id) << ',' << io::csv_escape(r.predictors[j]) << ','
                << io::format_double(r.coefficients[j]) << ',' << (r.selected[j] ? 1 : 0) << '\n';
    }
}

inline void write_coefficient_table(std::ostream& out, const CoefficientTable& t) {
    out << "node_id,predictor,coefficient,selected\n";
    write_coefficient_rows(out, t);
}

inline void write_mrm_report(std::ostream& out, const MrmReport& r) {
    out << "# model=" << r.model_id << " a=" << io::format_double(r.spec.a) << " b=" << io::format_double(r.spec.b)
        << " c=" << io::format_double(r.spec.c) << '\n';
    out << "leaf_id,mrm\n";
    for (const auto& [leaf, v] : r.values) out << io::csv_escape(leaf) << ',' << io::format_double(v) << '\n';
}

}  // namespace staplr
