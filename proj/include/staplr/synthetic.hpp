#pragma once

#include "staplr/views.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace staplr {

struct SyntheticNode {
    std::string id;
    std::size_t features = 0;  // leaves only
    std::vector<SyntheticNode> children;
};

struct SignalLeaf {
    std::string leaf;
    double effect = 0.0;
};

/// Generator settings. Features within a leaf are equicorrelated standard
/// Gaussians. Each signal leaf adds `effect * (sum of its features) / sd(sum)`
/// to the linear predictor, so `effect` is the SD of that leaf's contribution.
struct SyntheticSpec {
    SyntheticNode tree;
    std::vector<SignalLeaf> signal;
    double correlation = 0.0;
    double intercept = 0.0;
    std::size_t n = 0;
    std::uint64_t seed = 0;
};

/// root -> top views "s1".."sK" -> leaves "s<k>m<i>" with the given feature counts.
inline SyntheticNode synthetic_tree(const std::vector<std::vector<std::size_t>>& features_per_leaf) {
    SyntheticNode root{"root", 0, {}};
    for (std::size_t s = 0; s < features_per_leaf.size(); ++s) {
        SyntheticNode top{"s" + std::to_string(s + 1), 0, {}};
        for (std::size_t m = 0; m < features_per_leaf[s].size(); ++m)
            top.children.push_back({top.id + "m" + std::to_string(m + 1), features_per_leaf[s][m], {}});
        root.children.push_back(std::move(top));
    }
    return root;
}

namespace detail {

inline void collect_synthetic(const SyntheticNode& n, std::map<std::string, std::size_t>& leaves,
                              std::set<std::string>& ids) {
    if (n.id.empty()) throw InputError("synthetic tree node without a name");
    if (!ids.insert(n.id).second) throw InputError("duplicate synthetic node id '" + n.id + "'");
    if (n.children.empty()) {
        if (n.features == 0) throw InputError("synthetic leaf '" + n.id + "' needs at least one feature");
        leaves[n.id] = n.features;
    }
    for (const auto& c : n.children) collect_synthetic(c, leaves, ids);
}

inline ViewNode build_synthetic(const SyntheticNode& s, std::size_t n, double rho, std::mt19937_64& rng,
                                std::map<std::string, Vector>& leaf_sums) {
    ViewNode v;
    v.id = s.id;
    if (!s.children.empty()) {
        for (const auto& c : s.children) v.children.push_back(build_synthetic(c, n, rho, rng, leaf_sums));
        return v;
    }
    std::normal_distribution<double> gauss;
    const double shared = std::sqrt(rho);
    const double own = std::sqrt(1.0 - rho);
    v.data.view_id = s.id;
    v.data.values.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(s.features));
    for (std::size_t j = 0; j < s.features; ++j) v.data.column_ids.push_back(s.id + "_f" + std::to_string(j + 1));
    for (std::size_t i = 0; i < n; ++i) {
        const double u = gauss(rng);
        for (std::size_t j = 0; j < s.features; ++j)
            v.data.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = shared * u + own * gauss(rng);
    }
    leaf_sums[s.id] = v.data.values.rowwise().sum();
    return v;
}

}  // namespace detail

inline Dataset generate_synthetic(const SyntheticSpec& spec) {
    if (spec.n < 20) throw InputError("synthetic data needs n >= 20");
    if (!(spec.correlation >= 0.0 && spec.correlation < 1.0)) throw InputError("correlation must lie in [0, 1)");
    if (spec.signal.empty()) throw InputError("at least one signal leaf is required");
    if (spec.tree.children.empty()) throw InputError("synthetic root needs children");
    std::map<std::string, std::size_t> leaves;
    std::set<std::string> ids;
    detail::collect_synthetic(spec.tree, leaves, ids);
    for (const auto& s : spec.signal) {
        if (!leaves.count(s.leaf)) throw InputError("signal leaf '" + s.leaf + "' is not a leaf of the tree");
        if (!std::isfinite(s.effect)) throw InputError("signal effect must be finite");
    }

    std::mt19937_64 rng(spec.seed);
    std::map<std::string, Vector> sums;
    Dataset data;
    data.hierarchy.root = detail::build_synthetic(spec.tree, spec.n, spec.correlation, rng, sums);

    Vector eta = Vector::Constant(static_cast<Eigen::Index>(spec.n), spec.intercept);
    for (const auto& s : spec.signal) {
        const double p = static_cast<double>(leaves[s.leaf]);
        const double sd = std::sqrt(p * (1.0 + (p - 1.0) * spec.correlation));
        eta += (s.effect / sd) * sums[s.leaf];
    }
    std::uniform_real_distribution<double> unif;
    data.outcome.resize(static_cast<Eigen::Index>(spec.n));
    const std::size_t width = std::to_string(spec.n).size();
    for (std::size_t i = 0; i < spec.n; ++i) {
        data.outcome[static_cast<Eigen::Index>(i)] = unif(rng) < logistic(eta[static_cast<Eigen::Index>(i)]) ? 1.0 : 0.0;
        std::string id = std::to_string(i + 1);
        data.observation_ids.push_back("obs" + std::string(width - id.size(), '0') + id);
    }
    try {
        validate_outcome(data.outcome);
    } catch (const InputError&) {
        throw InputError("synthetic outcome contains a single class; change the seed or intercept");
    }
    return data;
}

// JSON form of a generator spec:
//   {"n": 300, "seed": 1, "correlation": 0.3, "intercept": 0.0, "effect_size": 1.5,
//    "signal": ["s1m1", {"leaf": "s3m2", "effect": 0.5}],
//    "tree": {"name": "root", "children": [{"name": "s1", "children": [{"name": "s1m1", "features": 10}]}]}}
// Bare leaf names in "signal" take "effect_size".

inline SyntheticNode synthetic_node_from_json(const nlohmann::json& j) {
    SyntheticNode n;
    n.id = j.at("name").get<std::string>();
    if (j.contains("children"))
        for (const auto& c : j.at("children")) n.children.push_back(synthetic_node_from_json(c));
    else
        n.features = j.at("features").get<std::size_t>();
    return n;
}

inline SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
    SyntheticSpec s;
    try {
        s.tree = synthetic_node_from_json(j.at("tree"));
        s.n = j.at("n").get<std::size_t>();
        s.seed = j.value("seed", std::uint64_t{0});
        s.correlation = j.value("correlation", 0.0);
        s.intercept = j.value("intercept", 0.0);
        const double default_effect = j.value("effect_size", 1.0);
        for (const auto& e : j.value("signal", nlohmann::json::array())) {
            if (e.is_string())
                s.signal.push_back({e.get<std::string>(), default_effect});
            else
                s.signal.push_back({e.at("leaf").get<std::string>(), e.value("effect", default_effect)});
        }
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("invalid generator spec: ") + e.what());
    }
    return s;
}

}  // namespace staplr
