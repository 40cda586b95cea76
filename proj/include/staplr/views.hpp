#pragma once

// Multi-view data model: feature matrices, the view hierarchy, datasets, and
// the on-disk manifest format.
//
// Manifest (JSON):
//
//   {
//     "name": "root",
//     "outcome_file": "outcome.csv",   // id column + outcome column
//     "outcome_column": "y",
//     "id_column": "id",
//     "children": [
//       { "name": "structural", "children": [
//           { "name": "thickness", "data_file": "thickness.csv" }, ... ] },
//       ...
//     ]
//   }
//
// Any node may carry "penalty": {"alpha", "nonnegative", "standardize",
// "nlambda", "epsilon"} to override the learner used at that node. Paths are
// relative to the manifest. Data files are comma-delimited with a header row;
// `NA` or empty cells are rejected.

#include "staplr/core.hpp"
#include "staplr/glm.hpp"
#include "staplr/io.hpp"

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

namespace staplr {

struct FeatureMatrix {
    Matrix values;
    std::vector<std::string> column_ids;
    std::string view_id;

    Eigen::Index rows() const { return values.rows(); }
    Eigen::Index cols() const { return values.cols(); }
};

struct ViewNode {
    std::string id;
    std::vector<ViewNode> children;
    std::optional<PenaltySpec> penalty;
    FeatureMatrix data;                       // leaves only
    std::vector<std::string> removed_columns; // dropped for zero variance at load

    bool is_leaf() const noexcept { return children.empty(); }
};

struct ViewHierarchy {
    ViewNode root;

    /// Leaves in pre-order (the hierarchy order used for every report).
    std::vector<const ViewNode*> leaves() const {
        std::vector<const ViewNode*> out;
        visit([&](const ViewNode& n, std::size_t) {
            if (n.is_leaf()) out.push_back(&n);
        });
        return out;
    }

    std::size_t node_count() const {
        std::size_t c = 0;
        visit([&](const ViewNode&, std::size_t) { ++c; });
        return c;
    }

    std::size_t internal_count() const { return node_count() - leaves().size(); }

    /// Pre-order traversal; callback receives (node, depth) with the root at depth 0.
    void visit(const std::function<void(const ViewNode&, std::size_t)>& fn) const { visit_impl(root, 0, fn); }

    const ViewNode* find(std::string_view id) const {
        const ViewNode* hit = nullptr;
        visit([&](const ViewNode& n, std::size_t) {
            if (hit == nullptr && n.id == id) hit = &n;
        });
        return hit;
    }

private:
    static void visit_impl(const ViewNode& n, std::size_t depth,
                           const std::function<void(const ViewNode&, std::size_t)>& fn) {
        fn(n, depth);
        for (const auto& c : n.children) visit_impl(c, depth + 1, fn);
    }
};

struct Dataset {
    ViewHierarchy hierarchy;
    Vector outcome;
    std::vector<std::string> observation_ids;

    std::size_t size() const noexcept { return observation_ids.size(); }
};

/// Remove columns with zero sample variance. Survivors keep their order.
inline std::pair<FeatureMatrix, std::vector<std::string>> drop_zero_variance(const FeatureMatrix& x) {
    std::vector<Eigen::Index> keep;
    std::vector<std::string> removed;
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        const bool constant = x.rows() == 0 || (x.values.col(j).array() == x.values(0, j)).all();
        if (constant)
            removed.push_back(x.column_ids[static_cast<std::size_t>(j)]);
        else
            keep.push_back(j);
    }
    if (keep.empty()) throw LoadError("view '" + x.view_id + "' has no columns with nonzero variance");
    FeatureMatrix out;
    out.view_id = x.view_id;
    out.values.resize(x.rows(), static_cast<Eigen::Index>(keep.size()));
    for (std::size_t k = 0; k < keep.size(); ++k) {
        out.values.col(static_cast<Eigen::Index>(k)) = x.values.col(keep[k]);
        out.column_ids.push_back(x.column_ids[static_cast<std::size_t>(keep[k])]);
    }
    return {std::move(out), std::move(removed)};
}

/// Structural checks shared by loading, synthesis, and flattening.
inline void validate_dataset(const Dataset& data) {
    const auto& root = data.hierarchy.root;
    if (root.is_leaf()) throw LoadError("the root node must have at least one child");
    if (static_cast<std::size_t>(data.outcome.size()) != data.size())
        throw LoadError("outcome length does not match observation ids");
    try {
        validate_outcome(data.outcome);
    } catch (const InputError& e) {
        throw LoadError(std::string("outcome: ") + e.what());
    }
    std::set<std::string> node_ids;
    std::set<std::string> column_ids;
    data.hierarchy.visit([&](const ViewNode& n, std::size_t) {
        if (n.id.empty()) throw LoadError("node without a name");
        if (!node_ids.insert(n.id).second) throw LoadError("duplicate node id '" + n.id + "'");
        if (n.penalty) n.penalty->validate();
        if (!n.is_leaf()) return;
        if (n.data.cols() == 0) throw LoadError("view '" + n.id + "' has no feature columns");
        if (static_cast<std::size_t>(n.data.rows()) != data.size())
            throw LoadError("view '" + n.id + "' has " + std::to_string(n.data.rows()) + " rows, expected " +
                            std::to_string(data.size()));
        if (!n.data.values.allFinite()) throw LoadError("view '" + n.id + "' contains non-finite values");
        for (const auto& c : n.data.column_ids)
            if (!column_ids.insert(c).second)
                throw LoadError("column id '" + c + "' in view '" + n.id + "' already belongs to another view");
    });
}

namespace detail {

inline PenaltySpec penalty_from_json(const nlohmann::json& j) {
    PenaltySpec p;
    p.alpha = j.value("alpha", p.alpha);
    p.nonnegative = j.value("nonnegative", p.nonnegative);
    p.standardize = j.value("standardize", p.standardize);
    p.nlambda = j.value("nlambda", p.nlambda);
    p.epsilon = j.value("epsilon", p.epsilon);
    p.validate();
    return p;
}

inline nlohmann::json penalty_to_json(const PenaltySpec& p) {
    return {{"alpha", p.alpha},
            {"nonnegative", p.nonnegative},
            {"standardize", p.standardize},
            {"nlambda", p.nlambda},
            {"epsilon", p.epsilon}};
}

// Read one view file and align its rows to `ids`.
inline FeatureMatrix read_view(const std::filesystem::path& file, const std::string& view, const std::string& id_column,
                               const std::vector<std::string>& ids) {
    io::CsvTable t;
    try {
        t = io::read_csv(file);
    } catch (const LoadError& e) {
        throw LoadError("view '" + view + "': " + e.what());
    }
    const auto idc = t.column(id_column);
    if (!idc) throw LoadError("view '" + view + "': id column '" + id_column + "' not found in " + file.string());
    if (t.rows.size() != ids.size())
        throw LoadError("view '" + view + "': " + std::to_string(t.rows.size()) + " rows but the outcome has " +
                        std::to_string(ids.size()));
    std::unordered_map<std::string, std::size_t> row_of;
    for (std::size_t r = 0; r < t.rows.size(); ++r)
        if (!row_of.emplace(t.rows[r][*idc], r).second)
            throw LoadError("view '" + view + "': duplicate observation id '" + t.rows[r][*idc] + "'");

    FeatureMatrix fm;
    fm.view_id = view;
    std::vector<std::size_t> cols;
    std::set<std::string> seen;
    for (std::size_t j = 0; j < t.header.size(); ++j) {
        if (j == *idc) continue;
        if (!seen.insert(t.header[j]).second)
            throw LoadError("view '" + view + "': duplicate column id '" + t.header[j] + "'");
        cols.push_back(j);
        fm.column_ids.push_back(t.header[j]);
    }
    fm.values.resize(static_cast<Eigen::Index>(ids.size()), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto it = row_of.find(ids[i]);
        if (it == row_of.end()) throw LoadError("view '" + view + "': observation '" + ids[i] + "' missing");
        const auto& row = t.rows[it->second];
        for (std::size_t k = 0; k < cols.size(); ++k) {
            const auto v = io::parse_double(row[cols[k]]);
            if (!v || !std::isfinite(*v))
                throw LoadError("view '" + view + "': missing or non-numeric value for observation '" + ids[i] +
                                "', column '" + fm.column_ids[k] + "'");
            fm.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = *v;
        }
    }
    return fm;
}

inline ViewNode parse_node(const nlohmann::json& j, const std::filesystem::path& base, const std::string& id_column,
                           const std::vector<std::string>& ids, bool filter, bool is_root) {
    ViewNode node;
    if (!j.is_object() || !j.contains("name") || !j["name"].is_string()) throw LoadError("manifest node without a name");
    node.id = j["name"].get<std::string>();
    if (j.contains("penalty")) {
        try {
            node.penalty = penalty_from_json(j["penalty"]);
        } catch (const std::exception& e) {
            throw LoadError("node '" + node.id + "': invalid penalty: " + e.what());
        }
    }
    const bool has_children = j.contains("children");
    const bool has_file = j.contains("data_file");
    if (has_children == has_file && !is_root)
        throw LoadError("node '" + node.id + "' must have exactly one of 'children' or 'data_file'");
    if (is_root && !has_children) throw LoadError("the root node must have 'children'");
    if (has_children) {
        if (!j["children"].is_array() || j["children"].empty())
            throw LoadError("node '" + node.id + "' has an empty children list");
        for (const auto& c : j["children"]) node.children.push_back(parse_node(c, base, id_column, ids, filter, false));
        return node;
    }
    const auto file = base / j["data_file"].get<std::string>();
    node.data = read_view(file, node.id, id_column, ids);
    if (filter) {
        auto [kept, removed] = drop_zero_variance(node.data);
        node.data = std::move(kept);
        node.removed_columns = std::move(removed);
        if (!node.removed_columns.empty())
            log(LogLevel::info, "view '" + node.id + "': removed " + std::to_string(node.removed_columns.size()) +
                                    " zero-variance columns");
    }
    return node;
}

}  // namespace detail

struct LoadOptions {
    bool require_outcome = true;
    bool drop_zero_variance = true;
};

/// Load a manifest and every view it references. Without an outcome file
/// (prediction input) observation ids come from the first leaf and the
/// outcome is left empty.
inline Dataset load_dataset(const std::filesystem::path& manifest_path, const LoadOptions& opt = {}) {
    std::ifstream in(manifest_path);
    if (!in) throw LoadError("cannot open manifest " + manifest_path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const std::exception& e) {
        throw LoadError("manifest " + manifest_path.string() + " is not valid JSON: " + e.what());
    }
    const auto base = manifest_path.parent_path();
    const std::string id_column = j.value("id_column", std::string("id"));

    Dataset data;
    if (j.contains("outcome_file")) {
        const std::string ycol = j.value("outcome_column", std::string("y"));
        const auto t = io::read_csv(base / j["outcome_file"].get<std::string>());
        const auto idc = t.column(id_column);
        const auto yc = t.column(ycol);
        if (!idc || !yc) throw LoadError("outcome file lacks column '" + (idc ? ycol : id_column) + "'");
        data.outcome.resize(static_cast<Eigen::Index>(t.rows.size()));
        std::set<std::string> seen;
        for (std::size_t r = 0; r < t.rows.size(); ++r) {
            const auto& id = t.rows[r][*idc];
            if (!seen.insert(id).second) throw LoadError("outcome: duplicate observation id '" + id + "'");
            const auto v = io::parse_double(t.rows[r][*yc]);
            if (!v || (*v != 0.0 && *v != 1.0))
                throw LoadError("outcome: non-binary value '" + t.rows[r][*yc] + "' for observation '" + id + "'");
            data.observation_ids.push_back(id);
            data.outcome[static_cast<Eigen::Index>(r)] = *v;
        }
    } else if (opt.require_outcome) {
        throw LoadError("manifest has no outcome_file");
    } else {
        // take ids (in file order) from the first leaf
        const nlohmann::json* leaf = &j;
        while (leaf->contains("children") && (*leaf)["children"].is_array() && !(*leaf)["children"].empty())
            leaf = &(*leaf)["children"][0];
        if (!leaf->contains("data_file")) throw LoadError("manifest has no leaf with a data_file");
        const auto t = io::read_csv(base / (*leaf)["data_file"].get<std::string>());
        const auto idc = t.column(id_column);
        if (!idc) throw LoadError("id column '" + id_column + "' not found");
        for (const auto& row : t.rows) data.observation_ids.push_back(row[*idc]);
    }

    data.hierarchy.root =
        detail::parse_node(j, base, id_column, data.observation_ids, opt.drop_zero_variance, /*is_root=*/true);
    if (opt.require_outcome) {
        validate_dataset(data);
    } else {
        std::set<std::string> cols;
        data.hierarchy.visit([&](const ViewNode& n, std::size_t) {
            for (const auto& c : n.data.column_ids)
                if (!cols.insert(c).second) throw LoadError("column id '" + c + "' appears in two views");
        });
    }
    return data;
}

namespace detail {

inline std::string file_stem_for(const std::string& id) {
    std::string s;
    for (char c : id) s += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
    return s;
}

inline nlohmann::json node_to_manifest(const ViewNode& n) {
    nlohmann::json j;
    j["name"] = n.id;
    if (n.penalty) j["penalty"] = penalty_to_json(*n.penalty);
    if (n.is_leaf()) {
        j["data_file"] = file_stem_for(n.id) + ".csv";
    } else {
        j["children"] = nlohmann::json::array();
        for (const auto& c : n.children) j["children"].push_back(node_to_manifest(c));
    }
    return j;
}

}  // namespace detail

/// Write a dataset as manifest.json + outcome.csv + one CSV per leaf.
/// Values are written in shortest round-trip form. Returns the manifest path.
inline std::filesystem::path write_dataset(const Dataset& data, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string());

    nlohmann::json manifest = detail::node_to_manifest(data.hierarchy.root);
    manifest["outcome_file"] = "outcome.csv";
    manifest["outcome_column"] = "y";
    manifest["id_column"] = "id";
    {
        auto out = io::open_out(dir / "manifest.json");
        out << manifest.dump(2) << '\n';
    }
    {
        auto out = io::open_out(dir / "outcome.csv");
        out << "id,y\n";
        for (std::size_t i = 0; i < data.size(); ++i)
            out << io::csv_escape(data.observation_ids[i]) << ',' << data.outcome[static_cast<Eigen::Index>(i)]
                << '\n';
    }
    for (const ViewNode* leaf : data.hierarchy.leaves()) {
        auto out = io::open_out(dir / (detail::file_stem_for(leaf->id) + ".csv"));
        out << "id";
        for (const auto& c : leaf->data.column_ids) out << ',' << io::csv_escape(c);
        out << '\n';
        for (Eigen::Index i = 0; i < leaf->data.rows(); ++i) {
            out << io::csv_escape(data.observation_ids[static_cast<std::size_t>(i)]);
            for (Eigen::Index c = 0; c < leaf->data.cols(); ++c) out << ',' << io::format_double(leaf->data.values(i, c));
            out << '\n';
        }
        if (!out) throw IoError("failed writing view '" + leaf->id + "'");
    }
    return dir / "manifest.json";
}

// ---------------------------------------------------------------------------
// restructuring

inline FeatureMatrix concatenate(const std::vector<const ViewNode*>& leaves, std::string view_id) {
    FeatureMatrix out;
    out.view_id = std::move(view_id);
    Eigen::Index cols = 0;
    for (const auto* l : leaves) cols += l->data.cols();
    const Eigen::Index rows = leaves.empty() ? 0 : leaves.front()->data.rows();
    out.values.resize(rows, cols);
    Eigen::Index at = 0;
    for (const auto* l : leaves) {
        out.values.middleCols(at, l->data.cols()) = l->data.values;
        at += l->data.cols();
        out.column_ids.insert(out.column_ids.end(), l->data.column_ids.begin(), l->data.column_ids.end());
    }
    return out;
}

inline std::vector<const ViewNode*> leaves_under(const ViewNode& n) {
    std::vector<const ViewNode*> out;
    std::function<void(const ViewNode&)> rec = [&](const ViewNode& x) {
        if (x.is_leaf())
            out.push_back(&x);
        else
            for (const auto& c : x.children) rec(c);
    };
    rec(n);
    return out;
}

/// Two-level version using the bottom views: every leaf moves directly under the root.
inline Dataset flatten_to_leaves(const Dataset& data) {
    Dataset out;
    out.outcome = data.outcome;
    out.observation_ids = data.observation_ids;
    out.hierarchy.root.id = data.hierarchy.root.id;
    out.hierarchy.root.penalty = data.hierarchy.root.penalty;
    for (const auto* l : data.hierarchy.leaves()) out.hierarchy.root.children.push_back(*l);
    return out;
}

/// Two-level version using the top views: each child of the root becomes one
/// leaf holding the concatenated features of its subtree.
inline Dataset collapse_to_top(const Dataset& data) {
    Dataset out;
    out.outcome = data.outcome;
    out.observation_ids = data.observation_ids;
    out.hierarchy.root.id = data.hierarchy.root.id;
    out.hierarchy.root.penalty = data.hierarchy.root.penalty;
    for (const auto& top : data.hierarchy.root.children) {
        if (top.is_leaf()) {
            out.hierarchy.root.children.push_back(top);
            continue;
        }
        ViewNode leaf;
        leaf.id = top.id;
        leaf.data = concatenate(leaves_under(top), top.id);
        out.hierarchy.root.children.push_back(std::move(leaf));
    }
    return out;
}

}  // namespace staplr
