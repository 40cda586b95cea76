#pragma once

// Repeated nested cross-validation and the flat elastic-net benchmark.
//
// For each repetition r the outer folds come from derive_seed(master, {r});
// the fit for outer fold f receives derive_seed(master, {r, f}) and sees only
// the training part of that fold. Headline metrics are computed on the pooled
// out-of-fold predictions of a repetition; per-fold values are kept as well.

#include "staplr/audit.hpp"
#include "staplr/folds.hpp"
#include "staplr/glm.hpp"
#include "staplr/importance.hpp"
#include "staplr/io.hpp"
#include "staplr/metrics.hpp"
#include "staplr/parallel.hpp"
#include "staplr/stacking.hpp"
#include "staplr/views.hpp"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace staplr {

struct NestedCvConfig {
    std::size_t k_outer = 10;
    std::size_t k_inner = 10;
    std::size_t repetitions = 10;
    std::uint64_t master_seed = 0;
    unsigned threads = 1;

    void validate() const {
        if (k_outer < 2 || k_inner < 2) throw InputError("fold counts must be at least 2");
        if (repetitions < 1) throw InputError("at least one repetition is required");
    }
};

/// Elastic-net footprint of one leaf view.
struct LeafSummary {
    std::string leaf_id;
    std::size_t nonzero = 0;
    double l2_norm = 0.0;
};

struct FitRequest {
    const Dataset& data;
    const std::vector<std::size_t>& train;     // global rows to fit on
    const std::vector<std::size_t>& evaluate;  // global rows to predict
    std::size_t k_inner;
    std::uint64_t seed;
    AuditContext audit;  // local index i means train[i]
};

struct FitResult {
    Vector predictions;  // one per evaluate row
    std::optional<CoefficientTable> coefficients;
    std::optional<MrmReport> mrm;
    std::vector<std::string> selected_leaves;  // leaves that influence the prediction
    std::vector<LeafSummary> leaf_summary;     // elastic net only
    std::optional<double> alpha;
    std::optional<double> lambda;
};

struct Method {
    std::string name;
    std::function<FitResult(const FitRequest&)> fit;
};

// ---------------------------------------------------------------------------
// fitters

namespace detail {

inline std::map<std::string, FeatureMatrix> leaf_rows(const ViewHierarchy& h, const std::vector<std::size_t>& rows) {
    std::map<std::string, FeatureMatrix> out;
    for (const auto* l : h.leaves()) {
        FeatureMatrix fm;
        fm.view_id = l->id;
        fm.column_ids = l->data.column_ids;
        fm.values = rows_of(l->data.values, rows);
        out.emplace(l->id, std::move(fm));
    }
    return out;
}

}  // namespace detail

/// Hierarchical StaPLR on whatever hierarchy the dataset carries.
inline Method staplr_method(StackingConfig base = {}, std::string name = "staplr") {
    return {std::move(name), [base](const FitRequest& req) {
                StackingConfig cfg = base;
                cfg.k = req.k_inner;
                cfg.seed = req.seed;
                cfg.threads = 1;
                const StackedModel model = fit_staplr(req.data, cfg, req.train, req.audit);
                FitResult r;
                r.predictions = predict_stacked(model, detail::leaf_rows(req.data.hierarchy, req.evaluate));
                r.coefficients = coefficient_table(model);
                r.mrm = mrm_report(model, MrmSpec::defaults(model));
                r.selected_leaves = effective_leaves(model);
                return r;
            }};
}

/// Predicts the training class-1 proportion for everyone.
inline Method constant_method() {
    return {"constant", [](const FitRequest& req) {
                const double m = detail::rows_of(req.data.outcome, req.train).mean();
                FitResult r;
                r.predictions = Vector::Constant(static_cast<Eigen::Index>(req.evaluate.size()), m);
                return r;
            }};
}

struct ElasticNetConfig {
    std::vector<double> alphas = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
    std::size_t nlambda = 100;
    double epsilon = 0.01;
    SolverControl control;
};

struct ElasticNetFit {
    FittedGlm glm;
    double alpha = 0.0;
    std::vector<CvCurve> curves;  // one per alpha
};

/// Joint (alpha, lambda) selection by minimum mean CV deviance over a shared
/// fold assignment; near-ties (1e-12) go to the larger alpha, then the larger lambda.
inline ElasticNetFit elastic_net_cv(const Matrix& x, const Vector& y, const ElasticNetConfig& cfg,
                                    const FoldAssignment& folds, const AuditContext& audit = {}) {
    if (cfg.alphas.empty()) throw InputError("empty alpha grid");
    ElasticNetFit out;
    std::vector<PenaltySpec> pens;
    for (double a : cfg.alphas) {
        PenaltySpec p = PenaltySpec::elastic_net(a);
        p.nlambda = cfg.nlambda;
        p.epsilon = cfg.epsilon;
        p.validate();
        pens.push_back(p);
        CvOptions opt{1, cfg.control, audit.child("alpha" + io::format_double(a))};
        out.curves.push_back(cross_validate(x, y, p, lambda_path(x, y, p), folds, opt));
    }
    double best = std::numeric_limits<double>::infinity();
    for (const auto& c : out.curves)
        for (double d : c.mean_deviance) best = std::min(best, d);
    std::size_t pick_a = 0;
    std::size_t pick_l = 0;
    bool found = false;
    for (std::size_t a = 0; a < out.curves.size(); ++a) {
        for (std::size_t l = 0; l < out.curves[a].mean_deviance.size(); ++l) {
            if (out.curves[a].mean_deviance[l] > best + 1e-12) continue;
            // prefer larger alpha, then larger lambda (earlier on the path)
            if (!found || cfg.alphas[a] > cfg.alphas[pick_a]) {
                pick_a = a;
                pick_l = l;
                found = true;
            }
            break;
        }
    }
    CvCurve chosen = out.curves[pick_a];
    chosen.selected = pick_l;
    out.glm = refit_at(x, y, pens[pick_a], chosen, cfg.control);
    out.alpha = cfg.alphas[pick_a];
    return out;
}

/// Per-leaf nonzero counts and L2 norms of a coefficient vector laid out as
/// the concatenation of `leaves` in order.
inline std::vector<LeafSummary> leaf_summaries(const std::vector<const ViewNode*>& leaves, const Vector& coef) {
    std::vector<LeafSummary> out;
    Eigen::Index at = 0;
    for (const auto* l : leaves) {
        const auto seg = coef.segment(at, l->data.cols());
        LeafSummary s{l->id, 0, seg.norm()};
        for (Eigen::Index j = 0; j < seg.size(); ++j) s.nonzero += seg[j] != 0.0 ? 1 : 0;
        out.push_back(std::move(s));
        at += l->data.cols();
    }
    if (at != coef.size()) throw InputError("coefficient vector does not match the leaf layout");
    return out;
}

/// Elastic net on all leaf features concatenated, ignoring the hierarchy.
inline Method elastic_net_method(ElasticNetConfig cfg = {}) {
    return {"elasticnet", [cfg](const FitRequest& req) {
                const auto leaves = req.data.hierarchy.leaves();
                const FeatureMatrix all = concatenate(leaves, "all");
                const Matrix x = detail::rows_of(all.values, req.train);
                const Vector y = detail::rows_of(req.data.outcome, req.train);
                const auto folds = make_folds(y, req.k_inner, req.seed, true);
                const ElasticNetFit fit = elastic_net_cv(x, y, cfg, folds, req.audit);

                FitResult r;
                r.predictions = predict_proba(fit.glm, detail::rows_of(all.values, req.evaluate));
                CoefficientRow row;
                row.node_id = "elasticnet";
                row.leaf = true;
                row.intercept = fit.glm.intercept;
                row.lambda = fit.glm.lambda_selected;
                row.predictors = all.column_ids;
                for (Eigen::Index j = 0; j < fit.glm.coefficients.size(); ++j) {
                    row.coefficients.push_back(fit.glm.coefficients[j]);
                    row.selected.push_back(fit.glm.coefficients[j] != 0.0);
                }
                r.coefficients = CoefficientTable{std::move(row)};
                r.leaf_summary = leaf_summaries(leaves, fit.glm.coefficients);
                for (const auto& s : r.leaf_summary)
                    if (s.nonzero > 0) r.selected_leaves.push_back(s.leaf_id);
                r.alpha = fit.alpha;
                r.lambda = fit.glm.lambda_selected;
                return r;
            }};
}

// ---------------------------------------------------------------------------
// harness

struct FoldRecord {
    std::size_t rep = 0;
    std::size_t fold = 0;
    std::size_t n_eval = 0;
    bool failed = false;
    std::string error;
    double auc = std::numeric_limits<double>::quiet_NaN();  // NaN if the fold holds one class
    double accuracy = std::numeric_limits<double>::quiet_NaN();
    FitResult fit;
};

struct RepetitionRecord {
    std::size_t rep = 0;
    bool flagged = false;  // some outer fold failed
    FoldAssignment folds;
    Vector predictions;  // pooled out-of-fold, NaN where the fold failed
    double auc = std::numeric_limits<double>::quiet_NaN();
    double accuracy = std::numeric_limits<double>::quiet_NaN();
    double mean_fold_auc = std::numeric_limits<double>::quiet_NaN();
    double mean_fold_accuracy = std::numeric_limits<double>::quiet_NaN();
};

struct MeanSd {
    double mean = std::numeric_limits<double>::quiet_NaN();
    double sd = std::numeric_limits<double>::quiet_NaN();
    std::size_t count = 0;
};

/// Mean and sample SD (zero for a single value) of the finite entries.
inline MeanSd mean_sd(const std::vector<double>& v) {
    MeanSd m;
    double s = 0.0;
    for (double x : v)
        if (std::isfinite(x)) {
            s += x;
            ++m.count;
        }
    if (m.count == 0) return m;
    m.mean = s / static_cast<double>(m.count);
    double ss = 0.0;
    for (double x : v)
        if (std::isfinite(x)) ss += (x - m.mean) * (x - m.mean);
    m.sd = m.count > 1 ? std::sqrt(ss / static_cast<double>(m.count - 1)) : 0.0;
    return m;
}

struct EvaluationReport {
    std::string method;
    NestedCvConfig config;
    std::vector<std::string> observation_ids;
    Vector outcome;
    std::vector<RepetitionRecord> repetitions;
    std::vector<FoldRecord> folds;  // rep-major, fold-minor
    // aggregates over unflagged repetitions
    MeanSd auc;
    MeanSd accuracy;
    MeanSd fold_auc;
    MeanSd fold_accuracy;
    MeanSd selected_leaf_count;  // over successful fits
    std::size_t failed_folds = 0;

    std::vector<const FoldRecord*> successful() const {
        std::vector<const FoldRecord*> out;
        for (const auto& f : folds)
            if (!f.failed) out.push_back(&f);
        return out;
    }
};

/// Recompute every aggregate of `r` from its stored per-repetition and per-fold values.
inline void aggregate(EvaluationReport& r) {
    std::vector<double> auc, acc, fauc, facc, nsel;
    for (const auto& rep : r.repetitions) {
        if (rep.flagged) continue;
        auc.push_back(rep.auc);
        acc.push_back(rep.accuracy);
        fauc.push_back(rep.mean_fold_auc);
        facc.push_back(rep.mean_fold_accuracy);
    }
    r.failed_folds = 0;
    for (const auto& f : r.folds) {
        if (f.failed)
            ++r.failed_folds;
        else
            nsel.push_back(static_cast<double>(f.fit.selected_leaves.size()));
    }
    r.auc = mean_sd(auc);
    r.accuracy = mean_sd(acc);
    r.fold_auc = mean_sd(fauc);
    r.fold_accuracy = mean_sd(facc);
    r.selected_leaf_count = mean_sd(nsel);
}

inline EvaluationReport nested_cv_evaluate(const Dataset& data, const Method& method, const NestedCvConfig& cfg,
                                           const AuditHook* audit = nullptr) {
    cfg.validate();
    validate_dataset(data);
    EvaluationReport report;
    report.method = method.name;
    report.config = cfg;
    report.observation_ids = data.observation_ids;
    report.outcome = data.outcome;

    const std::size_t reps = cfg.repetitions;
    const std::size_t k = cfg.k_outer;
    report.repetitions.resize(reps);
    for (std::size_t r = 0; r < reps; ++r) {
        report.repetitions[r].rep = r;
        report.repetitions[r].folds = make_folds(data.outcome, k, derive_seed(cfg.master_seed, {r}), true);
    }
    report.folds.resize(reps * k);

    parallel_for(reps * k, cfg.threads, [&](std::size_t task) {
        const std::size_t r = task / k;
        const std::size_t f = task % k;
        FoldRecord& rec = report.folds[task];
        rec.rep = r;
        rec.fold = f;
        const auto& folds = report.repetitions[r].folds;
        const auto train = folds.complement(f);
        const auto held = folds.members(f);
        rec.n_eval = held.size();
        const AuditContext ctx(audit, "rep" + std::to_string(r) + "/outer" + std::to_string(f));
        ctx.report("outer", train, held);
        try {
            rec.fit = method.fit(FitRequest{data, train, held, cfg.k_inner, derive_seed(cfg.master_seed, {r, f}),
                                            ctx.sub("fit", train)});
            if (static_cast<std::size_t>(rec.fit.predictions.size()) != held.size())
                throw FitError("fitter returned the wrong number of predictions");
        } catch (const Error& e) {
            rec.failed = true;
            rec.error = e.what();
            log(LogLevel::warn, "rep " + std::to_string(r) + " fold " + std::to_string(f) + ": " + e.what());
            return;
        }
        const Vector yh = detail::rows_of(data.outcome, held);
        try {
            rec.auc = auc(rec.fit.predictions, yh);
        } catch (const MetricError&) {
        }
        rec.accuracy = accuracy(rec.fit.predictions, yh);
    });

    for (auto& rep : report.repetitions) {
        rep.predictions = Vector::Constant(data.outcome.size(), std::numeric_limits<double>::quiet_NaN());
        std::vector<double> fa, fc;
        for (std::size_t f = 0; f < k; ++f) {
            const auto& rec = report.folds[rep.rep * k + f];
            if (rec.failed) {
                rep.flagged = true;
                continue;
            }
            const auto held = rep.folds.members(f);
            for (std::size_t i = 0; i < held.size(); ++i)
                rep.predictions[static_cast<Eigen::Index>(held[i])] = rec.fit.predictions[static_cast<Eigen::Index>(i)];
            fa.push_back(rec.auc);
            fc.push_back(rec.accuracy);
        }
        if (rep.flagged) continue;
        rep.auc = auc(rep.predictions, data.outcome);
        rep.accuracy = accuracy(rep.predictions, data.outcome);
        rep.mean_fold_auc = mean_sd(fa).mean;
        rep.mean_fold_accuracy = mean_sd(fc).mean;
    }
    aggregate(report);
    return report;
}

/// Selection proportions over every successful fit that produced a coefficient table.
inline std::vector<SelectionRow> selection_proportions(const EvaluationReport& r) {
    std::vector<CoefficientTable> tables;
    for (const auto* f : r.successful())
        if (f->fit.coefficients) tables.push_back(*f->fit.coefficients);
    if (tables.empty()) return {};
    return selection_proportions(tables);
}

/// Fraction of successful fits in which each leaf influenced the prediction.
inline std::vector<std::pair<std::string, double>> leaf_selection_proportions(const EvaluationReport& r,
                                                                             const ViewHierarchy& h) {
    const auto ok = r.successful();
    std::vector<std::pair<std::string, double>> out;
    for (const auto* l : h.leaves()) {
        std::size_t hits = 0;
        for (const auto* f : ok)
            hits += std::count(f->fit.selected_leaves.begin(), f->fit.selected_leaves.end(), l->id) > 0 ? 1 : 0;
        out.emplace_back(l->id, ok.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(ok.size()));
    }
    return out;
}

// ---------------------------------------------------------------------------
// report files

namespace detail {

inline std::string num(double v) { return std::isfinite(v) ? io::format_double(v) : std::string("NA"); }

inline nlohmann::json mean_sd_json(const MeanSd& m) {
    nlohmann::json j;
    j["mean"] = std::isfinite(m.mean) ? nlohmann::json(m.mean) : nlohmann::json(nullptr);
    j["sd"] = std::isfinite(m.sd) ? nlohmann::json(m.sd) : nlohmann::json(nullptr);
    j["count"] = m.count;
    return j;
}

}  // namespace detail

/// Write summary.json, folds.csv, predictions.csv, selection.csv,
/// leaf_selection.csv and, when available, coefficients.csv, mrm.csv and
/// view_summary.csv into `dir`. Output depends only on the report contents.
inline void write_report(const EvaluationReport& r, const ViewHierarchy& h, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string());
    using detail::num;

    nlohmann::ordered_json s;
    s["method"] = r.method;
    s["config"] = {{"k_outer", r.config.k_outer},
                   {"k_inner", r.config.k_inner},
                   {"repetitions", r.config.repetitions},
                   {"master_seed", r.config.master_seed}};
    s["n_observations"] = r.observation_ids.size();
    s["n_fits"] = r.folds.size();
    s["failed_folds"] = r.failed_folds;
    s["pooled_auc"] = detail::mean_sd_json(r.auc);
    s["pooled_accuracy"] = detail::mean_sd_json(r.accuracy);
    s["fold_mean_auc"] = detail::mean_sd_json(r.fold_auc);
    s["fold_mean_accuracy"] = detail::mean_sd_json(r.fold_accuracy);
    s["selected_leaf_count"] = detail::mean_sd_json(r.selected_leaf_count);
    s["repetitions"] = nlohmann::ordered_json::array();
    for (const auto& rep : r.repetitions) {
        nlohmann::ordered_json j;
        j["rep"] = rep.rep;
        j["flagged"] = rep.flagged;
        j["auc"] = std::isfinite(rep.auc) ? nlohmann::ordered_json(rep.auc) : nlohmann::ordered_json(nullptr);
        j["accuracy"] =
            std::isfinite(rep.accuracy) ? nlohmann::ordered_json(rep.accuracy) : nlohmann::ordered_json(nullptr);
        j["mean_fold_auc"] =
            std::isfinite(rep.mean_fold_auc) ? nlohmann::ordered_json(rep.mean_fold_auc) : nlohmann::ordered_json(nullptr);
        j["mean_fold_accuracy"] = std::isfinite(rep.mean_fold_accuracy) ? nlohmann::ordered_json(rep.mean_fold_accuracy)
                                                                        : nlohmann::ordered_json(nullptr);
        s["repetitions"].push_back(std::move(j));
    }
    {
        auto out = io::open_out(dir / "summary.json");
        out << s.dump(2) << '\n';
    }
    {
        auto out = io::open_out(dir / "folds.csv");
        out << "rep,fold,n_eval,auc,accuracy,selected_leaves,alpha,lambda,failed,error\n";
        for (const auto& f : r.folds) {
            out << f.rep << ',' << f.fold << ',' << f.n_eval << ',' << num(f.auc) << ',' << num(f.accuracy) << ','
                << f.fit.selected_leaves.size() << ',' << (f.fit.alpha ? num(*f.fit.alpha) : "NA") << ','
                << (f.fit.lambda ? num(*f.fit.lambda) : "NA") << ',' << (f.failed ? 1 : 0) << ','
                << io::csv_escape(f.error) << '\n';
        }
    }
    {
        auto out = io::open_out(dir / "predictions.csv");
        out << "rep,observation_id,fold,y,probability\n";
        for (const auto& rep : r.repetitions)
            for (std::size_t i = 0; i < r.observation_ids.size(); ++i)
                out << rep.rep << ',' << io::csv_escape(r.observation_ids[i]) << ',' << rep.folds.fold_of[i] << ','
                    << r.outcome[static_cast<Eigen::Index>(i)] << ','
                    << num(rep.predictions[static_cast<Eigen::Index>(i)]) << '\n';
    }
    const auto ok = r.successful();
    const bool has_coef = !ok.empty() && ok.front()->fit.coefficients.has_value();
    if (has_coef) {
        auto out = io::open_out(dir / "coefficients.csv");
        out << "rep,fold,node_id,predictor,coefficient,selected\n";
        for (const auto* f : ok)
            write_coefficient_rows(out, *f->fit.coefficients, std::to_string(f->rep) + "," + std::to_string(f->fold) + ",");
        auto sel = io::open_out(dir / "selection.csv");
        sel << "node_id,predictor,proportion\n";
        for (const auto& row : selection_proportions(r))
            sel << io::csv_escape(row.node_id) << ',' << io::csv_escape(row.predictor) << ',' << num(row.proportion)
                << '\n';
    }
    {
        auto out = io::open_out(dir / "leaf_selection.csv");
        out << "leaf_id,proportion\n";
        for (const auto& [leaf, p] : leaf_selection_proportions(r, h)) out << io::csv_escape(leaf) << ',' << num(p) << '\n';
    }
    if (!ok.empty() && ok.front()->fit.mrm) {
        auto out = io::open_out(dir / "mrm.csv");
        out << "# a=" << num(ok.front()->fit.mrm->spec.a) << " b=" << num(ok.front()->fit.mrm->spec.b)
            << " c=training class-1 proportion of each fit\n";
        out << "rep,fold,leaf_id,c,mrm\n";
        for (const auto* f : ok)
            for (const auto& [leaf, v] : f->fit.mrm->values)
                out << f->rep << ',' << f->fold << ',' << io::csv_escape(leaf) << ',' << num(f->fit.mrm->spec.c) << ','
                    << num(v) << '\n';
    }
    if (!ok.empty() && !ok.front()->fit.leaf_summary.empty()) {
        auto out = io::open_out(dir / "view_summary.csv");
        out << "rep,fold,leaf_id,nonzero,l2_norm\n";
        for (const auto* f : ok)
            for (const auto& s : f->fit.leaf_summary)
                out << f->rep << ',' << f->fold << ',' << io::csv_escape(s.leaf_id) << ',' << s.nonzero << ','
                    << num(s.l2_norm) << '\n';
    }
}

}  // namespace staplr
