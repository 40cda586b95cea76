// staplr: command-line front end.
//
//   staplr fit      --manifest M --out DIR --seed S
//   staplr evaluate --manifest M --out DIR --seed S --method staplr|staplr2-measures|staplr2-scantypes|elasticnet
//   staplr mrm      --model FILE --out DIR [--mrm-a A --mrm-b B --mrm-c C]
//   staplr simulate --spec FILE --out DIR --seed S
//   staplr predict  --model FILE --manifest M --out DIR [--threshold T]
//
// Exit codes: 0 ok, 1 usage, 2 load, 3 fit, 4 io, 5 corrupt model, 6 schema.

#include "staplr/staplr.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using namespace staplr;

namespace {

enum Exit { ok = 0, usage = 1, load = 2, fit = 3, io_failure = 4, corrupt_model = 5, schema = 6 };

struct Options {
    std::string manifest;
    std::string out;
    std::string model;
    std::string spec;
    std::string method = "staplr";
    std::optional<std::uint64_t> seed;
    std::size_t k_outer = 10;
    std::size_t k_inner = 10;
    std::size_t reps = 10;
    unsigned threads = 0;
    std::optional<double> mrm_a, mrm_b, mrm_c;
    double threshold = 0.5;
    bool standardize_stacked = false;
};

// Thrown for argument problems that CLI11 cannot express.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::uint64_t require_seed(const Options& o) {
    if (!o.seed) throw UsageError("--seed is required for this command");
    return *o.seed;
}

StackingConfig stacking_config(const Options& o) {
    StackingConfig cfg;
    cfg.k = o.k_inner;
    cfg.seed = o.seed.value_or(0);
    cfg.threads = o.threads;
    cfg.internal_penalty.standardize = o.standardize_stacked;
    return cfg;
}

void write_stream(const fs::path& path, const std::function<void(std::ostream&)>& body) {
    auto out = io::open_out(path);
    body(out);
    out.flush();
    if (!out) throw IoError("failed writing " + path.string());
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
}

int cmd_fit(const Options& o) {
    require_seed(o);
    const Dataset data = load_dataset(o.manifest);
    ensure_dir(o.out);
    const StackedModel model = fit_staplr(data, stacking_config(o));
    save_model(model, fs::path(o.out) / "model.json");
    write_stream(fs::path(o.out) / "coefficients.csv",
                 [&](std::ostream& out) { write_coefficient_table(out, coefficient_table(model)); });
    log(LogLevel::info, "fitted " + std::to_string(model.nodes().size()) + " node models");
    return ok;
}

int cmd_evaluate(const Options& o) {
    NestedCvConfig cv;
    cv.k_outer = o.k_outer;
    cv.k_inner = o.k_inner;
    cv.repetitions = o.reps;
    cv.master_seed = require_seed(o);
    cv.threads = o.threads;
    cv.validate();

    Dataset data = load_dataset(o.manifest);
    Method method;
    if (o.method == "staplr") {
        method = staplr_method(stacking_config(o));
    } else if (o.method == "staplr2-measures") {
        data = flatten_to_leaves(data);
        method = staplr_method(stacking_config(o), o.method);
    } else if (o.method == "staplr2-scantypes") {
        data = collapse_to_top(data);
        method = staplr_method(stacking_config(o), o.method);
    } else {
        method = elastic_net_method();
    }
    ensure_dir(o.out);
    const EvaluationReport report = nested_cv_evaluate(data, method, cv);
    write_report(report, data.hierarchy, o.out);
    if (report.failed_folds > 0)
        log(LogLevel::warn, std::to_string(report.failed_folds) + " outer fits failed; see folds.csv");
    return ok;
}

int cmd_mrm(const Options& o) {
    const StackedModel model = load_model(o.model);
    MrmSpec spec = MrmSpec::defaults(model);
    if (o.mrm_a) spec.a = *o.mrm_a;
    if (o.mrm_b) spec.b = *o.mrm_b;
    if (o.mrm_c) spec.c = *o.mrm_c;
    try {
        spec.validate();
    } catch (const InputError& e) {
        throw UsageError(e.what());
    }
    ensure_dir(o.out);
    const auto report = mrm_report(model, spec, fs::path(o.model).filename().string());
    write_stream(fs::path(o.out) / "mrm.csv", [&](std::ostream& out) { write_mrm_report(out, report); });
    return ok;
}

int cmd_simulate(const Options& o) {
    const std::uint64_t seed = require_seed(o);
    SyntheticSpec spec;
    Dataset data;
    try {
        std::ifstream in(o.spec);
        if (!in) throw LoadError("cannot open generator spec " + o.spec);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(in);
        } catch (const std::exception& e) {
            throw LoadError("generator spec is not valid JSON: " + std::string(e.what()));
        }
        spec = synthetic_spec_from_json(j);
        spec.seed = seed;
        data = generate_synthetic(spec);
    } catch (const InputError& e) {
        throw LoadError(e.what());
    }
    write_dataset(data, o.out);
    return ok;
}

int cmd_predict(const Options& o) {
    const StackedModel model = load_model(o.model);
    Dataset data;
    try {
        data = load_dataset(o.manifest, LoadOptions{false, false});
    } catch (const LoadError& e) {
        // new data that cannot be read against the model is a schema problem
        throw SchemaError(e.what());
    }
    if (!(o.threshold >= 0.0 && o.threshold <= 1.0)) throw UsageError("--threshold must lie in [0, 1]");
    const Vector p = predict_stacked(model, data.hierarchy);
    const auto cls = classify(p, o.threshold);
    ensure_dir(o.out);
    write_stream(fs::path(o.out) / "predictions.csv", [&](std::ostream& out) {
        out << "observation_id,probability,class\n";
        for (std::size_t i = 0; i < data.observation_ids.size(); ++i)
            out << io::csv_escape(data.observation_ids[i]) << ',' << io::format_double(p[static_cast<Eigen::Index>(i)])
                << ',' << cls[i] << '\n';
    });
    return ok;
}

int report(const std::string& kind, const std::exception& e, int code) {
    std::cerr << "staplr: " << kind << ": " << e.what() << '\n';
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hierarchical stacked penalized logistic regression for multi-view data"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "staplr 1.0");
    Options o;

    auto seed = [&](CLI::App* c, bool required) {
        auto* opt = c->add_option("--seed", o.seed, "Master seed for folds and all derived randomness");
        if (required) opt->required();
    };
    auto threads = [&](CLI::App* c) {
        c->add_option("--threads", o.threads, "Worker threads (0 = all cores); results do not depend on it")
            ->capture_default_str();
    };
    auto k_inner = [&](CLI::App* c) {
        c->add_option("--k-inner", o.k_inner, "Folds for tuning and out-of-fold predictions")
            ->check(CLI::Range(std::size_t{2}, std::size_t{1000}))
            ->capture_default_str();
    };
    auto stacked = [&](CLI::App* c) {
        c->add_flag("--standardize-stacked", o.standardize_stacked,
                    "Standardize out-of-fold prediction columns at internal nodes");
    };

    auto* fit_cmd = app.add_subcommand("fit", "Fit a stacked model on all observations");
    fit_cmd->add_option("--manifest", o.manifest, "Dataset manifest (JSON)")->required();
    fit_cmd->add_option("--out", o.out, "Output directory (model.json, coefficients.csv)")->required();
    seed(fit_cmd, true);
    k_inner(fit_cmd);
    threads(fit_cmd);
    stacked(fit_cmd);

    auto* eval_cmd = app.add_subcommand("evaluate", "Repeated nested cross-validation");
    eval_cmd->add_option("--manifest", o.manifest, "Dataset manifest (JSON)")->required();
    eval_cmd->add_option("--out", o.out, "Output directory for report files")->required();
    eval_cmd->add_option("--method", o.method, "staplr, staplr2-measures, staplr2-scantypes or elasticnet")
        ->check(CLI::IsMember({"staplr", "staplr2-measures", "staplr2-scantypes", "elasticnet"}))
        ->capture_default_str();
    eval_cmd->add_option("--k-outer", o.k_outer, "Outer folds")
        ->check(CLI::Range(std::size_t{2}, std::size_t{1000}))
        ->capture_default_str();
    eval_cmd->add_option("--reps", o.reps, "Repetitions of the outer loop")
        ->check(CLI::Range(std::size_t{1}, std::size_t{100000}))
        ->capture_default_str();
    seed(eval_cmd, true);
    k_inner(eval_cmd);
    threads(eval_cmd);
    stacked(eval_cmd);

    auto* mrm_cmd = app.add_subcommand("mrm", "Minority Report Measure for every leaf of a fitted model");
    mrm_cmd->add_option("--model", o.model, "Model file written by fit")->required();
    mrm_cmd->add_option("--out", o.out, "Output directory (mrm.csv)")->required();
    mrm_cmd->add_option("--mrm-a", o.mrm_a, "Lower pinned value (default 0)");
    mrm_cmd->add_option("--mrm-b", o.mrm_b, "Upper pinned value (default 1)");
    mrm_cmd->add_option("--mrm-c", o.mrm_c, "Value for all other leaves (default: training class-1 proportion)");

    auto* sim_cmd = app.add_subcommand("simulate", "Write a synthetic multi-view dataset");
    sim_cmd->add_option("--spec", o.spec, "Generator spec (JSON)")->required();
    sim_cmd->add_option("--out", o.out, "Output directory (manifest.json and data files)")->required();
    seed(sim_cmd, true);

    auto* pred_cmd = app.add_subcommand("predict", "Class-1 probabilities and classes for new data");
    pred_cmd->add_option("--model", o.model, "Model file written by fit")->required();
    pred_cmd->add_option("--manifest", o.manifest, "Manifest of the new data; the outcome file is optional")->required();
    pred_cmd->add_option("--out", o.out, "Output directory (predictions.csv)")->required();
    pred_cmd->add_option("--threshold", o.threshold, "Class-1 threshold; ties go to class 1")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return usage;
    }

    try {
        if (*fit_cmd) return cmd_fit(o);
        if (*eval_cmd) return cmd_evaluate(o);
        if (*mrm_cmd) return cmd_mrm(o);
        if (*sim_cmd) return cmd_simulate(o);
        if (*pred_cmd) return cmd_predict(o);
    } catch (const UsageError& e) {
        return report("usage", e, usage);
    } catch (const LoadError& e) {
        return report("load", e, load);
    } catch (const ModelFormatError& e) {
        return report("model", e, corrupt_model);
    } catch (const SchemaError& e) {
        return report("schema", e, schema);
    } catch (const IoError& e) {
        return report("io", e, io_failure);
    } catch (const Error& e) {
        return report("fit", e, fit);
    } catch (const std::exception& e) {
        return report("internal", e, fit);
    }
    return usage;
}
