// Fits a hierarchical stacked model to a small synthetic three-level dataset
// and prints the view weights and the Minority Report Measure of every leaf.

#include "staplr/staplr.hpp"

#include <iomanip>
#include <iostream>

int main() {
    using namespace staplr;

    SyntheticSpec spec;
    spec.tree = synthetic_tree({{10, 10, 10}, {10, 10}, {10, 10, 10}});
    spec.signal = {{"s1m1", 1.5}, {"s1m2", 1.5}, {"s3m1", 0.5}};
    spec.correlation = 0.3;
    spec.n = 200;
    spec.seed = 7;
    const Dataset data = generate_synthetic(spec);

    StackingConfig cfg;
    cfg.seed = 11;
    cfg.threads = 0;
    const StackedModel model = fit_staplr(data, cfg);

    std::cout << std::fixed << std::setprecision(3);
    std::cout << "in-sample AUC " << auc(predict_stacked(model, data.hierarchy), data.outcome) << "\n\n";
    for (const auto& row : coefficient_table(model)) {
        if (row.leaf) continue;
        std::cout << row.node_id << ":";
        for (std::size_t j = 0; j < row.predictors.size(); ++j)
            std::cout << ' ' << row.predictors[j] << '=' << row.coefficients[j];
        std::cout << '\n';
    }
    std::cout << '\n';
    write_mrm_report(std::cout, mrm_report(model, MrmSpec::defaults(model), "demo"));
}
