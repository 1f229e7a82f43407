// Simulate a five-factor cohort, fit the unadjusted and main-effects models,
// and print the variance partition and the five lowest-scoring strata.

#include <cstdio>

#include "maihda.hpp"

int main() {
    using namespace maihda;

    SimConfig cfg;
    cfg.factors = {
        FactorSpec("term", {"Autumn", "Spring", "Summer"}),
        FactorSpec("gender", {"Male", "Female"}),
        FactorSpec("fsm", {"No", "Yes"}),
        FactorSpec("sen", {"No", "Yes"}),
        FactorSpec("ethnicity", {"White", "Black", "Asian", "Mixed", "Other", "Unclassified"}),
    };
    cfg.stratum_sizes = SizeRange{11, 4000};
    cfg.true_beta = {0.3, -0.07, -0.11, 0.02, -0.28, -1.07, -0.09, 0.07, 0.04, 0.0, -0.01};
    cfg.true_sigma2_u = 0.01;
    cfg.true_sigma2_e = 0.766;
    cfg.seed = 2024;

    const auto dataset = generate(cfg);
    const auto strata = make_strata(dataset.with_outcomes(standardize(dataset.outcomes())));
    const auto m1 = fit_model1(strata);
    const auto m2 = fit_model2(strata, m1);

    std::printf("strata: %zu, units: %zu\n", strata.index.count(), dataset.size());
    std::printf("model 1: sigma2_u = %.3f, sigma2_e = %.3f, VPC = %.1f%%\n", m1.fit.vc.sigma2_u, m1.fit.vc.sigma2_e, 100 * m1.vpc);
    std::printf("model 2: sigma2_u = %.3f, VPC = %.1f%%, PCV = %.1f%%\n", m2.fit.vc.sigma2_u, 100 * m2.vpc, 100 * m2.pcv_vs->value);

    std::printf("\nlowest predicted stratum means (model 1):\n");
    for (const auto& row : bottom_k(stratum_table(m1, strata), 5)) {
        std::printf("  %-40s n=%5zu  mean=% .3f  [% .3f, % .3f]\n", row.label.c_str(), row.n, row.predicted_mean,
                    row.predicted_mean - kZ95 * row.se, row.predicted_mean + kZ95 * row.se);
    }
}
