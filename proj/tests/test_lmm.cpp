#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "test_util.hpp"

namespace maihda {
namespace {

using testing::grouped_dataset;

struct Prepared {
    CohortDataset ds;
    StratumIndex index;
    std::vector<StratumSummary> summaries;
    DesignMatrix design;
};

Prepared prepare(const CohortDataset& ds, bool main_effects = false) {
    Prepared p{ds, build_strata(ds), {}, {}};
    p.summaries = summarize_strata(p.ds, p.index);
    p.design = main_effects ? main_effects_design(p.index, ds.factors) : intercept_design(p.index.count());
    return p;
}

// Oracle: the Gaussian (restricted) likelihood with the full N x N covariance
// matrix, no sufficient statistics involved.
double dense_deviance(const Prepared& p, double s2u, double s2e, Method method) {
    const auto N = static_cast<Eigen::Index>(p.ds.size());
    const Eigen::MatrixXd X = unit_design(p.design, p.index);
    Eigen::VectorXd y(N);
    for (Eigen::Index i = 0; i < N; ++i) y(i) = p.ds.rows[static_cast<std::size_t>(i)].outcome;
    Eigen::MatrixXd V = s2e * Eigen::MatrixXd::Identity(N, N);
    for (Eigen::Index i = 0; i < N; ++i)
        for (Eigen::Index k = 0; k < N; ++k)
            if (p.index.row_assignment[static_cast<std::size_t>(i)] == p.index.row_assignment[static_cast<std::size_t>(k)]) V(i, k) += s2u;
    Eigen::LLT<Eigen::MatrixXd> llt(V);
    const Eigen::MatrixXd ViX = llt.solve(X);
    const Eigen::MatrixXd A = X.transpose() * ViX;
    const Eigen::VectorXd beta = A.ldlt().solve(X.transpose() * llt.solve(y));
    const Eigen::VectorXd r = y - X * beta;
    double log_det_v = 0.0;
    for (Eigen::Index i = 0; i < N; ++i) log_det_v += 2.0 * std::log(llt.matrixL()(i, i));
    const double quad = r.dot(llt.solve(r));
    const double log2pi = std::log(2.0 * std::numbers::pi);
    if (method == Method::ml) return static_cast<double>(N) * log2pi + log_det_v + quad;
    return static_cast<double>(N - X.cols()) * log2pi + log_det_v + std::log(A.determinant()) + quad;
}

// Oracle: balanced one-way ANOVA estimators.
struct Anova {
    double msw, msb, s2u, grand_mean;
};

Anova balanced_anova(const std::vector<std::vector<double>>& groups) {
    const double J = static_cast<double>(groups.size());
    const double n = static_cast<double>(groups[0].size());
    double grand = 0.0, ssw = 0.0, ssb = 0.0;
    std::vector<double> means;
    for (const auto& g : groups) {
        double m = 0.0;
        for (double v : g) m += v;
        m /= n;
        means.push_back(m);
        grand += m / J;
        for (double v : g) ssw += (v - m) * (v - m);
    }
    for (double m : means) ssb += n * (m - grand) * (m - grand);
    const double msw = ssw / (J * (n - 1.0));
    const double msb = ssb / (J - 1.0);
    return {msw, msb, std::max(0.0, (msb - msw) / n), grand};
}

std::vector<std::vector<double>> random_groups(std::mt19937_64& rng, std::size_t J, std::size_t n, double sd_u, double sd_e,
                                               bool balanced = true) {
    std::normal_distribution<double> z(0.0, 1.0);
    std::vector<std::vector<double>> groups(J);
    for (auto& g : groups) {
        const double u = sd_u * z(rng);
        const std::size_t size = balanced ? n : 2 + rng() % (2 * n);
        for (std::size_t i = 0; i < size; ++i) g.push_back(1.5 + u + sd_e * z(rng));
    }
    return groups;
}

const std::vector<std::vector<double>> kFixture = {{0, 2}, {1, 3}, {5, 7}};

TEST(ProfiledDeviance, MatchesDenseLikelihood) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        CohortDataset ds;
        ds.factors = {FactorSpec("a", {"a0", "a1", "a2"}), FactorSpec("b", {"b0", "b1"})};
        std::normal_distribution<double> z;
        for (std::size_t a = 0; a < 3; ++a)
            for (std::size_t b = 0; b < 2; ++b) {
                const std::size_t n = 1 + rng() % 6;
                for (std::size_t i = 0; i < n; ++i) ds.rows.push_back({"", {a, b}, z(rng) + static_cast<double>(a)});
            }
        for (bool me : {false, true}) {
            const auto p = prepare(ds, me);
            for (auto method : {Method::reml, Method::ml}) {
                for (auto [a, e] : {std::pair{0.0, 1.3}, std::pair{0.7, 0.4}, std::pair{3.0, 2.0}}) {
                    const double expected = dense_deviance(p, a, e, method);
                    EXPECT_NEAR(profiled_deviance(p.summaries, p.design, {a, e}, method), expected, 1e-9 * std::abs(expected));
                }
            }
        }
    }
}

TEST(ProfiledDeviance, BoundaryEqualsOlsGaussianDeviance) {
    const auto p = prepare(grouped_dataset({{0.3, 1.2, 2.0}, {4.0, 5.5}, {-1.0, 0.0, 0.5, 0.25}}));
    const auto ols = ols_fit(p.summaries, p.design);
    const double N = 9.0, s2 = 1.7;
    const double expected_ml = N * std::log(2.0 * std::numbers::pi * s2) + ols.rss / s2;
    EXPECT_NEAR(profiled_deviance(p.summaries, p.design, {0.0, s2}, Method::ml), expected_ml, 1e-10);
}

TEST(ProfiledDeviance, FixtureGridMinimumAtAnovaSolution) {
    const auto p = prepare(grouped_dataset(kFixture));
    const double at_opt = profiled_deviance(p.summaries, p.design, {6.0, 2.0});
    for (double du : {-0.5, -0.1, 0.0, 0.1, 0.5})
        for (double de : {-0.5, -0.1, 0.0, 0.1, 0.5}) {
            if (du == 0.0 && de == 0.0) continue;
            EXPECT_GT(profiled_deviance(p.summaries, p.design, {6.0 + du, 2.0 + de}), at_opt);
        }
}

TEST(ProfiledDeviance, InvariantToStratumOrderAndRejectsBadVariance) {
    const auto p = prepare(grouped_dataset({{1, 2}, {5, 6, 9}, {0}}));
    auto summaries = p.summaries;
    std::reverse(summaries.begin(), summaries.end());
    EXPECT_NEAR(profiled_deviance(summaries, p.design, {0.8, 1.1}), profiled_deviance(p.summaries, p.design, {0.8, 1.1}), 1e-12);
    EXPECT_THROW(profiled_deviance(p.summaries, p.design, {1.0, 0.0}), UsageError);
    EXPECT_THROW(profiled_deviance(p.summaries, p.design, {-1.0, 1.0}), UsageError);
}

TEST(ProfiledDeviance, AnalyticGradientMatchesCentralDifferences) {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 10; ++trial) {
        const auto p = prepare(grouped_dataset(random_groups(rng, 8, 6, 0.8, 1.0, false)));
        for (auto method : {Method::reml, Method::ml}) {
            const VarianceComponents vc{0.3 + 0.1 * trial, 0.9};
            const auto g = profiled_deviance_gradient(p.summaries, p.design, vc, method);
            const double h = 1e-5;
            const double du = (profiled_deviance(p.summaries, p.design, {vc.sigma2_u + h, vc.sigma2_e}, method) -
                               profiled_deviance(p.summaries, p.design, {vc.sigma2_u - h, vc.sigma2_e}, method)) / (2 * h);
            const double de = (profiled_deviance(p.summaries, p.design, {vc.sigma2_u, vc.sigma2_e + h}, method) -
                               profiled_deviance(p.summaries, p.design, {vc.sigma2_u, vc.sigma2_e - h}, method)) / (2 * h);
            EXPECT_NEAR(g(0), du, 1e-5 * std::max(1.0, std::abs(du)));
            EXPECT_NEAR(g(1), de, 1e-5 * std::max(1.0, std::abs(de)));
        }
    }
}

TEST(Fit, BalancedFixtureMatchesAnova) {
    const auto p = prepare(grouped_dataset(kFixture));
    const auto r = fit(p.summaries, p.design);
    EXPECT_TRUE(r.converged);
    EXPECT_FALSE(r.at_boundary);
    EXPECT_NEAR(r.vc.sigma2_e, 2.0, 1e-9);
    EXPECT_NEAR(r.vc.sigma2_u, 6.0, 1e-9);
    EXPECT_NEAR(r.fixed.estimates(0), 3.0, 1e-12);
}

TEST(Fit, BalancedAnovaOracleProperty) {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t J = 3 + rng() % 20, n = 2 + rng() % 15;
        const auto groups = random_groups(rng, J, n, trial % 3 == 0 ? 0.1 : 1.0, 1.0);
        const auto oracle = balanced_anova(groups);
        const auto p = prepare(grouped_dataset(groups));
        const auto r = fit(p.summaries, p.design);
        EXPECT_TRUE(r.converged);
        if (oracle.msb > oracle.msw) {
            EXPECT_NEAR(r.vc.sigma2_e, oracle.msw, 1e-6 * oracle.msw);
            EXPECT_NEAR(r.vc.sigma2_u, oracle.s2u, 1e-6 * oracle.s2u);
        } else {
            // Truncated at zero: s2e becomes the pooled total mean square.
            EXPECT_EQ(r.vc.sigma2_u, 0.0);
            EXPECT_TRUE(r.at_boundary);
        }
        EXPECT_NEAR(r.fixed.estimates(0), oracle.grand_mean, 1e-10 * std::max(1.0, std::abs(oracle.grand_mean)));
    }
}

TEST(Fit, EqualMeansGiveBoundary) {
    const auto p = prepare(grouped_dataset({{1, 3}, {0, 4}, {2, 2}, {1.5, 2.5}}));
    const auto r = fit(p.summaries, p.design);
    EXPECT_TRUE(r.at_boundary);
    EXPECT_TRUE(r.converged);
    EXPECT_EQ(r.vc.sigma2_u, 0.0);
    EXPECT_FALSE(r.vc_standard_errors.sigma2_u.has_value());
    ASSERT_TRUE(r.vc_standard_errors.sigma2_e.has_value());
    EXPECT_GT(*r.vc_standard_errors.sigma2_e, 0.0);
    for (const auto& e : eb_predict(r, p.summaries)) {
        EXPECT_EQ(e.u_hat, 0.0);
        EXPECT_EQ(e.se_u, 0.0);
    }
}

TEST(Fit, GradientAtOptimumIsSmall) {
    std::mt19937_64 rng(33);
    for (int trial = 0; trial < 10; ++trial) {
        const auto p = prepare(grouped_dataset(random_groups(rng, 25, 20, 0.7, 1.0, false)));
        for (auto method : {Method::reml, Method::ml}) {
            const auto r = fit(p.summaries, p.design, {.method = method});
            ASSERT_TRUE(r.converged);
            ASSERT_FALSE(r.at_boundary);
            // Central differences in (log sd_u, log sd_e), independent of the analytic gradient.
            auto dev = [&](double lu, double le) {
                return profiled_deviance(p.summaries, p.design, {std::exp(2 * lu), std::exp(2 * le)}, method);
            };
            const double lu = 0.5 * std::log(r.vc.sigma2_u), le = 0.5 * std::log(r.vc.sigma2_e), h = 1e-5;
            EXPECT_LT(std::abs(dev(lu + h, le) - dev(lu - h, le)) / (2 * h), 1e-4);
            EXPECT_LT(std::abs(dev(lu, le + h) - dev(lu, le - h)) / (2 * h), 1e-4);
            EXPECT_LT(r.gradient.cwiseAbs().maxCoeff(), 1e-6);
        }
    }
}

TEST(Fit, Errors) {
    const auto one = prepare(grouped_dataset({{1, 2, 3}}));
    EXPECT_THROW(fit(one.summaries, one.design), NumericalError);

    CohortDataset ds;
    ds.factors = {FactorSpec("a", {"a0", "a1"}), FactorSpec("b", {"b0", "b1"}), FactorSpec("c", {"c0", "c1", "c2"})};
    for (std::size_t k = 0; k < 2; ++k)
        for (std::size_t c = 0; c < 3; ++c)
            for (double y : {0.0, 1.0, 2.5}) ds.rows.push_back({"", {k, k, c}, y + static_cast<double>(k + c)});
    const auto p = prepare(ds, true);
    try {
        fit(p.summaries, p.design);
        FAIL();
    } catch (const NumericalError& e) {
        EXPECT_NE(std::string(e.what()).find("b:b1"), std::string::npos);
    }
}

TEST(Fit, IterationCapReportsNonConvergence) {
    const auto p = prepare(grouped_dataset({{0, 1, 5}, {3, 4}, {9, 10, 11, 12}, {2}}));
    const auto r = fit(p.summaries, p.design, {.max_iterations = 0});
    EXPECT_FALSE(r.converged);
    EXPECT_TRUE(fit(p.summaries, p.design).converged);
}

TEST(Fit, InvariantToRowOrderAndStratumRelabeling) {
    std::mt19937_64 rng(4);
    const auto groups = random_groups(rng, 6, 8, 1.0, 1.0, false);
    auto ds = grouped_dataset(groups);
    const auto base = fit(prepare(ds).summaries, prepare(ds).design);

    auto shuffled = ds;
    std::shuffle(shuffled.rows.begin(), shuffled.rows.end(), rng);
    const auto ps = prepare(shuffled);
    const auto rs = fit(ps.summaries, ps.design);
    EXPECT_NEAR(rs.vc.sigma2_u, base.vc.sigma2_u, 1e-8 * base.vc.sigma2_u);
    EXPECT_NEAR(rs.vc.sigma2_e, base.vc.sigma2_e, 1e-8 * base.vc.sigma2_e);

    // Reverse the category order: stratum ids are permuted, effects follow.
    auto relabeled = ds;
    auto cats = ds.factors[0].categories();
    std::reverse(cats.begin(), cats.end());
    relabeled.factors = {FactorSpec("group", cats)};
    for (auto& row : relabeled.rows) row.levels[0] = cats.size() - 1 - row.levels[0];
    const auto pr = prepare(relabeled);
    const auto rr = fit(pr.summaries, pr.design);
    EXPECT_NEAR(rr.vc.sigma2_u, base.vc.sigma2_u, 1e-8 * base.vc.sigma2_u);
    const auto e0 = eb_predict(base, prepare(ds).summaries);
    const auto e1 = eb_predict(rr, pr.summaries);
    for (std::size_t j = 0; j < e0.size(); ++j) EXPECT_NEAR(e1[e0.size() - 1 - j].u_hat, e0[j].u_hat, 1e-8);
}

TEST(Gls, InterceptIsPrecisionWeightedMean) {
    std::mt19937_64 rng(8);
    const auto p = prepare(grouped_dataset(random_groups(rng, 10, 5, 1.0, 1.0, false)));
    const VarianceComponents vc{0.6, 1.4};
    const auto fe = gls_fixed_effects(p.summaries, p.design, vc);
    double num = 0.0, den = 0.0;
    for (const auto& s : p.summaries) {
        const double w = s.n / (vc.sigma2_e + s.n * vc.sigma2_u);
        num += w * s.mean_y;
        den += w;
    }
    EXPECT_NEAR(fe.estimates(0), num / den, 1e-12);
    EXPECT_NEAR(fe.standard_errors(0), std::sqrt(1.0 / den), 1e-12);
}

TEST(Gls, FixtureAndTwoStrataExample) {
    const auto p = prepare(grouped_dataset(kFixture));
    EXPECT_NEAR(gls_fixed_effects(p.summaries, p.design, {6, 2}).estimates(0), 3.0, 1e-14);

    const auto two = prepare(grouped_dataset({{0.5, 1.5}, {2.5, 3.5}}));
    FitResult r;
    r.vc = {1.0, 1.0};
    r.fixed = gls_fixed_effects(two.summaries, two.design, r.vc);
    r.linear_predictor = two.design.values * r.fixed.estimates;
    EXPECT_NEAR(r.fixed.estimates(0), 2.0, 1e-14);
    const auto eff = eb_predict(r, two.summaries);
    EXPECT_NEAR(eff[0].u_hat, -2.0 / 3.0, 1e-14);
    EXPECT_NEAR(eff[1].u_hat, 2.0 / 3.0, 1e-14);
    EXPECT_NEAR(eff[0].shrinkage_factor, 2.0 / 3.0, 1e-14);
    EXPECT_NEAR(eff[0].se_u, std::sqrt(1.0 / 3.0), 1e-14);
    EXPECT_NEAR(eff[0].ci_high - eff[0].ci_low, 2 * 1.96 * std::sqrt(1.0 / 3.0), 1e-12);
    EXPECT_NEAR(eff[1].predicted_mean, 2.0 + 2.0 / 3.0, 1e-14);
}

TEST(Gls, BoundaryEqualsUnitLevelOls) {
    CohortDataset ds;
    ds.factors = {FactorSpec("a", {"a0", "a1", "a2"}), FactorSpec("b", {"b0", "b1"})};
    std::mt19937_64 rng(2);
    std::normal_distribution<double> z;
    for (std::size_t a = 0; a < 3; ++a)
        for (std::size_t b = 0; b < 2; ++b)
            for (std::size_t i = 0; i < 2 + rng() % 5; ++i) ds.rows.push_back({"", {a, b}, z(rng) + 0.3 * static_cast<double>(a)});
    const auto p = prepare(ds, true);
    const auto fe = gls_fixed_effects(p.summaries, p.design, {0.0, 1.0});
    Eigen::VectorXd y(static_cast<Eigen::Index>(ds.size()));
    for (std::size_t i = 0; i < ds.size(); ++i) y(static_cast<Eigen::Index>(i)) = ds.rows[i].outcome;
    const auto ols = ols_fit(unit_design(p.design, p.index), y, p.design.names());
    EXPECT_TRUE(fe.estimates.isApprox(ols.estimates, 1e-10));
}

TEST(EbPredict, ZeroResidualGivesZeroEffect) {
    const auto p = prepare(grouped_dataset({{1, 2, 3}, {5, 5}, {0, 0, 0, 0}}));
    FitResult r;
    r.vc = {2.0, 1.0};
    r.linear_predictor = Eigen::VectorXd::Constant(3, 2.0);
    const auto e = eb_predict(r, p.summaries);
    EXPECT_EQ(e[0].u_hat, 0.0);
    EXPECT_GT(e[1].u_hat, 0.0);
    EXPECT_LT(e[2].u_hat, 0.0);
}

TEST(EbPredict, ShrinkageOrderingProperty) {
    FitResult r;
    r.vc = {0.3, 0.8};
    std::vector<StratumSummary> s;
    for (std::size_t n : {1, 2, 5, 11, 40, 200, 4000, 1000000}) s.push_back({s.size(), n, 0, 0, -0.7, 0, false});
    r.linear_predictor = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(s.size()));
    const auto e = eb_predict(r, s);
    for (std::size_t j = 0; j < e.size(); ++j) {
        EXPECT_EQ(e[j].u_hat, e[j].shrinkage_factor * e[j].raw_residual_mean);
        EXPECT_LE(std::abs(e[j].u_hat), std::abs(e[j].raw_residual_mean));
        if (j) {
            EXPECT_GE(std::abs(e[j].u_hat), std::abs(e[j - 1].u_hat));
            EXPECT_GT(e[j].shrinkage_factor, e[j - 1].shrinkage_factor);
        }
    }
    EXPECT_NEAR(e.back().u_hat, -0.7, 1e-5);
}

// Second differences of the deviance itself, independent of the gradient.
Eigen::Matrix2d fd_hessian_log_sd(const Prepared& p, const FitResult& r, double h = 1e-4) {
    auto dev = [&](const Eigen::Vector2d& s) {
        return profiled_deviance(p.summaries, p.design, {std::exp(2 * s(0)), std::exp(2 * s(1))}, r.method);
    };
    const Eigen::Vector2d s{0.5 * std::log(r.vc.sigma2_u), 0.5 * std::log(r.vc.sigma2_e)};
    Eigen::Matrix2d H;
    for (int i = 0; i < 2; ++i)
        for (int k = 0; k < 2; ++k) {
            Eigen::Vector2d pp = s, pm = s, mp = s, mm = s;
            pp(i) += h; pp(k) += h;
            pm(i) += h; pm(k) -= h;
            mp(i) -= h; mp(k) += h;
            mm(i) -= h; mm(k) -= h;
            H(i, k) = (dev(pp) - dev(pm) - dev(mp) + dev(mm)) / (4 * h * h);
        }
    return H;
}

TEST(VcStandardErrors, AgreeWithFiniteDifferenceHessian) {
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 5; ++trial) {
        const auto p = prepare(grouped_dataset(random_groups(rng, 30, 25, 0.8, 1.0, false)));
        const auto r = fit(p.summaries, p.design);
        ASSERT_TRUE(r.vc_standard_errors.sigma2_u && r.vc_standard_errors.sigma2_e);
        const Eigen::Matrix2d cov = 2.0 * fd_hessian_log_sd(p, r).inverse();
        EXPECT_NEAR(*r.vc_standard_errors.sigma2_u, 2 * r.vc.sigma2_u * std::sqrt(cov(0, 0)), 1e-3 * *r.vc_standard_errors.sigma2_u);
        EXPECT_NEAR(*r.vc_standard_errors.sigma2_e, 2 * r.vc.sigma2_e * std::sqrt(cov(1, 1)), 1e-3 * *r.vc_standard_errors.sigma2_e);
    }
}

TEST(VcStandardErrors, WithinVarianceMatchesChiSquareOracle) {
    std::mt19937_64 rng(13);
    const std::size_t J = 40, n = 250;
    const auto p = prepare(grouped_dataset(random_groups(rng, J, n, 0.6, 0.9)));
    const auto r = fit(p.summaries, p.design);
    const double df_within = static_cast<double>(J * (n - 1));
    const double oracle = r.vc.sigma2_e * std::sqrt(2.0 / df_within);
    EXPECT_NEAR(*r.vc_standard_errors.sigma2_e, oracle, 1e-3 * oracle);
}

TEST(VcStandardErrors, ShrinkWithMoreData) {
    std::mt19937_64 rng(14);
    auto small = random_groups(rng, 20, 30, 0.6, 1.0);
    auto big = small;
    const auto extra = random_groups(rng, 20, 30, 0.6, 1.0);
    big.insert(big.end(), extra.begin(), extra.end());
    for (auto& g : big) {
        const auto more = random_groups(rng, 1, 30, 0.0, 1.0)[0];
        const double shift = g[0] - more[0];
        for (double v : more) g.push_back(v + shift);
    }
    const auto ps = prepare(grouped_dataset(small));
    const auto pb = prepare(grouped_dataset(big));
    const auto rs = fit(ps.summaries, ps.design);
    const auto rb = fit(pb.summaries, pb.design);
    EXPECT_LT(*rb.vc_standard_errors.sigma2_e, *rs.vc_standard_errors.sigma2_e);
    EXPECT_LT(*rb.vc_standard_errors.sigma2_u / rb.vc.sigma2_u, *rs.vc_standard_errors.sigma2_u / rs.vc.sigma2_u);
}

TEST(Ols, ThreePointIntercept) {
    const auto p = prepare(grouped_dataset({{0, 1, 2}}));
    const auto r = ols_fit(p.summaries, p.design);
    EXPECT_NEAR(r.estimates(0), 1.0, 1e-15);
    EXPECT_NEAR(r.residual_variance, 1.0, 1e-15);
    EXPECT_NEAR(r.standard_errors(0), std::sqrt(1.0 / 3.0), 1e-15);
}

TEST(Ols, SummaryRouteMatchesUnitRoute) {
    const auto factors = testing::school_factors();
    SimConfig cfg;
    cfg.factors = factors;
    cfg.stratum_sizes = SizeRange{2, 30};
    cfg.true_beta = {0.3, -0.1, -0.1, 0.0, -0.3, -1.0, 0.1};
    cfg.true_sigma2_u = 0.05;
    cfg.seed = 99;
    const auto p = prepare(generate(cfg), true);
    const auto by_summary = ols_fit(p.summaries, p.design);
    Eigen::VectorXd y(static_cast<Eigen::Index>(p.ds.size()));
    for (std::size_t i = 0; i < p.ds.size(); ++i) y(static_cast<Eigen::Index>(i)) = p.ds.rows[i].outcome;
    const auto by_unit = ols_fit(unit_design(p.design, p.index), y, p.design.names());
    EXPECT_TRUE(by_summary.estimates.isApprox(by_unit.estimates, 1e-10));
    EXPECT_TRUE(by_summary.standard_errors.isApprox(by_unit.standard_errors, 1e-10));
    EXPECT_NEAR(by_summary.residual_variance, by_unit.residual_variance, 1e-10);
}

TEST(Ols, StandardizedOutcomeHasZeroIntercept) {
    std::mt19937_64 rng(15);
    auto ds = grouped_dataset(random_groups(rng, 12, 9, 1.0, 2.0, false));
    ds = ds.with_outcomes(standardize(ds.outcomes()));
    const auto p = prepare(ds);
    const auto r = ols_fit(p.summaries, p.design);
    EXPECT_NEAR(r.estimates(0), 0.0, 1e-12);
    EXPECT_NEAR(r.residual_variance, 1.0, 1e-12);
}

TEST(Ols, RankDeficientIsAnError) {
    Eigen::MatrixXd X(4, 2);
    X << 1, 2, 1, 2, 1, 2, 1, 2;
    EXPECT_THROW(ols_fit(X, Eigen::VectorXd::Ones(4), {"a", "b"}), NumericalError);
}

}  // namespace
}  // namespace maihda
