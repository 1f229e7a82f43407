#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <future>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "maihda/error.hpp"
#include "maihda/ingest.hpp"
#include "maihda/lmm.hpp"
#include "maihda/transform.hpp"

namespace maihda {

// -------------------------------------------------------------------------
// Variance partitioning
// -------------------------------------------------------------------------

/// Share of total variance lying between strata.
inline double vpc(const VarianceComponents& vc) {
    const double total = vc.sigma2_u + vc.sigma2_e;
    if (!(total > 0.0)) throw UsageError("vpc: total variance must be positive");
    return vc.sigma2_u / total;
}

/// Proportional change in the stratum variance relative to a baseline model.
/// Negative when the comparison model has the larger stratum variance.
inline double pcv(double baseline_sigma2_u, double comparison_sigma2_u) {
    if (!(baseline_sigma2_u > 0.0)) throw UsageError("pcv: baseline stratum variance must be positive");
    return (baseline_sigma2_u - comparison_sigma2_u) / baseline_sigma2_u;
}

// -------------------------------------------------------------------------
// Models
// -------------------------------------------------------------------------

/// Strata and their sufficient statistics for one cohort. Suppression flags
/// only affect reporting.
struct Strata {
    std::vector<FactorSpec> factors;
    StratumIndex index;
    std::vector<StratumSummary> summaries;

    std::size_t suppressed_count() const {
        return static_cast<std::size_t>(std::count_if(summaries.begin(), summaries.end(), [](const auto& s) { return s.suppressed; }));
    }
    std::string label(std::size_t j) const { return stratum_label(factors, index.keys.at(j)); }
};

inline Strata make_strata(const CohortDataset& ds, std::size_t suppression_threshold = kDefaultSuppressionThreshold) {
    Strata s;
    s.factors = ds.factors;
    s.index = build_strata(ds);
    s.summaries = summarize_strata(ds, s.index, suppression_threshold);
    return s;
}

struct PcvValue {
    std::string baseline;
    double value = 0.0;
};

struct MaihdaModelResult {
    std::string tag;  // "model1", "model2", "model2+a*b", "single:a"
    DesignMatrix design;
    FitResult fit;
    std::vector<StratumEffect> effects;
    double vpc = 0.0;
    std::optional<PcvValue> pcv_vs;
};

inline MaihdaModelResult fit_model(const Strata& strata, std::string tag, DesignMatrix design, Method method,
                                   const MaihdaModelResult* baseline = nullptr) {
    MaihdaModelResult r;
    r.tag = std::move(tag);
    r.design = std::move(design);
    r.fit = fit(strata.summaries, r.design, FitOptions{.method = method});
    r.effects = eb_predict(r.fit, strata.summaries);
    r.vpc = vpc(r.fit.vc);
    if (baseline) {
        if (baseline->fit.vc.sigma2_u > 0.0) {
            r.pcv_vs = PcvValue{baseline->tag, pcv(baseline->fit.vc.sigma2_u, r.fit.vc.sigma2_u)};
        }
    }
    return r;
}

/// Unadjusted model: intercept plus stratum random effect.
inline MaihdaModelResult fit_model1(const Strata& strata, Method method = Method::reml) {
    return fit_model(strata, "model1", intercept_design(strata.index.count()), method);
}

/// Main-effects model; PCV is taken against `model1`.
inline MaihdaModelResult fit_model2(const Strata& strata, const MaihdaModelResult& model1, Method method = Method::reml) {
    return fit_model(strata, "model2", main_effects_design(strata.index, strata.factors), method, &model1);
}

inline MaihdaModelResult fit_model1(const CohortDataset& ds, Method method = Method::reml) {
    return fit_model1(make_strata(ds), method);
}

inline MaihdaModelResult fit_model2(const CohortDataset& ds, Method method = Method::reml) {
    const auto strata = make_strata(ds);
    return fit_model2(strata, fit_model1(strata, method), method);
}

// -------------------------------------------------------------------------
// Stratum tables
// -------------------------------------------------------------------------

struct StratumTableRow {
    std::size_t stratum_id = 0;  // 1-based
    std::string label;
    std::vector<std::string> labels;
    std::size_t n = 0;
    double observed_mean = 0.0;
    double predicted_mean = 0.0;
    double u_hat = 0.0;
    double se = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    double rank = 0.0;  // ascending, ties averaged
    bool significant = false;
    bool meaningful = false;
};

enum class RankBy { predicted_mean, effect };

/// Unsuppressed strata ordered by rank (1 = lowest). Significance means the
/// 95% interval for u_j excludes zero; "meaningful" additionally needs
/// |u_j| > meaningful_threshold.
inline std::vector<StratumTableRow> stratum_table(const MaihdaModelResult& result, const Strata& strata,
                                                  RankBy order = RankBy::predicted_mean,
                                                  double meaningful_threshold = 0.1) {
    std::vector<StratumTableRow> rows;
    for (std::size_t j = 0; j < strata.summaries.size(); ++j) {
        const auto& s = strata.summaries[j];
        if (s.suppressed) continue;
        const auto& e = result.effects.at(j);
        StratumTableRow row;
        row.stratum_id = j + 1;
        row.label = strata.label(j);
        for (std::size_t f = 0; f < strata.factors.size(); ++f) row.labels.push_back(strata.factors[f].label(strata.index.keys[j][f]));
        row.n = s.n;
        row.observed_mean = s.mean_y;
        row.predicted_mean = e.predicted_mean;
        row.u_hat = e.u_hat;
        row.se = e.se_u;
        row.ci_low = e.ci_low;
        row.ci_high = e.ci_high;
        row.significant = e.ci_low > 0.0 || e.ci_high < 0.0;
        row.meaningful = row.significant && std::abs(e.u_hat) > meaningful_threshold;
        rows.push_back(std::move(row));
    }
    std::vector<double> key;
    for (const auto& r : rows) key.push_back(order == RankBy::predicted_mean ? r.predicted_mean : r.u_hat);
    if (!key.empty()) {
        const auto ranks = average_ranks(key);
        for (std::size_t i = 0; i < rows.size(); ++i) rows[i].rank = ranks[i];
    }
    std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.rank < b.rank; });
    return rows;
}

inline std::vector<StratumTableRow> bottom_k(const std::vector<StratumTableRow>& table, std::size_t k) {
    return {table.begin(), table.begin() + static_cast<std::ptrdiff_t>(std::min(k, table.size()))};
}

/// Highest-ranked k rows, best first.
inline std::vector<StratumTableRow> top_k(const std::vector<StratumTableRow>& table, std::size_t k) {
    std::vector<StratumTableRow> out(table.rbegin(), table.rbegin() + static_cast<std::ptrdiff_t>(std::min(k, table.size())));
    return out;
}

inline double share_significant(const std::vector<StratumTableRow>& table) {
    if (table.empty()) return 0.0;
    const auto k = std::count_if(table.begin(), table.end(), [](const auto& r) { return r.significant; });
    return static_cast<double>(k) / static_cast<double>(table.size());
}

/// Fraction of values at or above `threshold`.
inline double benchmark_share(const std::vector<double>& values, double threshold) {
    if (values.empty()) throw UsageError("benchmark_share: no values");
    const auto k = std::count_if(values.begin(), values.end(), [&](double v) { return v >= threshold; });
    return static_cast<double>(k) / static_cast<double>(values.size());
}

// -------------------------------------------------------------------------
// Scans
// -------------------------------------------------------------------------

struct ScanRow {
    std::string label;  // "a*b" or "a"
    std::vector<std::string> factors;
    bool ok = false;
    std::string status = "ok";  // "ok", "rank-deficient", or an error message
    std::optional<MaihdaModelResult> result;

    double vpc() const { return result ? result->vpc : 0.0; }
    std::optional<double> pcv() const {
        if (result && result->pcv_vs) return result->pcv_vs->value;
        return std::nullopt;
    }
};

namespace detail {

template <class Task>
std::vector<ScanRow> run_scan(std::vector<Task> tasks) {
    std::vector<std::future<ScanRow>> futures;
    futures.reserve(tasks.size());
    for (auto& t : tasks) futures.push_back(std::async(std::launch::async, std::move(t)));
    std::vector<ScanRow> rows;
    for (auto& f : futures) rows.push_back(f.get());
    std::stable_sort(rows.begin(), rows.end(), [](const ScanRow& a, const ScanRow& b) {
        if (a.ok != b.ok) return a.ok;
        const auto pa = a.pcv(), pb = b.pcv();
        if (pa.has_value() != pb.has_value()) return pa.has_value();
        return pa && *pa > *pb;
    });
    return rows;
}

inline ScanRow scan_fit(const Strata& strata, std::string label, std::vector<std::string> factors, std::string tag,
                        const DesignMatrix& design, Method method, const MaihdaModelResult& baseline) {
    ScanRow row;
    row.label = std::move(label);
    row.factors = std::move(factors);
    if (!collinear_columns(design).empty()) {
        row.status = "rank-deficient";
        return row;
    }
    try {
        row.result = fit_model(strata, std::move(tag), design, method, &baseline);
        row.ok = true;
    } catch (const std::exception& e) {
        row.status = e.what();
    }
    return row;
}

}  // namespace detail

/// Model 2 plus one two-way interaction at a time; PCV against `model2`.
/// Rows are sorted by descending PCV; failed fits follow in pair order.
inline std::vector<ScanRow> interaction_scan(const Strata& strata, const MaihdaModelResult& model2, Method method = Method::reml) {
    const DesignMatrix main = main_effects_design(strata.index, strata.factors);
    std::vector<std::function<ScanRow()>> tasks;
    for (auto [a, b] : factor_pairs(strata.factors.size())) {
        const auto& fa = strata.factors[a].name();
        const auto& fb = strata.factors[b].name();
        tasks.emplace_back([&strata, &model2, &main, fa, fb, method] {
            const auto design = with_interaction(main, fa, fb);
            return detail::scan_fit(strata, fa + "*" + fb, {fa, fb}, "model2+" + fa + "*" + fb, design, method, model2);
        });
    }
    return detail::run_scan(std::move(tasks));
}

/// Intercept plus one factor's main effects at a time; PCV against `model1`.
inline std::vector<ScanRow> single_covariate_scan(const Strata& strata, const MaihdaModelResult& model1, Method method = Method::reml) {
    std::vector<std::function<ScanRow()>> tasks;
    for (std::size_t f = 0; f < strata.factors.size(); ++f) {
        const auto& name = strata.factors[f].name();
        tasks.emplace_back([&strata, &model1, f, name, method] {
            const auto design = main_effects_design(strata.index, strata.factors, {f});
            return detail::scan_fit(strata, name, {name}, "single:" + name, design, method, model1);
        });
    }
    return detail::run_scan(std::move(tasks));
}

// -------------------------------------------------------------------------
// Cross-cohort comparison
// -------------------------------------------------------------------------

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw UsageError("pearson: need two equal-length vectors of size >= 2");
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (!(sxx > 0.0) || !(syy > 0.0)) throw NumericalError("correlation undefined for a constant vector");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    return pearson(average_ranks(x), average_ranks(y));
}

enum class CompareQuantity { u_hat, rank };

struct MatchedStratum {
    std::string label;
    double a = 0.0;
    double b = 0.0;
    double difference = 0.0;  // b - a
};

struct CohortComparison {
    std::vector<MatchedStratum> matched;  // ordered by label
    double pearson = 0.0;
    double spearman = 0.0;

    const MatchedStratum& most_negative() const {
        return *std::min_element(matched.begin(), matched.end(), [](auto& l, auto& r) { return l.difference < r.difference; });
    }
    const MatchedStratum& most_positive() const {
        return *std::max_element(matched.begin(), matched.end(), [](auto& l, auto& r) { return l.difference < r.difference; });
    }
};

/// Matches strata by factor-combination label over the rows present in both
/// tables (tables never contain suppressed strata).
inline CohortComparison compare_cohorts(const std::vector<StratumTableRow>& a, const std::vector<StratumTableRow>& b,
                                        CompareQuantity quantity = CompareQuantity::u_hat) {
    auto value = [&](const StratumTableRow& r) { return quantity == CompareQuantity::u_hat ? r.u_hat : r.rank; };
    std::map<std::string, double> in_a;
    for (const auto& r : a) in_a.emplace(r.label, value(r));
    std::map<std::string, double> in_b;
    for (const auto& r : b) in_b.emplace(r.label, value(r));

    CohortComparison cmp;
    for (const auto& [label, va] : in_a) {
        auto it = in_b.find(label);
        if (it == in_b.end()) continue;
        cmp.matched.push_back({label, va, it->second, it->second - va});
    }
    if (cmp.matched.size() < 3) {
        throw DataError("cohort comparison needs at least 3 matched strata, found " + std::to_string(cmp.matched.size()));
    }
    std::vector<double> xa, xb;
    for (const auto& m : cmp.matched) {
        xa.push_back(m.a);
        xb.push_back(m.b);
    }
    cmp.pearson = pearson(xa, xb);
    cmp.spearman = spearman(xa, xb);
    return cmp;
}

inline CohortComparison compare_cohorts(const MaihdaModelResult& result_a, const Strata& strata_a,
                                        const MaihdaModelResult& result_b, const Strata& strata_b,
                                        CompareQuantity quantity = CompareQuantity::u_hat) {
    if (strata_a.factors != strata_b.factors) throw DataError("cohorts were built from different factor definitions");
    const auto order = quantity == CompareQuantity::u_hat ? RankBy::effect : RankBy::predicted_mean;
    return compare_cohorts(stratum_table(result_a, strata_a, order), stratum_table(result_b, strata_b, order), quantity);
}

}  // namespace maihda
