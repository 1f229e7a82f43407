#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>

#include "maihda/error.hpp"
#include "maihda/ingest.hpp"

namespace maihda {

// -------------------------------------------------------------------------
// Outcome transforms
// -------------------------------------------------------------------------

/// z-scores with the sample (n-1) standard deviation.
inline std::vector<double> standardize(const std::vector<double>& values) {
    if (values.size() < 2) throw UsageError("standardize needs at least 2 values");
    const double n = static_cast<double>(values.size());
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / (n - 1.0));
    if (!(sd > 0.0) || !std::isfinite(sd)) throw NumericalError("standardize: zero standard deviation");
    std::vector<double> out;
    out.reserve(values.size());
    for (double v : values) out.push_back((v - mean) / sd);
    return out;
}

/// 1-based ranks, ties get the average of the positions they span.
inline std::vector<double> average_ranks(const std::vector<double>& values) {
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] < values[b]; });
    std::vector<double> ranks(values.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t k = i;
        while (k + 1 < order.size() && values[order[k + 1]] == values[order[i]]) ++k;
        const double r = 0.5 * static_cast<double>(i + k) + 1.0;
        for (std::size_t m = i; m <= k; ++m) ranks[order[m]] = r;
        i = k + 1;
    }
    return ranks;
}

/// Blom rank-based inverse normal scores: Phi^-1((r - 3/8) / (n + 1/4)).
inline std::vector<double> normal_scores(const std::vector<double>& values) {
    if (values.size() < 2) throw UsageError("normal_scores needs at least 2 values");
    const auto ranks = average_ranks(values);
    const double n = static_cast<double>(values.size());
    const boost::math::normal_distribution<double> unit;
    std::vector<double> out;
    out.reserve(values.size());
    for (double r : ranks) {
        const double p = (r - 0.375) / (n + 0.25);
        // quantile(0.5) is exact zero only up to rounding; keep the median exact.
        out.push_back(p == 0.5 ? 0.0 : boost::math::quantile(unit, p));
    }
    return out;
}

enum class Normalization { none, blom };

/// Outcome preparation used by the pipeline: optional normalization first,
/// then z-standardization.
inline std::vector<double> prepare_outcomes(const std::vector<double>& y, Normalization normalize, bool standardize_after = true) {
    std::vector<double> out = normalize == Normalization::blom ? normal_scores(y) : y;
    if (standardize_after) out = standardize(out);
    return out;
}

// -------------------------------------------------------------------------
// Stratum-level design matrices
// -------------------------------------------------------------------------

struct DesignColumn {
    enum class Kind { intercept, main, interaction };
    Kind kind = Kind::intercept;
    std::string name;
    // Factor/level pairs encoded by the column: one for main effects, two for interactions.
    std::vector<std::pair<std::string, std::string>> terms;
};

/// J x p matrix of stratum-level predictors; row j describes stratum j.
struct DesignMatrix {
    std::vector<DesignColumn> columns;
    Eigen::MatrixXd values;

    Eigen::Index rows() const { return values.rows(); }
    Eigen::Index cols() const { return values.cols(); }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        for (const auto& c : columns) out.push_back(c.name);
        return out;
    }
};

inline std::string main_column_name(const FactorSpec& f, std::size_t level) { return f.name() + ":" + f.label(level); }

inline DesignMatrix intercept_design(std::size_t strata) {
    DesignMatrix d;
    d.columns.push_back({DesignColumn::Kind::intercept, "intercept", {}});
    d.values = Eigen::MatrixXd::Ones(static_cast<Eigen::Index>(strata), 1);
    return d;
}

/// Intercept plus reference-coded dummies for the given factors (all of the
/// index's factors when `subset` is empty).
inline DesignMatrix main_effects_design(const StratumIndex& index, const std::vector<FactorSpec>& factors,
                                        const std::vector<std::size_t>& subset = {}) {
    std::vector<std::size_t> use = subset;
    if (use.empty()) {
        use.resize(factors.size());
        std::iota(use.begin(), use.end(), std::size_t{0});
    }
    DesignMatrix d = intercept_design(index.count());
    std::size_t p = 1;
    for (auto f : use) p += factors.at(f).size() - 1;
    d.values.conservativeResize(Eigen::NoChange, static_cast<Eigen::Index>(p));

    Eigen::Index col = 1;
    for (auto f : use) {
        const auto& factor = factors[f];
        for (auto level : factor.dummy_levels()) {
            d.columns.push_back({DesignColumn::Kind::main, main_column_name(factor, level), {{factor.name(), factor.label(level)}}});
            for (std::size_t j = 0; j < index.count(); ++j) {
                d.values(static_cast<Eigen::Index>(j), col) = index.keys[j].at(f) == level ? 1.0 : 0.0;
            }
            ++col;
        }
    }
    return d;
}

/// Appends product dummies for every non-reference level pair of two factors
/// already present as main effects.
inline DesignMatrix with_interaction(const DesignMatrix& design, const std::string& factor_a, const std::string& factor_b) {
    if (factor_a == factor_b) throw UsageError("interaction needs two distinct factors, got '" + factor_a + "' twice");
    auto main_cols = [&](const std::string& name) {
        std::vector<Eigen::Index> out;
        for (std::size_t c = 0; c < design.columns.size(); ++c) {
            const auto& col = design.columns[c];
            if (col.kind == DesignColumn::Kind::main && col.terms.front().first == name) out.push_back(static_cast<Eigen::Index>(c));
        }
        if (out.empty()) throw UsageError("factor '" + name + "' has no main-effect columns in the design");
        return out;
    };
    const auto cols_a = main_cols(factor_a);
    const auto cols_b = main_cols(factor_b);

    DesignMatrix d = design;
    Eigen::Index col = d.cols();
    d.values.conservativeResize(Eigen::NoChange, col + static_cast<Eigen::Index>(cols_a.size() * cols_b.size()));
    for (auto a : cols_a) {
        for (auto b : cols_b) {
            const auto& ta = design.columns[static_cast<std::size_t>(a)].terms.front();
            const auto& tb = design.columns[static_cast<std::size_t>(b)].terms.front();
            d.columns.push_back({DesignColumn::Kind::interaction,
                                 ta.first + ":" + ta.second + "*" + tb.first + ":" + tb.second,
                                 {ta, tb}});
            d.values.col(col) = design.values.col(a).cwiseProduct(design.values.col(b));
            ++col;
        }
    }
    return d;
}

/// All unordered factor pairs (a < b) in declaration order.
inline std::vector<std::pair<std::size_t, std::size_t>> factor_pairs(std::size_t factor_count) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t a = 0; a < factor_count; ++a)
        for (std::size_t b = a + 1; b < factor_count; ++b) out.emplace_back(a, b);
    return out;
}

/// Names of columns that are linear combinations of the columns before them.
/// Empty result means full column rank.
inline std::vector<std::string> collinear_columns(const DesignMatrix& design, double tol = 1e-9) {
    std::vector<std::string> out;
    std::vector<Eigen::Index> kept;
    for (Eigen::Index c = 0; c < design.cols(); ++c) {
        Eigen::MatrixXd sub(design.rows(), static_cast<Eigen::Index>(kept.size()) + 1);
        for (std::size_t k = 0; k < kept.size(); ++k) sub.col(static_cast<Eigen::Index>(k)) = design.values.col(kept[k]);
        sub.col(sub.cols() - 1) = design.values.col(c);
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(sub);
        qr.setThreshold(tol);
        if (qr.rank() == sub.cols()) {
            kept.push_back(c);
        } else {
            out.push_back(design.columns[static_cast<std::size_t>(c)].name);
        }
    }
    return out;
}

/// Expands a stratum-level design to one row per unit.
inline Eigen::MatrixXd unit_design(const DesignMatrix& design, const StratumIndex& index) {
    Eigen::MatrixXd X(static_cast<Eigen::Index>(index.row_assignment.size()), design.cols());
    for (std::size_t i = 0; i < index.row_assignment.size(); ++i) {
        X.row(static_cast<Eigen::Index>(i)) = design.values.row(static_cast<Eigen::Index>(index.row_assignment[i]));
    }
    return X;
}

}  // namespace maihda
