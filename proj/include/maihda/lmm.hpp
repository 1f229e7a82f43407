#pragma once

// Two-level random-intercept linear mixed model
//
//     y_ij = x_j' beta + u_j + e_ij,   u_j ~ N(0, s2u),  e_ij ~ N(0, s2e)
//
// with stratum-level covariates only. Each stratum's covariance block is
// s2e*I + s2u*11', whose inverse and determinant have closed forms, so every
// quantity below needs only (n_j, mean_j, within-SS_j) per stratum and the
// cost of one deviance evaluation is O(J p^2), independent of the unit count.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "maihda/error.hpp"
#include "maihda/ingest.hpp"
#include "maihda/transform.hpp"

namespace maihda {

enum class Method { reml, ml };

inline const char* method_name(Method m) { return m == Method::reml ? "REML" : "ML"; }

struct VarianceComponents {
    double sigma2_u = 0.0;  // between strata
    double sigma2_e = 1.0;  // within strata
};

struct FixedEffects {
    std::vector<std::string> names;
    Eigen::VectorXd estimates;
    Eigen::MatrixXd covariance;
    Eigen::VectorXd standard_errors;
};

struct VcStandardErrors {
    std::optional<double> sigma2_u;  // unavailable at the boundary
    std::optional<double> sigma2_e;
};

struct FitResult {
    Method method = Method::reml;
    VarianceComponents vc;
    VcStandardErrors vc_standard_errors;
    FixedEffects fixed;
    Eigen::VectorXd linear_predictor;  // x_j' beta per stratum
    double deviance = 0.0;
    bool converged = false;
    bool at_boundary = false;
    int iterations = 0;
    Eigen::Vector2d gradient = Eigen::Vector2d::Zero();  // d deviance / d(log sd_u, log sd_e)
    std::size_t n_units = 0;
    std::size_t n_strata = 0;
};

struct StratumEffect {
    std::size_t stratum_id = 0;
    std::size_t n = 0;
    double u_hat = 0.0;
    double se_u = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    double predicted_mean = 0.0;
    double raw_residual_mean = 0.0;
    double shrinkage_factor = 0.0;
};

inline constexpr double kZ95 = 1.96;

struct FitOptions {
    Method method = Method::reml;
    int max_iterations = 200;
    double relative_tolerance = 1e-10;  // on the deviance change between iterations
    double gradient_tolerance = 1e-6;   // max |d deviance / d log sd|
};

// -------------------------------------------------------------------------
// Sufficient statistics and deviance evaluation
// -------------------------------------------------------------------------

namespace detail {

struct StratumData {
    Eigen::VectorXd n;
    Eigen::VectorXd mean;
    Eigen::VectorXd ss_within;
    Eigen::MatrixXd X;
    std::vector<std::string> names;
    double n_total = 0.0;
    double ss_within_total = 0.0;

    Eigen::Index strata() const { return X.rows(); }
    Eigen::Index p() const { return X.cols(); }
};

inline StratumData stratum_data(const std::vector<StratumSummary>& summaries, const DesignMatrix& design) {
    if (static_cast<Eigen::Index>(summaries.size()) != design.rows()) {
        throw UsageError("design has " + std::to_string(design.rows()) + " rows but there are " +
                         std::to_string(summaries.size()) + " strata");
    }
    StratumData d;
    const auto J = design.rows();
    d.n.resize(J);
    d.mean.resize(J);
    d.ss_within.resize(J);
    d.X = design.values;
    d.names = design.names();
    for (Eigen::Index j = 0; j < J; ++j) {
        const auto& s = summaries[static_cast<std::size_t>(j)];
        if (s.n == 0) throw UsageError("stratum with no observations");
        d.n(j) = static_cast<double>(s.n);
        d.mean(j) = s.mean_y;
        d.ss_within(j) = std::max(0.0, s.ss_within);
    }
    d.n_total = d.n.sum();
    d.ss_within_total = d.ss_within.sum();
    return d;
}

struct Evaluation {
    double deviance = 0.0;
    Eigen::Vector2d gradient = Eigen::Vector2d::Zero();  // d/d(s2u), d/d(s2e)
    Eigen::VectorXd beta;
    Eigen::MatrixXd covariance;  // (X'V^-1X)^-1
    bool ok = false;
};

inline Evaluation evaluate(const StratumData& d, double s2u, double s2e, Method method, bool with_gradient) {
    Evaluation ev;
    const Eigen::VectorXd denom = (d.n * s2u).array() + s2e;  // s2e + n_j s2u
    const Eigen::VectorXd w = d.n.cwiseQuotient(denom);       // 1' V_j^-1 1

    const Eigen::MatrixXd A = d.X.transpose() * w.asDiagonal() * d.X;
    const Eigen::VectorXd b = d.X.transpose() * w.cwiseProduct(d.mean);
    Eigen::LLT<Eigen::MatrixXd> llt(A);
    if (llt.info() != Eigen::Success) return ev;
    ev.beta = llt.solve(b);
    const Eigen::VectorXd resid = d.mean - d.X * ev.beta;

    const double J = static_cast<double>(d.strata());
    const double p = static_cast<double>(d.p());
    const double log_det_v = (d.n_total - J) * std::log(s2e) + denom.array().log().sum();
    const double quad = d.ss_within_total / s2e + (w.array() * resid.array().square()).sum();

    const double log2pi = std::log(2.0 * std::numbers::pi);
    if (method == Method::reml) {
        double log_det_a = 0.0;
        const Eigen::MatrixXd& L = llt.matrixL();
        for (Eigen::Index i = 0; i < L.rows(); ++i) log_det_a += 2.0 * std::log(L(i, i));
        ev.deviance = (d.n_total - p) * log2pi + log_det_v + log_det_a + quad;
    } else {
        ev.deviance = d.n_total * log2pi + log_det_v + quad;
    }

    ev.covariance = llt.solve(Eigen::MatrixXd::Identity(d.p(), d.p()));
    if (with_gradient) {
        // dD/dtheta = tr(P dV) - y'P dV P y, with dV = blockdiag(11') for s2u
        // and I for s2e. tr(P dV) = tr(V^-1 dV) - tr(A^-1 X'V^-1 dV V^-1 X).
        const Eigen::VectorXd w2 = w.cwiseProduct(w);
        const Eigen::VectorXd wd2 = w2.cwiseProduct(resid.cwiseProduct(resid));
        double grad_u = w.sum() - wd2.sum();
        double grad_e = (d.n_total - J) / s2e + denom.cwiseInverse().sum() - d.ss_within_total / (s2e * s2e) -
                        wd2.cwiseQuotient(d.n).sum();
        if (method == Method::reml) {
            const Eigen::VectorXd h = (d.X * ev.covariance).cwiseProduct(d.X).rowwise().sum();  // x_j' A^-1 x_j
            grad_u -= w2.dot(h);
            grad_e -= w2.cwiseQuotient(d.n).dot(h);
        }
        ev.gradient = {grad_u, grad_e};
    }
    ev.ok = std::isfinite(ev.deviance);
    return ev;
}

struct LogScale {
    const StratumData& data;
    Method method;

    static double s2(double log_sd) { return std::exp(2.0 * log_sd); }

    Evaluation at(const Eigen::Vector2d& s, bool with_gradient = true) const {
        const double a = s2(s(0));
        const double e = s2(s(1));
        Evaluation ev = evaluate(data, a, e, method, with_gradient);
        ev.gradient = {2.0 * a * ev.gradient(0), 2.0 * e * ev.gradient(1)};
        return ev;
    }

    // Central differences of the analytic gradient.
    Eigen::Matrix2d hessian(const Eigen::Vector2d& s, double h = 1e-4) const {
        Eigen::Matrix2d H;
        for (int k = 0; k < 2; ++k) {
            Eigen::Vector2d up = s, down = s;
            up(k) += h;
            down(k) -= h;
            H.col(k) = (at(up).gradient - at(down).gradient) / (2.0 * h);
        }
        return 0.5 * (H + H.transpose());
    }
};

inline void require_fittable(const StratumData& d, const DesignMatrix& design) {
    if (d.strata() <= d.p()) {
        throw NumericalError("need more strata than fixed effects: J = " + std::to_string(d.strata()) +
                             ", p = " + std::to_string(d.p()));
    }
    const auto collinear = collinear_columns(design);
    if (!collinear.empty()) {
        std::string names;
        for (const auto& c : collinear) names += (names.empty() ? "" : ", ") + c;
        throw NumericalError("rank-deficient design; collinear columns: " + names);
    }
    if (!(d.ss_within_total > 0.0)) {
        throw NumericalError("no within-stratum variation; within-stratum variance is not identifiable");
    }
}

}  // namespace detail

/// -2 log-likelihood (ML) or -2 restricted log-likelihood (REML) at the given
/// variance components, with beta profiled out by GLS.
inline double profiled_deviance(const std::vector<StratumSummary>& summaries, const DesignMatrix& design,
                                const VarianceComponents& vc, Method method = Method::reml) {
    if (!(vc.sigma2_e > 0.0)) throw UsageError("sigma2_e must be positive");
    if (vc.sigma2_u < 0.0) throw UsageError("sigma2_u must be non-negative");
    const auto data = detail::stratum_data(summaries, design);
    const auto ev = detail::evaluate(data, vc.sigma2_u, vc.sigma2_e, method, false);
    if (!ev.ok) throw NumericalError("singular X'V^-1X");
    return ev.deviance;
}

/// Gradient of the profiled deviance with respect to (sigma2_u, sigma2_e).
inline Eigen::Vector2d profiled_deviance_gradient(const std::vector<StratumSummary>& summaries, const DesignMatrix& design,
                                                  const VarianceComponents& vc, Method method = Method::reml) {
    const auto data = detail::stratum_data(summaries, design);
    const auto ev = detail::evaluate(data, vc.sigma2_u, vc.sigma2_e, method, true);
    if (!ev.ok) throw NumericalError("singular X'V^-1X");
    return ev.gradient;
}

/// beta = (X'V^-1X)^-1 X'V^-1 y. With stratum-level covariates this reduces to
/// weighted least squares on stratum means with w_j = n_j / (s2e + n_j s2u).
inline FixedEffects gls_fixed_effects(const std::vector<StratumSummary>& summaries, const DesignMatrix& design,
                                      const VarianceComponents& vc) {
    if (!(vc.sigma2_e > 0.0) || vc.sigma2_u < 0.0) throw UsageError("invalid variance components");
    const auto data = detail::stratum_data(summaries, design);
    const auto ev = detail::evaluate(data, vc.sigma2_u, vc.sigma2_e, Method::ml, false);
    if (!ev.ok) throw NumericalError("singular X'V^-1X");
    FixedEffects fe;
    fe.names = data.names;
    fe.estimates = ev.beta;
    fe.covariance = ev.covariance;
    fe.standard_errors = ev.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
    return fe;
}

/// Variance-component SEs from the observed information in (log sd_u, log sd_e),
/// mapped to the variance scale with the delta method: SE(s2) = 2 s2 SE(log sd).
inline VcStandardErrors vc_standard_errors(const std::vector<StratumSummary>& summaries, const DesignMatrix& design,
                                           const FitResult& fit) {
    VcStandardErrors out;
    const auto data = detail::stratum_data(summaries, design);
    const detail::LogScale f{data, fit.method};
    const double e = fit.vc.sigma2_e;
    if (fit.at_boundary || !(fit.vc.sigma2_u > 0.0)) {
        // s2u pinned at zero: one-dimensional information for log sd_e.
        const double h = 1e-4;
        auto grad_e = [&](double log_sd_e) {
            const double s2e = std::exp(2.0 * log_sd_e);
            return 2.0 * s2e * detail::evaluate(data, 0.0, s2e, fit.method, true).gradient(1);
        };
        const double s = 0.5 * std::log(e);
        const double hee = (grad_e(s + h) - grad_e(s - h)) / (2.0 * h);
        if (hee > 0.0) out.sigma2_e = 2.0 * e * std::sqrt(2.0 / hee);
        return out;
    }
    const Eigen::Vector2d s{0.5 * std::log(fit.vc.sigma2_u), 0.5 * std::log(e)};
    const Eigen::Matrix2d H = f.hessian(s);
    Eigen::LLT<Eigen::Matrix2d> llt(H);
    if (llt.info() != Eigen::Success) return out;
    const Eigen::Matrix2d cov = 2.0 * llt.solve(Eigen::Matrix2d::Identity());
    out.sigma2_u = 2.0 * fit.vc.sigma2_u * std::sqrt(cov(0, 0));
    out.sigma2_e = 2.0 * e * std::sqrt(cov(1, 1));
    return out;
}

/// Minimizes the profiled deviance over s2u >= 0, s2e > 0. Newton steps in
/// (log sd_u, log sd_e) with a backtracking line search; the s2u = 0 boundary
/// (closed-form s2e) is compared against the interior optimum.
inline FitResult fit(const std::vector<StratumSummary>& summaries, const DesignMatrix& design,
                     const FitOptions& options = {}) {
    const auto data = detail::stratum_data(summaries, design);
    detail::require_fittable(data, design);
    const detail::LogScale f{data, options.method};
    const double J = static_cast<double>(data.strata());
    const double p = static_cast<double>(data.p());

    // Boundary candidate: s2u = 0 gives OLS on units, s2e = RSS / df.
    const auto ols_eval = detail::evaluate(data, 0.0, 1.0, Method::ml, false);
    const Eigen::VectorXd ols_resid = data.mean - data.X * ols_eval.beta;
    const double rss = data.ss_within_total + data.n.dot(ols_resid.cwiseProduct(ols_resid));
    const double boundary_e = rss / (options.method == Method::reml ? data.n_total - p : data.n_total);
    const auto boundary = detail::evaluate(data, 0.0, boundary_e, options.method, true);

    // Moment-based start.
    const double e0 = data.n_total > J ? data.ss_within_total / (data.n_total - J) : boundary_e;
    const double mbar = data.mean.mean();
    const double var_means = (data.mean.array() - mbar).square().sum() / (J - 1.0);
    const double n_bar = data.n_total / J;
    const double a0 = std::max({var_means - e0 / n_bar, 0.1 * var_means, 1e-4 * e0});

    auto newton = [&](Eigen::Vector2d s, int& iterations, bool& converged) {
        auto cur = f.at(s);
        converged = false;
        for (; iterations < options.max_iterations;) {
            ++iterations;
            Eigen::Matrix2d H = f.hessian(s);
            Eigen::Vector2d step;
            double mu = 0.0;
            for (int tries = 0; tries < 60; ++tries) {
                Eigen::LLT<Eigen::Matrix2d> llt(H + mu * Eigen::Matrix2d::Identity());
                if (llt.info() == Eigen::Success) {
                    step = -llt.solve(cur.gradient);
                    if (step.allFinite()) break;
                }
                mu = mu == 0.0 ? 1e-6 * std::max(1.0, H.diagonal().cwiseAbs().maxCoeff()) : mu * 10.0;
            }
            const double len = step.norm();
            if (len > 3.0) step *= 3.0 / len;

            const double slope = cur.gradient.dot(step);
            double t = 1.0;
            detail::Evaluation next;
            bool accepted = false;
            for (int k = 0; k < 60; ++k, t *= 0.5) {
                next = f.at(s + t * step);
                if (next.ok && next.deviance <= cur.deviance + 1e-4 * t * slope) {
                    accepted = true;
                    break;
                }
            }
            if (!accepted) {
                converged = cur.gradient.cwiseAbs().maxCoeff() < options.gradient_tolerance;
                break;
            }
            const double change = std::abs(cur.deviance - next.deviance) / std::max(1.0, std::abs(next.deviance));
            s += t * step;
            cur = next;
            if (change < options.relative_tolerance && cur.gradient.cwiseAbs().maxCoeff() < options.gradient_tolerance) {
                converged = true;
                break;
            }
            // Drifting onto the boundary: log sd_u -> -inf.
            if (detail::LogScale::s2(s(0)) < 1e-14 * detail::LogScale::s2(s(1))) break;
        }
        return std::pair{s, cur};
    };

    int iterations = 0;
    bool interior_converged = false;
    auto [s, interior] = newton(Eigen::Vector2d{0.5 * std::log(a0), 0.5 * std::log(e0)}, iterations, interior_converged);

    // A descent direction into the interior from the boundary means an
    // interior optimum exists; restart from a well-separated point if the first
    // run drifted away from it.
    const bool boundary_is_kkt = boundary.gradient(0) >= 0.0;
    if (!boundary_is_kkt && !interior_converged) {
        int more = 0;
        auto [s2, again] = newton(Eigen::Vector2d{0.5 * std::log(e0), 0.5 * std::log(e0)}, more, interior_converged);
        iterations += more;
        s = s2;
        interior = again;
    }

    FitResult result;
    result.method = options.method;
    result.n_units = static_cast<std::size_t>(data.n_total);
    result.n_strata = static_cast<std::size_t>(data.strata());
    result.iterations = iterations;

    const double a_int = detail::LogScale::s2(s(0));
    const bool take_boundary = !interior.ok || boundary.deviance <= interior.deviance ||
                               a_int < 1e-12 * detail::LogScale::s2(s(1));
    detail::Evaluation chosen;
    if (take_boundary) {
        result.at_boundary = true;
        result.vc = {0.0, boundary_e};
        chosen = boundary;
        // Projected gradient: s2u may only increase, s2e is at its closed form.
        result.gradient = {0.0, 2.0 * boundary_e * boundary.gradient(1)};
        result.converged = boundary_is_kkt ||
                           (interior.ok && interior_converged && boundary.deviance <= interior.deviance);
    } else {
        result.vc = {a_int, detail::LogScale::s2(s(1))};
        chosen = interior;
        result.gradient = interior.gradient;
        result.converged = interior_converged;
    }
    result.deviance = chosen.deviance;
    result.fixed.names = data.names;
    result.fixed.estimates = chosen.beta;
    result.fixed.covariance = chosen.covariance;
    result.fixed.standard_errors = chosen.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
    result.linear_predictor = data.X * chosen.beta;
    result.vc_standard_errors = vc_standard_errors(summaries, design, result);
    return result;
}

/// Empirical Bayes predictions u_j = lambda_j (mean_j - x_j'beta) with
/// lambda_j = s2u / (s2u + s2e / n_j) and comparative SE sqrt(s2u (1 - lambda_j)).
inline std::vector<StratumEffect> eb_predict(const FitResult& fit, const std::vector<StratumSummary>& summaries) {
    if (static_cast<Eigen::Index>(summaries.size()) != fit.linear_predictor.size()) {
        throw UsageError("summaries do not match the fitted strata");
    }
    const double a = fit.vc.sigma2_u;
    const double e = fit.vc.sigma2_e;
    std::vector<StratumEffect> out;
    out.reserve(summaries.size());
    for (std::size_t j = 0; j < summaries.size(); ++j) {
        const auto& s = summaries[j];
        StratumEffect eff;
        eff.stratum_id = s.stratum_id;
        eff.n = s.n;
        const double xb = fit.linear_predictor(static_cast<Eigen::Index>(j));
        eff.raw_residual_mean = s.mean_y - xb;
        eff.shrinkage_factor = a > 0.0 ? a / (a + e / static_cast<double>(s.n)) : 0.0;
        eff.u_hat = eff.shrinkage_factor * eff.raw_residual_mean;
        eff.se_u = std::sqrt(std::max(0.0, a * (1.0 - eff.shrinkage_factor)));
        eff.ci_low = eff.u_hat - kZ95 * eff.se_u;
        eff.ci_high = eff.u_hat + kZ95 * eff.se_u;
        eff.predicted_mean = xb + eff.u_hat;
        out.push_back(eff);
    }
    return out;
}

// -------------------------------------------------------------------------
// Single-level comparator
// -------------------------------------------------------------------------

struct OlsResult {
    std::vector<std::string> names;
    Eigen::VectorXd estimates;
    Eigen::VectorXd standard_errors;
    Eigen::MatrixXd covariance;
    double rss = 0.0;
    double df = 0.0;
    double residual_variance = 0.0;     // rss / (n - p)
    double residual_variance_se = 0.0;  // s2 sqrt(2 / (n - p))
};

namespace detail {

inline void finish_ols(OlsResult& r, const Eigen::MatrixXd& xtx_inv, double n, double p) {
    r.df = n - p;
    r.residual_variance = r.rss / r.df;
    r.residual_variance_se = r.residual_variance * std::sqrt(2.0 / r.df);
    r.covariance = r.residual_variance * xtx_inv;
    r.standard_errors = r.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
}

}  // namespace detail

/// OLS on unit-level rows.
inline OlsResult ols_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, std::vector<std::string> names) {
    if (X.rows() != y.size()) throw UsageError("X and y disagree on the number of rows");
    if (X.rows() <= X.cols()) throw NumericalError("OLS needs more rows than columns");
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    qr.setThreshold(1e-10);
    if (qr.rank() < X.cols()) throw NumericalError("rank-deficient design in OLS");
    OlsResult r;
    r.names = std::move(names);
    r.estimates = qr.solve(y);
    r.rss = (y - X * r.estimates).squaredNorm();
    const Eigen::MatrixXd xtx = X.transpose() * X;
    detail::finish_ols(r, xtx.ldlt().solve(Eigen::MatrixXd::Identity(X.cols(), X.cols())),
                       static_cast<double>(X.rows()), static_cast<double>(X.cols()));
    return r;
}

/// OLS on the unit-level expansion of a stratum-level design, from sufficient
/// statistics: X'X = sum n_j x_j x_j', X'y = sum n_j mean_j x_j.
inline OlsResult ols_fit(const std::vector<StratumSummary>& summaries, const DesignMatrix& design) {
    const auto data = detail::stratum_data(summaries, design);
    if (data.n_total <= static_cast<double>(data.p())) throw NumericalError("OLS needs more units than columns");
    if (!collinear_columns(design).empty()) throw NumericalError("rank-deficient design in OLS");
    const Eigen::MatrixXd xtx = data.X.transpose() * data.n.asDiagonal() * data.X;
    const Eigen::VectorXd xty = data.X.transpose() * data.n.cwiseProduct(data.mean);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(xtx);
    OlsResult r;
    r.names = data.names;
    r.estimates = ldlt.solve(xty);
    const Eigen::VectorXd resid = data.mean - data.X * r.estimates;
    r.rss = data.ss_within_total + data.n.dot(resid.cwiseProduct(resid));
    detail::finish_ols(r, ldlt.solve(Eigen::MatrixXd::Identity(data.p(), data.p())), data.n_total,
                       static_cast<double>(data.p()));
    return r;
}

}  // namespace maihda
