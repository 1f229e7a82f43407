#pragma once

// Synthetic cohorts with known truth. Every factor combination becomes a
// stratum. Random numbers come from std::mt19937_64 (fully specified by the
// standard, so streams are identical across platforms); uniforms take the top
// 53 bits and normals use the basic Box-Muller transform, consuming two
// uniforms per pair of variates.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "maihda/error.hpp"
#include "maihda/ingest.hpp"
#include "maihda/transform.hpp"

namespace maihda {

class NormalGenerator {
public:
    explicit NormalGenerator(std::uint64_t seed) : engine_(seed) {}

    /// Uniform on (0, 1].
    double uniform() {
        return (static_cast<double>(engine_() >> 11) + 1.0) * 0x1.0p-53;
    }

    double normal() {
        if (cached_) {
            const double z = *cached_;
            cached_.reset();
            return z;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        cached_ = r * std::sin(angle);
        return r * std::cos(angle);
    }

private:
    std::mt19937_64 engine_;
    std::optional<double> cached_;
};

struct SizeRange {
    std::size_t min = 11;
    std::size_t max = 4000;  // sizes are log-uniform on [min, max]
};

struct InjectedInteraction {
    std::string factor_a;
    std::string level_a;
    std::string factor_b;
    std::string level_b;
    double shift = 0.0;  // outcome units, added to every stratum with both levels
};

struct SimConfig {
    std::vector<FactorSpec> factors;
    std::variant<SizeRange, std::vector<std::size_t>> stratum_sizes = SizeRange{};
    std::vector<double> true_beta;  // main-effects design order; empty = all zero, shorter = zero-padded
    double true_sigma2_u = 0.0;
    double true_sigma2_e = 1.0;
    std::vector<InjectedInteraction> interactions;
    std::uint64_t seed = 1;
    std::string cohort_label = "simulated";
};

struct SimOutput {
    CohortDataset dataset;
    std::vector<StratumKey> keys;       // every combination, lexicographic
    std::vector<double> fixed_means;    // x_j' beta + injected shifts
    std::vector<double> random_effects; // drawn u_j
    std::vector<std::size_t> sizes;
};

namespace detail {

inline std::vector<StratumKey> all_combinations(const std::vector<FactorSpec>& factors) {
    std::vector<StratumKey> out;
    StratumKey key(factors.size(), 0);
    while (true) {
        out.push_back(key);
        std::size_t f = factors.size();
        while (f > 0) {
            --f;
            if (++key[f] < factors[f].size()) break;
            key[f] = 0;
            if (f == 0) return out;
        }
        if (factors.empty()) return out;
    }
}

struct ResolvedInteraction {
    std::size_t fa, la, fb, lb;
    double shift;
};

inline std::vector<ResolvedInteraction> resolve(const SimConfig& cfg) {
    auto factor_index = [&](const std::string& name) {
        for (std::size_t f = 0; f < cfg.factors.size(); ++f)
            if (cfg.factors[f].name() == name) return f;
        throw UsageError("interaction references unknown factor '" + name + "'");
    };
    std::vector<ResolvedInteraction> out;
    for (const auto& ia : cfg.interactions) {
        const auto fa = factor_index(ia.factor_a);
        const auto fb = factor_index(ia.factor_b);
        if (fa == fb) throw UsageError("interaction needs two distinct factors");
        const auto la = cfg.factors[fa].find(ia.level_a);
        const auto lb = cfg.factors[fb].find(ia.level_b);
        if (!la) throw UsageError("factor '" + ia.factor_a + "' has no category '" + ia.level_a + "'");
        if (!lb) throw UsageError("factor '" + ia.factor_b + "' has no category '" + ia.level_b + "'");
        out.push_back({fa, *la, fb, *lb, ia.shift});
    }
    return out;
}

}  // namespace detail

inline SimOutput generate_with_truth(const SimConfig& cfg) {
    if (cfg.factors.empty()) throw UsageError("simulation needs at least one factor");
    if (!(cfg.true_sigma2_u >= 0.0) || !(cfg.true_sigma2_e >= 0.0)) throw UsageError("variances must be non-negative");
    const auto interactions = detail::resolve(cfg);

    SimOutput out;
    out.keys = detail::all_combinations(cfg.factors);
    const std::size_t J = out.keys.size();

    StratumIndex full;
    full.keys = out.keys;
    const DesignMatrix design = main_effects_design(full, cfg.factors);
    if (cfg.true_beta.size() > static_cast<std::size_t>(design.cols())) {
        throw UsageError("true_beta has " + std::to_string(cfg.true_beta.size()) + " entries, design has " +
                         std::to_string(design.cols()) + " columns");
    }
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(design.cols());
    for (std::size_t k = 0; k < cfg.true_beta.size(); ++k) beta(static_cast<Eigen::Index>(k)) = cfg.true_beta[k];
    const Eigen::VectorXd xb = design.values * beta;

    NormalGenerator rng(cfg.seed);

    if (const auto* explicit_sizes = std::get_if<std::vector<std::size_t>>(&cfg.stratum_sizes)) {
        if (explicit_sizes->size() != J) {
            throw UsageError("expected " + std::to_string(J) + " stratum sizes, got " + std::to_string(explicit_sizes->size()));
        }
        out.sizes = *explicit_sizes;
    } else {
        const auto range = std::get<SizeRange>(cfg.stratum_sizes);
        if (range.min < 1 || range.max < range.min) throw UsageError("invalid stratum size range");
        const double lo = std::log(static_cast<double>(range.min));
        const double hi = std::log(static_cast<double>(range.max) + 1.0);
        for (std::size_t j = 0; j < J; ++j) {
            auto n = static_cast<std::size_t>(std::exp(lo + (hi - lo) * rng.uniform()));
            out.sizes.push_back(std::clamp(n, range.min, range.max));
        }
    }
    for (auto n : out.sizes)
        if (n < 1) throw UsageError("stratum sizes must be at least 1");

    out.fixed_means.resize(J);
    for (std::size_t j = 0; j < J; ++j) {
        double m = xb(static_cast<Eigen::Index>(j));
        for (const auto& ia : interactions) {
            if (out.keys[j][ia.fa] == ia.la && out.keys[j][ia.fb] == ia.lb) m += ia.shift;
        }
        out.fixed_means[j] = m;
    }

    const double sd_u = std::sqrt(cfg.true_sigma2_u);
    const double sd_e = std::sqrt(cfg.true_sigma2_e);
    out.random_effects.resize(J);
    for (std::size_t j = 0; j < J; ++j) out.random_effects[j] = sd_u * rng.normal();

    auto& ds = out.dataset;
    ds.cohort_label = cfg.cohort_label;
    ds.factors = cfg.factors;
    std::size_t total = 0;
    for (auto n : out.sizes) total += n;
    ds.rows.reserve(total);
    std::size_t unit = 0;
    for (std::size_t j = 0; j < J; ++j) {
        const double mean = out.fixed_means[j] + out.random_effects[j];
        for (std::size_t i = 0; i < out.sizes[j]; ++i) {
            ds.rows.push_back({std::to_string(++unit), out.keys[j], mean + sd_e * rng.normal()});
        }
    }
    return out;
}

inline CohortDataset generate(const SimConfig& cfg) { return generate_with_truth(cfg).dataset; }

}  // namespace maihda
