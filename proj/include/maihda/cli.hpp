#pragma once

// Command-line driver. `run` is the whole program so tests can call it
// in-process. Exit codes: 0 ok, 1 usage, 2 data, 3 numerical.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "maihda/error.hpp"
#include "maihda/ingest.hpp"
#include "maihda/lmm.hpp"
#include "maihda/maihda.hpp"
#include "maihda/report.hpp"
#include "maihda/sim.hpp"
#include "maihda/transform.hpp"

namespace maihda::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

using report::ordered_json;

struct DataOptions {
    std::string data;
    std::string config;
    std::string outcome = "y";
    std::string id_column;
    std::string cohort = "cohort";
    std::string normalize = "none";
    bool raw_outcome = false;
    std::string method = "reml";
    std::size_t suppress = kDefaultSuppressionThreshold;
    std::optional<std::uint64_t> seed;
    std::string out = ".";
};

struct Loaded {
    CohortDataset dataset;
    Strata strata;
    Method method = Method::reml;
    ordered_json metadata;
};

inline void add_data_flags(CLI::App* cmd, DataOptions& o) {
    cmd->add_option("--data", o.data, "CSV file with a header row")->required();
    cmd->add_option("--config", o.config, "factor declaration file")->required();
    cmd->add_option("--outcome", o.outcome, "outcome column")->capture_default_str();
    cmd->add_option("--id", o.id_column, "unit id column (default: row number)");
    cmd->add_option("--cohort", o.cohort, "cohort label")->capture_default_str();
    cmd->add_option("--normalize", o.normalize, "rank-based normalization before standardizing")
        ->check(CLI::IsMember({"none", "blom"}))
        ->capture_default_str();
    cmd->add_flag("--raw-outcome", o.raw_outcome, "skip z-standardization of the outcome");
    cmd->add_option("--method", o.method, "variance component estimator")
        ->check(CLI::IsMember({"reml", "ml"}))
        ->capture_default_str();
    cmd->add_option("--suppress", o.suppress, "hide strata with fewer units from reports")->capture_default_str();
    cmd->add_option("--seed", o.seed, "seed recorded in the report metadata");
    cmd->add_option("--out", o.out, "output directory")->capture_default_str();
}

inline Loaded load(const DataOptions& o, const std::string& command, std::ostream& err) {
    if (!std::filesystem::exists(o.data)) throw DataError("data file not found: " + o.data);
    if (!std::filesystem::exists(o.config)) throw DataError("config file not found: " + o.config);

    Loaded l;
    const auto config_text = report::read_file(o.config);
    std::istringstream config_stream(config_text);
    const auto factors = parse_factor_config(config_stream, o.config);
    DatasetSchema schema{o.outcome, o.id_column.empty() ? std::nullopt : std::optional<std::string>(o.id_column)};
    l.dataset = load_dataset(o.data, schema, factors, o.cohort);
    if (l.dataset.rejected_rows > 0) {
        err << "maihda: rejected " << l.dataset.rejected_rows << " row(s) with missing values\n";
    }
    if (l.dataset.size() < 2) throw DataError("need at least 2 complete rows, found " + std::to_string(l.dataset.size()));
    const auto norm = o.normalize == "blom" ? Normalization::blom : Normalization::none;
    if (norm != Normalization::none || !o.raw_outcome) {
        l.dataset = l.dataset.with_outcomes(prepare_outcomes(l.dataset.outcomes(), norm, !o.raw_outcome));
    }
    l.strata = make_strata(l.dataset, o.suppress);
    l.method = o.method == "ml" ? Method::ml : Method::reml;

    auto& m = l.metadata;
    m["tool"] = "maihda";
    m["version"] = report::kToolVersion;
    m["command"] = command;
    m["cohort"] = o.cohort;
    m["outcome"] = o.outcome;
    m["normalize"] = o.normalize;
    m["standardize"] = !o.raw_outcome;
    m["method"] = method_name(l.method);
    m["suppression_threshold"] = o.suppress;
    m["seed"] = o.seed ? ordered_json(*o.seed) : ordered_json(nullptr);
    m["config_digest"] = report::sha256_hex(config_text);
    m["data_digest"] = report::sha256_hex(report::read_file(o.data));
    ordered_json fj = ordered_json::array();
    for (const auto& f : factors) {
        fj.push_back({{"name", f.name()}, {"categories", f.categories()}, {"reference", f.reference()}});
    }
    m["factors"] = fj;
    m["n_units"] = l.dataset.size();
    m["rejected_rows"] = l.dataset.rejected_rows;
    m["n_strata"] = l.strata.index.count();
    m["suppressed_strata"] = l.strata.suppressed_count();
    return l;
}

inline std::string out_path(const std::string& dir, const std::string& name) {
    std::filesystem::create_directories(dir);
    return (std::filesystem::path(dir) / name).string();
}

// -------------------------------------------------------------------------
// fit
// -------------------------------------------------------------------------

struct FitFlags {
    DataOptions data;
    std::vector<double> benchmarks;
    std::vector<std::string> plots;
    bool svg = false;
    std::size_t top = 10;
    double meaningful = 0.1;
};

inline int cmd_fit(const FitFlags& flags, std::ostream& out, std::ostream& err) {
    auto l = load(flags.data, "fit", err);
    ordered_json meta = l.metadata;
    meta["benchmarks"] = flags.benchmarks;
    meta["meaningful_threshold"] = flags.meaningful;
    meta["top"] = flags.top;

    const auto m1 = fit_model1(l.strata, l.method);
    const auto m2 = fit_model2(l.strata, m1, l.method);

    report::ModelBlockOptions bo{flags.benchmarks, flags.top, flags.meaningful, true};
    ordered_json doc;
    doc["metadata"] = meta;
    doc["models"] = ordered_json::array({report::model_block(m1, l.strata, bo), report::model_block(m2, l.strata, bo)});
    report::write_json(out_path(flags.data.out, "report.json"), doc);

    const auto t1 = stratum_table(m1, l.strata, RankBy::predicted_mean, flags.meaningful);
    const auto t2 = stratum_table(m2, l.strata, RankBy::effect, flags.meaningful);
    report::write_stratum_table(out_path(flags.data.out, "strata_model1.csv"), t1, l.strata.factors);
    report::write_stratum_table(out_path(flags.data.out, "strata_model2.csv"), t2, l.strata.factors);
    report::write_coefficients(out_path(flags.data.out, "coefficients.csv"), {{"model1", &m1.fit}, {"model2", &m2.fit}});

    const auto cat1 = report::caterpillar_points(t1, true);
    const auto cat2 = report::caterpillar_points(t2, false);
    for (const auto& plot : flags.plots) {
        if (plot == "caterpillar") {
            report::write_caterpillar(out_path(flags.data.out, "caterpillar_model1.csv"), cat1);
            report::write_caterpillar(out_path(flags.data.out, "caterpillar_model2.csv"), cat2);
        } else if (plot == "scatter") {
            report::write_shrinkage_scatter(out_path(flags.data.out, "shrinkage_model1.csv"), m1, l.strata);
            report::write_shrinkage_scatter(out_path(flags.data.out, "shrinkage_model2.csv"), m2, l.strata);
        }
    }
    if (flags.svg) {
        report::write_text(out_path(flags.data.out, "caterpillar_model1.svg"),
                           report::caterpillar_svg(cat1, "Model 1: predicted stratum means", m1.fit.fixed.estimates(0)));
        report::write_text(out_path(flags.data.out, "caterpillar_model2.svg"),
                           report::caterpillar_svg(cat2, "Model 2: stratum effects", 0.0));
    }

    for (const auto* m : {&m1, &m2}) {
        if (!m->fit.converged) err << "maihda: warning: " << m->tag << " did not converge\n";
        out << m->tag << ": sigma2_u=" << report::fmt6(m->fit.vc.sigma2_u) << " sigma2_e=" << report::fmt6(m->fit.vc.sigma2_e)
            << " VPC=" << report::fmt6(100.0 * m->vpc) << "%";
        if (m->pcv_vs) out << " PCV=" << report::fmt6(100.0 * m->pcv_vs->value) << "% (vs " << m->pcv_vs->baseline << ")";
        out << "\n";
    }
    out << "suppressed strata: " << l.strata.suppressed_count() << "\n";
    return kOk;
}

// -------------------------------------------------------------------------
// scan
// -------------------------------------------------------------------------

inline int cmd_scan(const DataOptions& o, bool pairs, std::ostream& out, std::ostream& err) {
    auto l = load(o, pairs ? "scan --pairs" : "scan --single", err);
    const auto m1 = fit_model1(l.strata, l.method);
    report::ModelBlockOptions bo;
    bo.include_strata = false;

    ordered_json doc;
    doc["metadata"] = l.metadata;
    std::vector<ScanRow> rows;
    std::string baseline;
    if (pairs) {
        const auto m2 = fit_model2(l.strata, m1, l.method);
        rows = interaction_scan(l.strata, m2, l.method);
        baseline = m2.tag;
        doc["models"] = ordered_json::array({report::model_block(m1, l.strata, bo), report::model_block(m2, l.strata, bo)});
    } else {
        rows = single_covariate_scan(l.strata, m1, l.method);
        baseline = m1.tag;
        doc["models"] = ordered_json::array({report::model_block(m1, l.strata, bo)});
    }
    const std::string kind = pairs ? "pairs" : "single";
    doc["scan"] = report::scan_block(rows, kind, baseline);
    report::write_json(out_path(o.out, "scan_" + kind + ".json"), doc);

    std::vector<csv::Record> records;
    for (const auto& r : rows) {
        if (r.ok) {
            records.push_back({r.label, report::fmt6(r.result->fit.vc.sigma2_u), report::fmt6(r.vpc()),
                               r.pcv() ? report::fmt6(*r.pcv()) : "NA", r.status});
        } else {
            records.push_back({r.label, "NA", "NA", "NA", r.status});
        }
        out << r.label << "\t" << (r.ok ? "VPC=" + report::fmt6(100 * r.vpc()) + "%" : r.status);
        if (r.pcv()) out << "\tPCV=" << report::fmt6(100 * *r.pcv()) << "%";
        out << "\n";
    }
    csv::write_file(out_path(o.out, "scan_" + kind + ".csv"), {"term", "sigma2_u", "vpc", "pcv", "status"}, records);
    return kOk;
}

// -------------------------------------------------------------------------
// simulate
// -------------------------------------------------------------------------

struct SimulateFlags {
    std::string config;
    std::string outcome = "y";
    std::string cohort = "simulated";
    double sigma2_u = 0.32;
    double sigma2_e = 0.766;
    std::vector<double> beta;
    std::size_t min_size = 11;
    std::size_t max_size = 4000;
    std::vector<std::string> interactions;
    std::uint64_t seed = 1;
    std::string out = ".";
};

/// Parses "factor:level*factor:level=shift".
inline InjectedInteraction parse_interaction(const std::string& text) {
    const auto eq = text.rfind('=');
    const auto star = text.find('*');
    if (eq == std::string::npos || star == std::string::npos || star > eq) {
        throw UsageError("interaction must look like 'a:level*b:level=shift', got '" + text + "'");
    }
    auto term = [&](const std::string& s) {
        const auto colon = s.find(':');
        if (colon == std::string::npos) throw UsageError("interaction term needs 'factor:level', got '" + s + "'");
        return std::pair{detail::trim(s.substr(0, colon)), detail::trim(s.substr(colon + 1))};
    };
    const auto [fa, la] = term(text.substr(0, star));
    const auto [fb, lb] = term(text.substr(star + 1, eq - star - 1));
    const auto shift = detail::parse_double(detail::trim(text.substr(eq + 1)));
    if (!shift) throw UsageError("interaction shift is not a number in '" + text + "'");
    return {fa, la, fb, lb, *shift};
}

inline int cmd_simulate(const SimulateFlags& flags, std::ostream& out) {
    if (!std::filesystem::exists(flags.config)) throw DataError("config file not found: " + flags.config);
    const auto config_text = report::read_file(flags.config);
    std::istringstream config_stream(config_text);

    SimConfig cfg;
    cfg.factors = parse_factor_config(config_stream, flags.config);
    cfg.stratum_sizes = SizeRange{flags.min_size, flags.max_size};
    cfg.true_beta = flags.beta;
    cfg.true_sigma2_u = flags.sigma2_u;
    cfg.true_sigma2_e = flags.sigma2_e;
    for (const auto& s : flags.interactions) cfg.interactions.push_back(parse_interaction(s));
    cfg.seed = flags.seed;
    cfg.cohort_label = flags.cohort;

    const auto sim = generate_with_truth(cfg);
    write_dataset(out_path(flags.out, "data.csv"), sim.dataset, DatasetSchema{flags.outcome, std::string("id")});

    ordered_json truth;
    truth["tool"] = "maihda";
    truth["version"] = report::kToolVersion;
    truth["seed"] = flags.seed;
    truth["config_digest"] = report::sha256_hex(config_text);
    ordered_json fj = ordered_json::array();
    for (const auto& f : cfg.factors) fj.push_back({{"name", f.name()}, {"categories", f.categories()}, {"reference", f.reference()}});
    truth["factors"] = fj;
    truth["stratum_sizes"] = {{"min", flags.min_size}, {"max", flags.max_size}, {"distribution", "log-uniform"}};
    truth["beta"] = flags.beta;
    truth["sigma2_u"] = flags.sigma2_u;
    truth["sigma2_e"] = flags.sigma2_e;
    ordered_json ij = ordered_json::array();
    for (const auto& ia : cfg.interactions) {
        ij.push_back({{"factor_a", ia.factor_a}, {"level_a", ia.level_a}, {"factor_b", ia.factor_b}, {"level_b", ia.level_b}, {"shift", ia.shift}});
    }
    truth["interactions"] = ij;
    truth["outcome"] = flags.outcome;
    truth["cohort"] = flags.cohort;
    ordered_json strata = ordered_json::array();
    for (std::size_t j = 0; j < sim.keys.size(); ++j) {
        strata.push_back({{"label", stratum_label(cfg.factors, sim.keys[j])},
                          {"n", sim.sizes[j]},
                          {"fixed_mean", sim.fixed_means[j]},
                          {"u", sim.random_effects[j]}});
    }
    truth["strata"] = strata;
    report::write_json(out_path(flags.out, "truth.json"), truth);
    out << "wrote " << sim.dataset.size() << " rows in " << sim.keys.size() << " strata\n";
    return kOk;
}

// -------------------------------------------------------------------------
// compare
// -------------------------------------------------------------------------

struct CompareFlags {
    std::string report_a;
    std::string report_b;
    std::string model = "model1";
    std::string quantity = "u_hat";
    std::vector<std::string> plots;
    std::string out = ".";
};

inline int cmd_compare(const CompareFlags& flags, std::ostream& out) {
    const auto a = report::table_from_report(report::load_report(flags.report_a), flags.model);
    const auto b = report::table_from_report(report::load_report(flags.report_b), flags.model);
    const auto q = flags.quantity == "rank" ? CompareQuantity::rank : CompareQuantity::u_hat;
    const auto cmp = compare_cohorts(a, b, q);

    ordered_json doc;
    doc["metadata"] = {{"tool", "maihda"},
                       {"version", report::kToolVersion},
                       {"command", "compare"},
                       {"report_a_digest", report::sha256_hex(report::read_file(flags.report_a))},
                       {"report_b_digest", report::sha256_hex(report::read_file(flags.report_b))}};
    doc["comparison"] = report::comparison_block(cmp, flags.model, flags.quantity);
    report::write_json(out_path(flags.out, "comparison.json"), doc);
    for (const auto& p : flags.plots) {
        if (p == "scatter") report::write_comparison_scatter(out_path(flags.out, "comparison_scatter.csv"), cmp);
    }
    out << "matched " << cmp.matched.size() << " strata: pearson=" << report::fmt6(cmp.pearson)
        << " spearman=" << report::fmt6(cmp.spearman) << "\n";
    out << "most negative: " << cmp.most_negative().label << " (" << report::fmt6(cmp.most_negative().difference) << ")\n";
    out << "most positive: " << cmp.most_positive().label << " (" << report::fmt6(cmp.most_positive().difference) << ")\n";
    return kOk;
}

// -------------------------------------------------------------------------
// ols
// -------------------------------------------------------------------------

inline int cmd_ols(const DataOptions& o, std::ostream& out, std::ostream& err) {
    auto l = load(o, "ols", err);
    const auto unadjusted = ols_fit(l.strata.summaries, intercept_design(l.strata.index.count()));
    const auto adjusted = ols_fit(l.strata.summaries, main_effects_design(l.strata.index, l.strata.factors));

    ordered_json doc;
    doc["metadata"] = l.metadata;
    doc["models"] = ordered_json::array({report::ols_block("model1", unadjusted), report::ols_block("model2", adjusted)});
    report::write_json(out_path(o.out, "ols.json"), doc);

    std::vector<csv::Record> records;
    for (const auto& [tag, r] : {std::pair{"model1", &unadjusted}, std::pair{"model2", &adjusted}}) {
        for (std::size_t k = 0; k < r->names.size(); ++k) {
            const auto i = static_cast<Eigen::Index>(k);
            records.push_back({tag, r->names[k], report::fmt6(r->estimates(i)), report::fmt6(r->standard_errors(i))});
        }
        records.push_back({tag, "residual", report::fmt6(r->residual_variance), report::fmt6(r->residual_variance_se)});
    }
    csv::write_file(out_path(o.out, "ols.csv"), {"model", "term", "estimate", "se"}, records);
    out << "model1 intercept=" << report::fmt6(unadjusted.estimates(0)) << " residual=" << report::fmt6(unadjusted.residual_variance)
        << "\nmodel2 intercept=" << report::fmt6(adjusted.estimates(0)) << " residual=" << report::fmt6(adjusted.residual_variance) << "\n";
    return kOk;
}

// -------------------------------------------------------------------------
// entry point
// -------------------------------------------------------------------------

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Intersectional multilevel analysis (MAIHDA) of strata formed by categorical factors"};
    app.name("maihda");
    app.require_subcommand(1);
    app.set_version_flag("--version", report::kToolVersion);

    FitFlags fit_flags;
    auto* fit_cmd = app.add_subcommand("fit", "fit the unadjusted and main-effects models and write reports");
    add_data_flags(fit_cmd, fit_flags.data);
    fit_cmd->add_option("--benchmark", fit_flags.benchmarks, "report the share of strata at or above this value (repeatable)");
    fit_cmd->add_option("--plot", fit_flags.plots, "plot data to write (repeatable)")->check(CLI::IsMember({"caterpillar", "scatter"}));
    fit_cmd->add_flag("--svg", fit_flags.svg, "also render caterpillar plots as SVG");
    fit_cmd->add_option("--top", fit_flags.top, "size of the top/bottom stratum lists")->capture_default_str();
    fit_cmd->add_option("--meaningful", fit_flags.meaningful, "effect size for the 'meaningful' flag")->capture_default_str();

    DataOptions scan_opts;
    bool pairs = false, single = false;
    auto* scan_cmd = app.add_subcommand("scan", "refit with each two-way interaction or each single factor in turn");
    add_data_flags(scan_cmd, scan_opts);
    auto* pairs_flag = scan_cmd->add_flag("--pairs", pairs, "main effects plus each two-way interaction (PCV vs model2)");
    auto* single_flag = scan_cmd->add_flag("--single", single, "each factor's main effects alone (PCV vs model1)");
    pairs_flag->excludes(single_flag);
    single_flag->excludes(pairs_flag);

    SimulateFlags sim_flags;
    auto* sim_cmd = app.add_subcommand("simulate", "generate a synthetic cohort with known truth");
    sim_cmd->add_option("--config", sim_flags.config, "factor declaration file")->required();
    sim_cmd->add_option("--outcome", sim_flags.outcome, "outcome column name")->capture_default_str();
    sim_cmd->add_option("--cohort", sim_flags.cohort, "cohort label")->capture_default_str();
    sim_cmd->add_option("--sigma2-u", sim_flags.sigma2_u, "between-stratum variance")->capture_default_str();
    sim_cmd->add_option("--sigma2-e", sim_flags.sigma2_e, "within-stratum variance")->capture_default_str();
    sim_cmd->add_option("--beta", sim_flags.beta, "main-effects coefficients, intercept first")->delimiter(',');
    sim_cmd->add_option("--min-size", sim_flags.min_size, "smallest stratum")->capture_default_str();
    sim_cmd->add_option("--max-size", sim_flags.max_size, "largest stratum")->capture_default_str();
    sim_cmd->add_option("--interaction", sim_flags.interactions, "inject 'a:level*b:level=shift' (repeatable)");
    sim_cmd->add_option("--seed", sim_flags.seed, "random seed")->capture_default_str();
    sim_cmd->add_option("--out", sim_flags.out, "output directory")->capture_default_str();

    CompareFlags cmp_flags;
    auto* cmp_cmd = app.add_subcommand("compare", "correlate stratum effects across two fit reports");
    cmp_cmd->add_option("report_a", cmp_flags.report_a, "earlier cohort report.json")->required();
    cmp_cmd->add_option("report_b", cmp_flags.report_b, "later cohort report.json")->required();
    cmp_cmd->add_option("--model", cmp_flags.model, "model tag to compare")->capture_default_str();
    cmp_cmd->add_option("--quantity", cmp_flags.quantity, "compared quantity")
        ->check(CLI::IsMember({"u_hat", "rank"}))
        ->capture_default_str();
    cmp_cmd->add_option("--plot", cmp_flags.plots, "plot data to write")->check(CLI::IsMember({"scatter"}));
    cmp_cmd->add_option("--out", cmp_flags.out, "output directory")->capture_default_str();

    DataOptions ols_opts;
    auto* ols_cmd = app.add_subcommand("ols", "single-level regression comparators");
    add_data_flags(ols_cmd, ols_opts);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*fit_cmd) return cmd_fit(fit_flags, out, err);
        if (*scan_cmd) {
            if (!pairs && !single) {
                err << "maihda: error: scan needs --pairs or --single\n";
                return kUsage;
            }
            return cmd_scan(scan_opts, pairs, out, err);
        }
        if (*sim_cmd) return cmd_simulate(sim_flags, out);
        if (*cmp_cmd) return cmd_compare(cmp_flags, out);
        if (*ols_cmd) return cmd_ols(ols_opts, out, err);
    } catch (const UsageError& e) {
        err << "maihda: error: " << e.what() << "\n";
        return kUsage;
    } catch (const DataError& e) {
        err << "maihda: error: " << e.what() << "\n";
        return kData;
    } catch (const NumericalError& e) {
        err << "maihda: error: " << e.what() << "\n";
        return kNumerical;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "maihda: error: " << e.what() << "\n";
        return kData;
    } catch (const std::exception& e) {
        err << "maihda: error: " << e.what() << "\n";
        return kNumerical;
    }
    return kUsage;
}

}  // namespace maihda::cli
