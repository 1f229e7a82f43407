#pragma once

// Machine-readable reports (JSON) and tables / plot data (CSV). Reported
// numbers carry 6 significant digits; full-precision copies live under "raw".

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>
#include <openssl/evp.h>

#include "maihda/csv.hpp"
#include "maihda/error.hpp"
#include "maihda/maihda.hpp"

namespace maihda::report {

using nlohmann::ordered_json;

inline constexpr const char* kToolVersion = "1.0.0";

inline double sig6(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return std::strtod(buf, nullptr);
}

inline std::string fmt6(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

inline std::string sha256_hex(std::string_view bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("sha256 digest failed");
    }
    std::ostringstream out;
    for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
    return out.str();
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write file: " + path);
    out << text;
}

inline void write_json(const std::string& path, const ordered_json& doc) { write_text(path, doc.dump(2) + "\n"); }

// -------------------------------------------------------------------------
// Model blocks
// -------------------------------------------------------------------------

inline ordered_json optional_number(const std::optional<double>& v, bool round = true) {
    if (!v) return nullptr;
    return round ? sig6(*v) : *v;
}

inline ordered_json stratum_row_json(const StratumTableRow& r, const std::vector<FactorSpec>& factors) {
    ordered_json labels = ordered_json::object();
    for (std::size_t f = 0; f < factors.size(); ++f) labels[factors[f].name()] = r.labels[f];
    return {{"id", r.stratum_id},
            {"label", r.label},
            {"factors", labels},
            {"n", r.n},
            {"observed_mean", sig6(r.observed_mean)},
            {"predicted_mean", sig6(r.predicted_mean)},
            {"u_hat", sig6(r.u_hat)},
            {"se", sig6(r.se)},
            {"ci_low", sig6(r.ci_low)},
            {"ci_high", sig6(r.ci_high)},
            {"rank", r.rank},
            {"significant", r.significant},
            {"meaningful", r.meaningful}};
}

struct ModelBlockOptions {
    std::vector<double> benchmarks;
    std::size_t top = 10;
    double meaningful_threshold = 0.1;
    bool include_strata = true;
};

inline ordered_json model_block(const MaihdaModelResult& m, const Strata& strata, const ModelBlockOptions& opt = {}) {
    const auto& f = m.fit;
    ordered_json coefficients = ordered_json::array();
    ordered_json raw_coefficients = ordered_json::array();
    for (std::size_t k = 0; k < f.fixed.names.size(); ++k) {
        const auto i = static_cast<Eigen::Index>(k);
        coefficients.push_back({{"name", f.fixed.names[k]},
                                {"estimate", sig6(f.fixed.estimates(i))},
                                {"se", sig6(f.fixed.standard_errors(i))}});
        raw_coefficients.push_back({{"name", f.fixed.names[k]},
                                    {"estimate", f.fixed.estimates(i)},
                                    {"se", f.fixed.standard_errors(i)}});
    }

    ordered_json block;
    block["tag"] = m.tag;
    block["method"] = method_name(f.method);
    block["converged"] = f.converged;
    block["at_boundary"] = f.at_boundary;
    block["iterations"] = f.iterations;
    block["n_units"] = f.n_units;
    block["n_strata"] = f.n_strata;
    block["deviance"] = sig6(f.deviance);
    block["coefficients"] = coefficients;
    block["variance"] = {
        {"stratum", {{"estimate", sig6(f.vc.sigma2_u)}, {"se", optional_number(f.vc_standard_errors.sigma2_u)}}},
        {"unit", {{"estimate", sig6(f.vc.sigma2_e)}, {"se", optional_number(f.vc_standard_errors.sigma2_e)}}}};
    block["vpc"] = sig6(m.vpc);
    if (m.pcv_vs) {
        block["pcv"] = {{"baseline", m.pcv_vs->baseline}, {"value", sig6(m.pcv_vs->value)}};
    } else {
        block["pcv"] = nullptr;
    }

    const auto table = stratum_table(m, strata, m.tag == "model1" ? RankBy::predicted_mean : RankBy::effect,
                                     opt.meaningful_threshold);
    block["suppressed_count"] = strata.suppressed_count();
    block["reported_strata"] = table.size();
    std::size_t meaningful = 0;
    for (const auto& r : table) meaningful += r.meaningful ? 1 : 0;
    block["share_significant"] = sig6(share_significant(table));
    block["share_meaningful"] = table.empty() ? 0.0 : sig6(static_cast<double>(meaningful) / static_cast<double>(table.size()));

    ordered_json benchmarks = ordered_json::array();
    if (!table.empty()) {
        std::vector<double> means;
        for (const auto& r : table) means.push_back(r.predicted_mean);
        for (double t : opt.benchmarks) {
            benchmarks.push_back({{"threshold", t}, {"quantity", "predicted_mean"}, {"share", sig6(benchmark_share(means, t))}});
        }
    }
    block["benchmarks"] = benchmarks;

    ordered_json top = ordered_json::array(), bottom = ordered_json::array();
    for (const auto& r : top_k(table, opt.top)) top.push_back(r.stratum_id);
    for (const auto& r : bottom_k(table, opt.top)) bottom.push_back(r.stratum_id);
    block["top"] = top;
    block["bottom"] = bottom;

    if (opt.include_strata) {
        ordered_json rows = ordered_json::array();
        for (const auto& r : table) rows.push_back(stratum_row_json(r, strata.factors));
        block["strata"] = rows;
    }

    ordered_json raw;
    raw["coefficients"] = raw_coefficients;
    raw["sigma2_u"] = f.vc.sigma2_u;
    raw["sigma2_e"] = f.vc.sigma2_e;
    raw["vpc"] = m.vpc;
    raw["pcv"] = m.pcv_vs ? ordered_json(m.pcv_vs->value) : ordered_json(nullptr);
    raw["deviance"] = f.deviance;
    if (opt.include_strata) {
        ordered_json rows = ordered_json::array();
        for (const auto& r : table) {
            rows.push_back({{"id", r.stratum_id}, {"predicted_mean", r.predicted_mean}, {"u_hat", r.u_hat}, {"se", r.se}});
        }
        raw["strata"] = rows;
    }
    block["raw"] = raw;
    return block;
}

inline ordered_json scan_block(const std::vector<ScanRow>& rows, const std::string& kind, const std::string& baseline) {
    ordered_json out;
    out["kind"] = kind;
    out["baseline"] = baseline;
    ordered_json table = ordered_json::array();
    for (const auto& r : rows) {
        ordered_json row;
        row["term"] = r.label;
        row["status"] = r.status;
        if (r.ok) {
            row["sigma2_u"] = sig6(r.result->fit.vc.sigma2_u);
            row["vpc"] = sig6(r.vpc());
            row["pcv"] = optional_number(r.pcv());
            row["converged"] = r.result->fit.converged;
            row["raw"] = {{"sigma2_u", r.result->fit.vc.sigma2_u},
                          {"vpc", r.vpc()},
                          {"pcv", r.pcv() ? ordered_json(*r.pcv()) : ordered_json(nullptr)}};
        } else {
            row["sigma2_u"] = nullptr;
            row["vpc"] = nullptr;
            row["pcv"] = nullptr;
        }
        table.push_back(row);
    }
    out["rows"] = table;
    return out;
}

inline ordered_json ols_block(const std::string& tag, const OlsResult& r) {
    ordered_json coefficients = ordered_json::array(), raw = ordered_json::array();
    for (std::size_t k = 0; k < r.names.size(); ++k) {
        const auto i = static_cast<Eigen::Index>(k);
        coefficients.push_back({{"name", r.names[k]}, {"estimate", sig6(r.estimates(i))}, {"se", sig6(r.standard_errors(i))}});
        raw.push_back({{"name", r.names[k]}, {"estimate", r.estimates(i)}, {"se", r.standard_errors(i)}});
    }
    return {{"tag", tag},
            {"coefficients", coefficients},
            {"residual_variance", {{"estimate", sig6(r.residual_variance)}, {"se", sig6(r.residual_variance_se)}}},
            {"df", r.df},
            {"raw", {{"coefficients", raw}, {"residual_variance", r.residual_variance}}}};
}

inline ordered_json comparison_block(const CohortComparison& c, const std::string& model, const std::string& quantity) {
    ordered_json matched = ordered_json::array();
    for (const auto& m : c.matched) {
        matched.push_back({{"label", m.label}, {"a", sig6(m.a)}, {"b", sig6(m.b)}, {"difference", sig6(m.difference)}});
    }
    auto mover = [](const MatchedStratum& m) {
        return ordered_json{{"label", m.label}, {"difference", sig6(m.difference)}};
    };
    return {{"model", model},
            {"quantity", quantity},
            {"n_matched", c.matched.size()},
            {"pearson", sig6(c.pearson)},
            {"spearman", sig6(c.spearman)},
            {"most_negative", mover(c.most_negative())},
            {"most_positive", mover(c.most_positive())},
            {"matched", matched},
            {"raw", {{"pearson", c.pearson}, {"spearman", c.spearman}}}};
}

// -------------------------------------------------------------------------
// Reading reports back (for cross-cohort comparison)
// -------------------------------------------------------------------------

/// Stratum rows of one model block of a saved report. Full-precision values
/// from "raw" are used where present.
inline std::vector<StratumTableRow> table_from_report(const ordered_json& doc, const std::string& model_tag) {
    if (!doc.contains("models") || !doc["models"].is_array()) throw DataError("report has no 'models' array");
    for (const auto& block : doc["models"]) {
        if (block.value("tag", "") != model_tag) continue;
        if (!block.contains("strata")) throw DataError("model '" + model_tag + "' has no stratum table");
        std::map<std::size_t, ordered_json> raw;
        if (block.contains("raw") && block["raw"].contains("strata")) {
            for (const auto& r : block["raw"]["strata"]) raw[r.at("id").get<std::size_t>()] = r;
        }
        std::vector<StratumTableRow> rows;
        for (const auto& s : block["strata"]) {
            StratumTableRow row;
            row.stratum_id = s.at("id").get<std::size_t>();
            row.label = s.at("label").get<std::string>();
            row.n = s.at("n").get<std::size_t>();
            row.predicted_mean = s.at("predicted_mean").get<double>();
            row.u_hat = s.at("u_hat").get<double>();
            row.se = s.at("se").get<double>();
            row.ci_low = s.at("ci_low").get<double>();
            row.ci_high = s.at("ci_high").get<double>();
            row.rank = s.at("rank").get<double>();
            row.significant = s.at("significant").get<bool>();
            if (auto it = raw.find(row.stratum_id); it != raw.end()) {
                row.predicted_mean = it->second.at("predicted_mean").get<double>();
                row.u_hat = it->second.at("u_hat").get<double>();
                row.se = it->second.at("se").get<double>();
            }
            rows.push_back(std::move(row));
        }
        return rows;
    }
    throw DataError("report has no model tagged '" + model_tag + "'");
}

inline ordered_json load_report(const std::string& path) {
    const auto text = read_file(path);
    try {
        return ordered_json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path + ": invalid JSON report: " + e.what());
    }
}

// -------------------------------------------------------------------------
// CSV tables and plot data
// -------------------------------------------------------------------------

inline void write_stratum_table(const std::string& path, const std::vector<StratumTableRow>& table,
                                const std::vector<FactorSpec>& factors) {
    csv::Record header{"stratum_id", "label"};
    for (const auto& f : factors) header.push_back(f.name());
    for (const char* h : {"n", "observed_mean", "predicted_mean", "u_hat", "se", "ci_low", "ci_high", "rank", "significant"}) {
        header.emplace_back(h);
    }
    std::vector<csv::Record> records;
    for (const auto& r : table) {
        csv::Record rec{std::to_string(r.stratum_id), r.label};
        rec.insert(rec.end(), r.labels.begin(), r.labels.end());
        rec.push_back(std::to_string(r.n));
        for (double v : {r.observed_mean, r.predicted_mean, r.u_hat, r.se, r.ci_low, r.ci_high, r.rank}) rec.push_back(fmt6(v));
        rec.emplace_back(r.significant ? "1" : "0");
        records.push_back(std::move(rec));
    }
    csv::write_file(path, header, records);
}

inline void write_coefficients(const std::string& path, const std::vector<std::pair<std::string, const FitResult*>>& fits) {
    csv::Record header{"model", "term", "estimate", "se"};
    std::vector<csv::Record> records;
    for (const auto& [tag, f] : fits) {
        for (std::size_t k = 0; k < f->fixed.names.size(); ++k) {
            const auto i = static_cast<Eigen::Index>(k);
            records.push_back({tag, f->fixed.names[k], fmt6(f->fixed.estimates(i)), fmt6(f->fixed.standard_errors(i))});
        }
        auto se = [](const std::optional<double>& v) { return v ? fmt6(*v) : std::string("NA"); };
        records.push_back({tag, "sigma2_u", fmt6(f->vc.sigma2_u), se(f->vc_standard_errors.sigma2_u)});
        records.push_back({tag, "sigma2_e", fmt6(f->vc.sigma2_e), se(f->vc_standard_errors.sigma2_e)});
    }
    csv::write_file(path, header, records);
}

struct CaterpillarPoint {
    double rank = 0.0;
    double estimate = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
};

/// Ranked estimates with 95% bars. Model 1 plots predicted stratum means,
/// other models plot u_j.
inline std::vector<CaterpillarPoint> caterpillar_points(const std::vector<StratumTableRow>& table, bool predicted_means) {
    std::vector<CaterpillarPoint> out;
    for (const auto& r : table) {
        const double est = predicted_means ? r.predicted_mean : r.u_hat;
        out.push_back({r.rank, est, est - kZ95 * r.se, est + kZ95 * r.se});
    }
    return out;
}

inline void write_caterpillar(const std::string& path, const std::vector<CaterpillarPoint>& points) {
    std::vector<csv::Record> records;
    for (const auto& p : points) records.push_back({fmt6(p.rank), fmt6(p.estimate), fmt6(p.ci_low), fmt6(p.ci_high)});
    csv::write_file(path, {"rank", "estimate", "ci_low", "ci_high"}, records);
}

/// Shrunken versus raw stratum residuals by stratum size.
inline void write_shrinkage_scatter(const std::string& path, const MaihdaModelResult& m, const Strata& strata) {
    std::vector<csv::Record> records;
    for (std::size_t j = 0; j < strata.summaries.size(); ++j) {
        if (strata.summaries[j].suppressed) continue;
        const auto& e = m.effects[j];
        records.push_back({std::to_string(j + 1), std::to_string(e.n), fmt6(e.raw_residual_mean), fmt6(e.u_hat),
                           fmt6(e.u_hat - e.raw_residual_mean)});
    }
    csv::write_file(path, {"stratum_id", "n", "raw_residual", "u_hat", "difference"}, records);
}

inline void write_comparison_scatter(const std::string& path, const CohortComparison& c) {
    std::vector<csv::Record> records;
    for (const auto& m : c.matched) records.push_back({m.label, fmt6(m.a), fmt6(m.b), fmt6(m.difference)});
    csv::write_file(path, {"label", "a", "b", "difference"}, records);
}

/// Minimal SVG caterpillar plot.
inline std::string caterpillar_svg(const std::vector<CaterpillarPoint>& points, const std::string& title,
                                   double reference_line = std::numeric_limits<double>::quiet_NaN()) {
    const double width = 800, height = 400, margin = 40;
    double lo = 0.0, hi = 0.0;
    if (!points.empty()) {
        lo = points.front().ci_low;
        hi = points.front().ci_high;
    }
    for (const auto& p : points) {
        lo = std::min(lo, p.ci_low);
        hi = std::max(hi, p.ci_high);
    }
    if (hi <= lo) hi = lo + 1.0;
    const double n = std::max<double>(1.0, static_cast<double>(points.size()));
    auto x = [&](double rank) { return margin + (rank - 0.5) / n * (width - 2 * margin); };
    auto y = [&](double v) { return height - margin - (v - lo) / (hi - lo) * (height - 2 * margin); };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
    svg << "<text x=\"" << margin << "\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">" << title << "</text>\n";
    svg << "<line x1=\"" << margin << "\" y1=\"" << height - margin << "\" x2=\"" << width - margin << "\" y2=\""
        << height - margin << "\" stroke=\"black\"/>\n";
    if (std::isfinite(reference_line) && reference_line >= lo && reference_line <= hi) {
        svg << "<line x1=\"" << margin << "\" y1=\"" << y(reference_line) << "\" x2=\"" << width - margin << "\" y2=\""
            << y(reference_line) << "\" stroke=\"gray\" stroke-dasharray=\"4 4\"/>\n";
    }
    for (const auto& p : points) {
        svg << "<line x1=\"" << x(p.rank) << "\" y1=\"" << y(p.ci_low) << "\" x2=\"" << x(p.rank) << "\" y2=\""
            << y(p.ci_high) << "\" stroke=\"steelblue\"/>\n";
        svg << "<circle cx=\"" << x(p.rank) << "\" cy=\"" << y(p.estimate) << "\" r=\"2\" fill=\"black\"/>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

}  // namespace maihda::report
