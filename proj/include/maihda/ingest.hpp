#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "maihda/csv.hpp"
#include "maihda/error.hpp"

namespace maihda {

// -------------------------------------------------------------------------
// Factors
// -------------------------------------------------------------------------

/// A categorical stratum-defining factor. Category order fixes both stratum
/// enumeration and which dummy columns exist; the reference category gets
/// no dummy.
class FactorSpec {
public:
    FactorSpec() = default;

    FactorSpec(std::string name, std::vector<std::string> categories,
               std::optional<std::string> reference = std::nullopt)
        : name_(std::move(name)), categories_(std::move(categories)) {
        if (name_.empty()) throw UsageError("factor name must be non-empty");
        if (categories_.size() < 2) {
            throw UsageError("factor '" + name_ + "' needs at least 2 categories");
        }
        for (std::size_t i = 0; i < categories_.size(); ++i) {
            if (categories_[i].empty()) {
                throw UsageError("factor '" + name_ + "' has an empty category label");
            }
            for (std::size_t k = 0; k < i; ++k) {
                if (categories_[k] == categories_[i]) {
                    throw UsageError("factor '" + name_ + "' repeats category '" + categories_[i] + "'");
                }
            }
        }
        if (reference) {
            auto idx = find(*reference);
            if (!idx) {
                throw UsageError("reference '" + *reference + "' is not a category of factor '" + name_ + "'");
            }
            reference_ = *idx;
        }
    }

    const std::string& name() const { return name_; }
    const std::vector<std::string>& categories() const { return categories_; }
    std::size_t size() const { return categories_.size(); }
    std::size_t reference_index() const { return reference_; }
    const std::string& reference() const { return categories_[reference_]; }
    const std::string& label(std::size_t level) const { return categories_.at(level); }

    std::optional<std::size_t> find(std::string_view label) const {
        for (std::size_t i = 0; i < categories_.size(); ++i) {
            if (categories_[i] == label) return i;
        }
        return std::nullopt;
    }

    /// Non-reference levels in category order; one dummy column each.
    std::vector<std::size_t> dummy_levels() const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < categories_.size(); ++i) {
            if (i != reference_) out.push_back(i);
        }
        return out;
    }

    friend bool operator==(const FactorSpec&, const FactorSpec&) = default;

private:
    std::string name_;
    std::vector<std::string> categories_;
    std::size_t reference_ = 0;
};

namespace detail {

inline std::string trim(std::string_view s) {
    const auto* ws = " \t\r\n";
    const auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(ws);
    return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(sep, start);
        out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

inline std::optional<double> parse_double(std::string_view s) {
    double value = 0.0;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    if (first != last && *first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr != last || first == last) return std::nullopt;
    return value;
}

}  // namespace detail

/// Parses the factor declaration format:
///
///     # comment
///     term   = Autumn, Spring, Summer
///     fsm    = No, Yes ; ref = No
///
/// Each key is a CSV column name; the value lists categories in order,
/// optionally followed by `; ref = <label>`. Declaration order is factor order.
inline std::vector<FactorSpec> parse_factor_config(std::istream& in, const std::string& source = "<config>") {
    std::vector<FactorSpec> factors;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const auto body = detail::trim(line);
        if (body.empty()) continue;

        const auto where = source + ":" + std::to_string(lineno) + ": ";
        const auto eq = body.find('=');
        if (eq == std::string::npos) throw DataError(where + "expected 'column = categories'");
        auto key = detail::trim(std::string_view(body).substr(0, eq));
        if (key.empty()) throw DataError(where + "missing column name");

        auto parts = detail::split(std::string_view(body).substr(eq + 1), ';');
        auto categories = detail::split(parts[0], ',');
        std::optional<std::string> reference;
        for (std::size_t i = 1; i < parts.size(); ++i) {
            const auto opt_eq = parts[i].find('=');
            if (opt_eq == std::string::npos) throw DataError(where + "expected 'ref = <label>' after ';'");
            const auto opt = detail::trim(std::string_view(parts[i]).substr(0, opt_eq));
            if (opt != "ref" && opt != "reference") throw DataError(where + "unknown option '" + opt + "'");
            reference = detail::trim(std::string_view(parts[i]).substr(opt_eq + 1));
        }
        for (const auto& f : factors) {
            if (f.name() == key) throw DataError(where + "factor '" + key + "' declared twice");
        }
        try {
            factors.emplace_back(key, std::move(categories), reference);
        } catch (const UsageError& e) {
            throw DataError(where + e.what());
        }
    }
    if (factors.empty()) throw DataError(source + ": no factors declared");
    return factors;
}

inline std::vector<FactorSpec> load_factor_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config file: " + path);
    return parse_factor_config(in, path);
}

// -------------------------------------------------------------------------
// Cohort data
// -------------------------------------------------------------------------

struct CohortRow {
    std::string unit_id;
    std::vector<std::size_t> levels;  // category index per factor
    double outcome = 0.0;
};

struct CohortDataset {
    std::string cohort_label;
    std::vector<FactorSpec> factors;
    std::vector<CohortRow> rows;
    std::size_t rejected_rows = 0;

    std::size_t size() const { return rows.size(); }

    std::vector<double> outcomes() const {
        std::vector<double> y;
        y.reserve(rows.size());
        for (const auto& r : rows) y.push_back(r.outcome);
        return y;
    }

    /// Copy with outcomes replaced; rows keep their order.
    CohortDataset with_outcomes(const std::vector<double>& y) const {
        if (y.size() != rows.size()) throw UsageError("outcome vector length does not match dataset");
        CohortDataset out = *this;
        for (std::size_t i = 0; i < y.size(); ++i) out.rows[i].outcome = y[i];
        return out;
    }
};

struct DatasetSchema {
    std::string outcome = "y";
    std::optional<std::string> id_column;
};

namespace detail {

inline bool is_missing(std::string_view s) { return s.empty() || s == "NA" || s == "."; }

}  // namespace detail

/// Builds a dataset from a parsed CSV table. Rows with a missing factor or
/// outcome cell are rejected and counted; unknown labels and non-numeric
/// outcomes are errors.
inline CohortDataset dataset_from_table(const csv::Table& table, const DatasetSchema& schema,
                                        const std::vector<FactorSpec>& factors, std::string cohort_label = "cohort") {
    auto column = [&](const std::string& name) -> std::size_t {
        auto it = std::find(table.header.begin(), table.header.end(), name);
        if (it == table.header.end()) throw DataError("missing column '" + name + "'");
        return static_cast<std::size_t>(it - table.header.begin());
    };

    const std::size_t outcome_col = column(schema.outcome);
    std::optional<std::size_t> id_col;
    if (schema.id_column) id_col = column(*schema.id_column);
    std::vector<std::size_t> factor_cols;
    for (const auto& f : factors) factor_cols.push_back(column(f.name()));

    CohortDataset ds;
    ds.cohort_label = std::move(cohort_label);
    ds.factors = factors;
    ds.rows.reserve(table.records.size());

    for (std::size_t r = 0; r < table.records.size(); ++r) {
        const auto& rec = table.records[r];
        const auto row_tag = "row " + std::to_string(r + 1) + " (line " + std::to_string(table.line_numbers[r]) + ")";
        if (rec.size() != table.header.size()) {
            throw DataError(row_tag + ": expected " + std::to_string(table.header.size()) + " fields, found " +
                            std::to_string(rec.size()));
        }

        bool missing = detail::is_missing(detail::trim(rec[outcome_col]));
        for (auto c : factor_cols) missing = missing || detail::is_missing(detail::trim(rec[c]));
        if (missing) {
            ++ds.rejected_rows;
            continue;
        }

        CohortRow row;
        row.unit_id = id_col ? rec[*id_col] : std::to_string(r + 1);
        for (std::size_t f = 0; f < factors.size(); ++f) {
            const auto label = detail::trim(rec[factor_cols[f]]);
            auto level = factors[f].find(label);
            if (!level) {
                throw DataError(row_tag + ", column '" + factors[f].name() + "': unknown category '" + label + "'");
            }
            row.levels.push_back(*level);
        }
        const auto text = detail::trim(rec[outcome_col]);
        auto value = detail::parse_double(text);
        if (!value) {
            throw DataError(row_tag + ", column '" + schema.outcome + "': non-numeric outcome '" + text + "'");
        }
        if (!std::isfinite(*value)) {
            throw DataError(row_tag + ", column '" + schema.outcome + "': non-finite outcome '" + text + "'");
        }
        row.outcome = *value;
        ds.rows.push_back(std::move(row));
    }
    return ds;
}

inline CohortDataset load_dataset(const std::string& path, const DatasetSchema& schema,
                                  const std::vector<FactorSpec>& factors, std::string cohort_label = "cohort") {
    return dataset_from_table(csv::read_file(path), schema, factors, std::move(cohort_label));
}

/// Writes the dataset in the format `load_dataset` reads: id, factors..., outcome.
inline void write_dataset(const std::string& path, const CohortDataset& ds, const DatasetSchema& schema,
                          int precision = 17) {
    csv::Record header{schema.id_column.value_or("id")};
    for (const auto& f : ds.factors) header.push_back(f.name());
    header.push_back(schema.outcome);

    std::vector<csv::Record> records;
    records.reserve(ds.rows.size());
    char buf[64];
    for (const auto& row : ds.rows) {
        csv::Record rec{row.unit_id};
        for (std::size_t f = 0; f < ds.factors.size(); ++f) rec.push_back(ds.factors[f].label(row.levels[f]));
        std::snprintf(buf, sizeof buf, "%.*g", precision, row.outcome);
        rec.emplace_back(buf);
        records.push_back(std::move(rec));
    }
    csv::write_file(path, header, records);
}

// -------------------------------------------------------------------------
// Strata
// -------------------------------------------------------------------------

using StratumKey = std::vector<std::size_t>;

/// Observed factor combinations. Ids are 0-based positions in `keys`, which
/// are sorted lexicographically by category index; user-facing output adds 1.
struct StratumIndex {
    std::vector<StratumKey> keys;
    std::map<StratumKey, std::size_t> ids;
    std::vector<std::size_t> row_assignment;

    std::size_t count() const { return keys.size(); }
};

inline StratumIndex build_strata(const CohortDataset& ds) {
    StratumIndex index;
    for (const auto& row : ds.rows) {
        if (row.levels.size() != ds.factors.size()) throw UsageError("row does not match factor list");
        index.ids.emplace(row.levels, 0);
    }
    index.keys.reserve(index.ids.size());
    std::size_t next = 0;
    for (auto& [key, id] : index.ids) {
        id = next++;
        index.keys.push_back(key);
    }
    index.row_assignment.reserve(ds.rows.size());
    for (const auto& row : ds.rows) index.row_assignment.push_back(index.ids.at(row.levels));
    return index;
}

/// Human-readable stratum label, e.g. "Autumn|Male|No|No|White".
inline std::string stratum_label(const std::vector<FactorSpec>& factors, const StratumKey& key, char sep = '|') {
    std::string out;
    for (std::size_t f = 0; f < factors.size(); ++f) {
        if (f) out.push_back(sep);
        out += factors[f].label(key[f]);
    }
    return out;
}

struct StratumSummary {
    std::size_t stratum_id = 0;  // 0-based
    std::size_t n = 0;
    double sum_y = 0.0;
    double sum_y2 = 0.0;
    double mean_y = 0.0;
    double ss_within = 0.0;  // sum of squared deviations from mean_y
    bool suppressed = false;
};

inline constexpr std::size_t kDefaultSuppressionThreshold = 10;

inline std::vector<StratumSummary> summarize_strata(const CohortDataset& ds, const StratumIndex& index,
                                                    std::size_t suppression_threshold = kDefaultSuppressionThreshold) {
    if (index.row_assignment.size() != ds.rows.size()) throw UsageError("stratum index built from a different dataset");
    std::vector<StratumSummary> out(index.count());
    for (std::size_t j = 0; j < out.size(); ++j) out[j].stratum_id = j;
    for (std::size_t i = 0; i < ds.rows.size(); ++i) {
        auto& s = out[index.row_assignment[i]];
        const double y = ds.rows[i].outcome;
        ++s.n;
        s.sum_y += y;
        s.sum_y2 += y * y;
    }
    for (auto& s : out) {
        s.mean_y = s.sum_y / static_cast<double>(s.n);
        s.suppressed = s.n < suppression_threshold;
    }
    for (std::size_t i = 0; i < ds.rows.size(); ++i) {
        auto& s = out[index.row_assignment[i]];
        const double d = ds.rows[i].outcome - s.mean_y;
        s.ss_within += d * d;
    }
    return out;
}

}  // namespace maihda
