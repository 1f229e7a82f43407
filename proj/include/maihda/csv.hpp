#pragma once

// Minimal RFC 4180 reader/writer: comma separated, double-quote escaping,
// header row required on read.

#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "maihda/error.hpp"

namespace maihda::csv {

using Record = std::vector<std::string>;

struct Table {
    Record header;
    std::vector<Record> records;
    std::vector<std::size_t> line_numbers;  // 1-based source line of each record
};

inline Table read(std::istream& in) {
    Table table;
    Record current;
    std::string field;
    bool in_quotes = false;
    bool field_started = false;
    bool have_header = false;
    std::size_t line = 1;
    std::size_t record_line = 1;

    auto end_record = [&]() {
        current.push_back(field);
        field.clear();
        field_started = false;
        const bool blank = current.size() == 1 && current[0].empty();
        if (!blank) {
            if (!have_header) {
                table.header = std::move(current);
                have_header = true;
            } else {
                table.records.push_back(std::move(current));
                table.line_numbers.push_back(record_line);
            }
        }
        current.clear();
    };

    char c;
    while (in.get(c)) {
        if (in_quotes) {
            if (c == '"') {
                if (in.peek() == '"') {
                    in.get(c);
                    field.push_back('"');
                } else {
                    in_quotes = false;
                }
            } else {
                if (c == '\n') ++line;
                field.push_back(c);
            }
            continue;
        }
        switch (c) {
        case '"':
            if (field_started) {
                throw DataError("line " + std::to_string(line) + ": stray quote inside unquoted field");
            }
            in_quotes = true;
            field_started = true;
            break;
        case ',':
            current.push_back(field);
            field.clear();
            field_started = false;
            break;
        case '\r':
            break;
        case '\n':
            end_record();
            ++line;
            record_line = line;
            break;
        default:
            field.push_back(c);
            field_started = true;
        }
    }
    if (in_quotes) {
        throw DataError("line " + std::to_string(line) + ": unterminated quoted field");
    }
    if (!field.empty() || !current.empty()) end_record();

    // UTF-8 byte order mark on the first header cell
    if (!table.header.empty() && table.header[0].rfind("\xEF\xBB\xBF", 0) == 0) {
        table.header[0].erase(0, 3);
    }
    return table;
}

inline Table read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path);
    Table t = read(in);
    if (t.header.empty()) throw DataError("empty CSV file (no header row): " + path);
    return t;
}

inline std::string escape(std::string_view field) {
    const bool needs_quotes = field.find_first_of(",\"\n\r") != std::string_view::npos;
    if (!needs_quotes) return std::string(field);
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

inline void write_record(std::ostream& out, const Record& record) {
    for (std::size_t i = 0; i < record.size(); ++i) {
        if (i) out << ',';
        out << escape(record[i]);
    }
    out << '\n';
}

inline void write_file(const std::string& path, const Record& header, const std::vector<Record>& records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write file: " + path);
    write_record(out, header);
    for (const auto& r : records) write_record(out, r);
}

}  // namespace maihda::csv
