#ifndef CORRGROUP_CSV_HPP
#define CORRGROUP_CSV_HPP

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "error.hpp"

/**
 * @file csv.hpp
 * @brief Minimal RFC-4180 delimited-text reading and writing.
 */

namespace corrgroup::csv {

struct Record {
    std::size_t line; // 1-based line on which the record starts
    std::vector<std::string> fields;
};

/**
 * Delimiter implied by a file name: tab for `.tsv`, `.tab` and `.txt`, comma otherwise.
 */
inline char delimiter_for(const std::string& path) {
    auto ends_with = [&](std::string_view suffix) {
        return path.size() >= suffix.size() && path.compare(path.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    if (ends_with(".tsv") || ends_with(".tab") || ends_with(".txt") || ends_with(".TSV")) {
        return '\t';
    }
    return ',';
}

/**
 * Parse all records from a stream. Quoted fields may contain the delimiter,
 * doubled quotes and line breaks. Blank lines are skipped.
 */
inline std::vector<Record> read_records(std::istream& in, char delim) {
    std::vector<Record> out;
    std::string field;
    std::vector<std::string> fields;
    std::size_t line = 1, record_start = 1;
    bool in_quotes = false, field_quoted = false, any_content = false;

    auto end_field = [&]() {
        fields.push_back(std::move(field));
        field.clear();
        field_quoted = false;
    };
    auto end_record = [&]() {
        if (any_content) {
            end_field();
            out.push_back(Record{record_start, std::move(fields)});
        }
        fields.clear();
        field.clear();
        field_quoted = false;
        any_content = false;
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
                if (c == '\n') {
                    ++line;
                }
                field.push_back(c);
            }
            continue;
        }

        if (c == '\r') {
            continue;
        }
        if (c == '\n') {
            end_record();
            ++line;
            record_start = line;
            continue;
        }
        if (!any_content) {
            any_content = true;
            record_start = line;
        }
        if (c == delim) {
            end_field();
        } else if (c == '"' && field.empty() && !field_quoted) {
            in_quotes = true;
            field_quoted = true;
        } else {
            field.push_back(c);
        }
    }
    if (in_quotes) {
        throw ParseError("unterminated quoted field", record_start);
    }
    end_record();
    return out;
}

inline std::vector<Record> read_file(const std::string& path, char delim) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ValidationError("cannot open '" + path + "' for reading");
    }
    return read_records(in, delim);
}

inline std::string quote(const std::string& field, char delim) {
    bool needs = field.find_first_of(std::string{delim, '"', '\n', '\r'}) != std::string::npos;
    if (!needs) {
        return field;
    }
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') {
            out.push_back('"');
        }
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

inline void write_row(std::ostream& out, const std::vector<std::string>& fields, char delim) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) {
            out << delim;
        }
        out << quote(fields[i], delim);
    }
    out << '\n';
}

/**
 * Shortest decimal string that reads back to the identical double.
 */
inline std::string format_double(double value) {
    char buffer[64];
    auto res = std::to_chars(buffer, buffer + sizeof(buffer), value);
    return std::string(buffer, res.ptr);
}

/**
 * Strict numeric parse: the whole (whitespace-trimmed) field must be a finite number.
 */
inline std::optional<double> parse_double(std::string_view text) {
    while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) {
        text.remove_prefix(1);
    }
    while (!text.empty() && (text.back() == ' ' || text.back() == '\t')) {
        text.remove_suffix(1);
    }
    if (!text.empty() && text.front() == '+') {
        text.remove_prefix(1);
    }
    if (text.empty()) {
        return std::nullopt;
    }
    double value = 0;
    auto res = std::from_chars(text.data(), text.data() + text.size(), value);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size() || !std::isfinite(value)) {
        return std::nullopt;
    }
    return value;
}

}

#endif
