#pragma once

// Minimal RFC 4180 reader/writer: comma separated, double-quote escaping,
// CRLF or LF line endings, mandatory header row.

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "edutwin/errors.hpp"

namespace edutwin::csv {

struct Row {
    std::size_t line = 0;  // 1-based physical line where the row starts
    std::vector<std::string> cells;
};

class Table {
public:
    Table() = default;
    Table(std::vector<std::string> header, std::vector<Row> rows)
        : header_(std::move(header)), rows_(std::move(rows)) {
        for (std::size_t i = 0; i < header_.size(); ++i) index_.emplace(header_[i], i);
    }

    [[nodiscard]] const std::vector<std::string>& header() const noexcept { return header_; }
    [[nodiscard]] const std::vector<Row>& rows() const noexcept { return rows_; }

    [[nodiscard]] std::optional<std::size_t> column(std::string_view name) const {
        auto it = index_.find(std::string(name));
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    [[nodiscard]] std::size_t require(std::string_view name, std::string_view what) const {
        auto c = column(name);
        if (!c) throw SchemaError(std::string(what) + ": missing column '" + std::string(name) + "'", 1);
        return *c;
    }

private:
    std::vector<std::string> header_;
    std::vector<Row> rows_;
    std::unordered_map<std::string, std::size_t> index_;
};

inline Table parse(std::string_view text, std::string_view source = "<memory>") {
    std::vector<std::vector<std::string>> records;
    std::vector<std::size_t> starts;
    std::vector<std::string> current;
    std::string field;
    bool in_quotes = false;
    bool field_started = false;
    std::size_t line = 1;
    std::size_t record_line = 1;

    auto end_field = [&] {
        current.push_back(std::move(field));
        field.clear();
        field_started = false;
    };
    auto end_record = [&] {
        end_field();
        bool blank = current.size() == 1 && current[0].empty();
        if (!blank) {
            records.push_back(std::move(current));
            starts.push_back(record_line);
        }
        current.clear();
    };

    std::size_t i = 0;
    if (text.substr(0, 3) == "\xEF\xBB\xBF") i = 3;  // UTF-8 BOM
    for (; i < text.size(); ++i) {
        char c = text[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                if (c == '\n') ++line;
                field.push_back(c);
            }
            continue;
        }
        if (c == '"' && !field_started) {
            in_quotes = true;
            field_started = true;
        } else if (c == ',') {
            end_field();
        } else if (c == '\r') {
            // swallowed; the following \n terminates the record
        } else if (c == '\n') {
            end_record();
            ++line;
            record_line = line;
        } else {
            field.push_back(c);
            field_started = true;
        }
    }
    if (in_quotes) throw SchemaError(std::string(source) + ": unterminated quoted field", record_line);
    if (!field.empty() || !current.empty()) end_record();

    if (records.empty()) throw SchemaError(std::string(source) + ": empty file, header row required", 1);
    std::vector<std::string> header = std::move(records.front());
    bool empty_header = true;
    for (const auto& h : header) empty_header = empty_header && h.empty();
    if (empty_header) throw SchemaError(std::string(source) + ": empty header row", 1);

    std::vector<Row> rows;
    rows.reserve(records.size() - 1);
    for (std::size_t r = 1; r < records.size(); ++r) {
        if (records[r].size() != header.size()) {
            throw SchemaError(std::string(source) + ": row has " + std::to_string(records[r].size()) +
                                  " cells, header has " + std::to_string(header.size()),
                              starts[r]);
        }
        rows.push_back(Row{starts[r], std::move(records[r])});
    }
    return Table(std::move(header), std::move(rows));
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw SchemaError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline Table read(const std::filesystem::path& path) { return parse(read_file(path), path.string()); }

inline std::string escape(std::string_view cell) {
    bool quote = cell.find_first_of(",\"\r\n") != std::string_view::npos ||
                 (!cell.empty() && (cell.front() == ' ' || cell.back() == ' '));
    if (!quote) return std::string(cell);
    std::string out = "\"";
    for (char c : cell) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

inline void write_row(std::ostream& out, const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) out << ',';
        out << escape(cells[i]);
    }
    out << '\n';
}

}  // namespace edutwin::csv
