#include "cdemap/csv.hpp"

#include <fstream>

#include "cdemap/errors.hpp"
#include "cdemap/text.hpp"

namespace cdemap::csv {

bool Reader::next(Row& row) {
    row.fields.clear();
    std::string line;
    if (!std::getline(in_, line)) return false;
    ++line_;
    row.line = line_;

    std::string field;
    bool quoted = false;
    bool after_quote = false;
    std::size_t i = 0;
    while (true) {
        if (i >= line.size()) {
            if (quoted) {
                std::string more;
                if (!std::getline(in_, more))
                    throw MalformedRow("line " + std::to_string(row.line) + ": unterminated quoted field");
                ++line_;
                field.push_back('\n');
                line = std::move(more);
                i = 0;
                continue;
            }
            break;
        }
        char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    field.push_back('"');
                    i += 2;
                    continue;
                }
                quoted = false;
                after_quote = true;
            } else {
                field.push_back(c);
            }
            ++i;
            continue;
        }
        if (c == ',') {
            row.fields.push_back(std::move(field));
            field.clear();
            after_quote = false;
        } else if (c == '\r' && i + 1 == line.size()) {
            // CRLF line ending
        } else if (after_quote) {
            throw MalformedRow("line " + std::to_string(row.line) + ": unexpected character after closing quote");
        } else if (c == '"' && field.empty()) {
            quoted = true;
        } else {
            field.push_back(c);
        }
        ++i;
    }
    row.fields.push_back(std::move(field));
    return true;
}

std::vector<Row> read_all(std::istream& in) {
    Reader reader(in);
    std::vector<Row> rows;
    Row row;
    while (reader.next(row)) {
        if (row.fields.size() == 1 && text::trim(row.fields[0]).empty()) continue;
        rows.push_back(row);
    }
    return rows;
}

std::vector<Row> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    return read_all(in);
}

std::vector<Row> read_table(const std::string& path, const std::vector<std::string>& expected) {
    auto rows = read_file(path);
    if (rows.empty()) throw MalformedRow(path + ": missing header");
    auto header = rows.front().fields;
    // Tolerate a UTF-8 byte-order mark on the first header cell.
    if (!header.empty() && header[0].rfind("\xEF\xBB\xBF", 0) == 0) header[0].erase(0, 3);
    if (header != expected)
        throw MalformedRow(path + ": line 1: expected header `" + text::join(expected, ",") + "`");
    rows.erase(rows.begin());
    for (const auto& r : rows) {
        if (r.fields.size() != expected.size())
            throw MalformedRow(path + ": line " + std::to_string(r.line) + ": expected " +
                               std::to_string(expected.size()) + " fields, got " +
                               std::to_string(r.fields.size()));
    }
    return rows;
}

std::string quote(std::string_view field) {
    bool needs = field.find_first_of(",\"\r\n") != std::string_view::npos;
    if (!needs) return std::string(field);
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

std::string format_row(const std::vector<std::string>& fields) {
    std::string out;
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) out.push_back(',');
        out += quote(fields[i]);
    }
    return out;
}

}  // namespace cdemap::csv
