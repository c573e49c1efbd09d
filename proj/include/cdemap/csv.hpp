#pragma once

#include <cstddef>
#include <istream>
#include <string>
#include <string_view>
#include <vector>

namespace cdemap::csv {

struct Row {
    std::size_t line = 0;  // 1-based physical line where the record starts
    std::vector<std::string> fields;
};

// RFC 4180 reader: comma separated, fields optionally double-quoted, a
// doubled quote inside a quoted field is a literal quote, quoted fields may
// span lines. Handles CRLF. Throws MalformedRow on an unterminated quote or
// stray characters after a closing quote.
class Reader {
public:
    explicit Reader(std::istream& in) : in_(in) {}

    // Returns false at end of input.
    bool next(Row& row);

private:
    std::istream& in_;
    std::size_t line_ = 0;
};

std::vector<Row> read_all(std::istream& in);
std::vector<Row> read_file(const std::string& path);

// Reads a file and checks the header matches `expected` exactly; returns the
// data rows. Every data row must have the same arity as the header.
std::vector<Row> read_table(const std::string& path, const std::vector<std::string>& expected);

std::string quote(std::string_view field);
std::string format_row(const std::vector<std::string>& fields);

}  // namespace cdemap::csv
