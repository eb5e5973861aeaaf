#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace hanova::csv {

// One parsed row plus the 1-based line number it started on.
struct Row {
  std::vector<std::string> fields;
  long line = 0;
};

// RFC-4180-style parsing: quoted fields may contain commas, quotes
// (doubled) and newlines. Blank lines are skipped.
std::vector<Row> read_file(const std::string& path);
std::vector<Row> parse(std::istream& in);

// Quotes a field only when needed.
std::string encode_field(const std::string& field);
std::string encode_row(const std::vector<std::string>& fields);

// Shortest decimal form that round-trips the double exactly.
std::string format_double(double v);

// Strict double parse; throws ParseError naming `line` on failure.
double parse_double(const std::string& s, long line);
long parse_long(const std::string& s, long line);

}  // namespace hanova::csv
