#include "hanova/csv.hpp"

#include <cerrno>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <limits>
#include <sstream>

#include "hanova/types.hpp"

namespace hanova::csv {

std::vector<Row> parse(std::istream& in) {
  std::vector<Row> rows;
  std::string field;
  Row row;
  long line = 1;
  long row_start = 1;
  bool in_quotes = false;
  bool row_has_data = false;

  auto end_field = [&] {
    row.fields.push_back(field);
    field.clear();
  };
  auto end_row = [&] {
    if (row_has_data || row.fields.size() > 0 || !field.empty()) {
      end_field();
      row.line = row_start;
      rows.push_back(std::move(row));
      row = Row{};
    }
    row_has_data = false;
    row_start = line;
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
        in_quotes = true;
        row_has_data = true;
        break;
      case ',':
        end_field();
        row_has_data = true;
        break;
      case '\r':
        break;
      case '\n':
        ++line;
        if (row_has_data)
          end_row();
        else
          row_start = line;
        break;
      default:
        field.push_back(c);
        row_has_data = true;
        break;
    }
  }
  if (in_quotes) throw ParseError("unterminated quoted field at end of input");
  if (row_has_data) end_row();
  return rows;
}

std::vector<Row> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot open file: " + path);
  return parse(f);
}

std::string encode_field(const std::string& field) {
  bool need_quotes = false;
  for (char c : field)
    if (c == ',' || c == '"' || c == '\n' || c == '\r') {
      need_quotes = true;
      break;
    }
  if (!need_quotes) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out += "\"";
  return out;
}

std::string encode_row(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out.push_back(',');
    out += encode_field(fields[i]);
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s, long line) {
  if (s.empty()) throw ParseError("empty numeric field at line " + std::to_string(line));
  if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
  errno = 0;
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size() || errno == ERANGE)
    throw ParseError("bad numeric value '" + s + "' at line " + std::to_string(line));
  return v;
}

long parse_long(const std::string& s, long line) {
  errno = 0;
  char* end = nullptr;
  long v = std::strtol(s.c_str(), &end, 10);
  if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE)
    throw ParseError("bad integer value '" + s + "' at line " + std::to_string(line));
  return v;
}

}  // namespace hanova::csv
