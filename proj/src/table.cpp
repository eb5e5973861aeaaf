#include "hanova/table.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "hanova/csv.hpp"

namespace hanova {

void FactorSpec::validate() const {
  if (names.empty()) throw ValidationError("factor spec needs at least one factor");
  if (levels.size() != names.size())
    throw ValidationError("factor spec: levels list does not match factor count");
  std::set<std::string> seen_names(names.begin(), names.end());
  if (seen_names.size() != names.size())
    throw ValidationError("factor spec: duplicate factor names");
  for (std::size_t f = 0; f < names.size(); ++f) {
    if (levels[f].empty())
      throw ValidationError("factor '" + names[f] + "' has no levels");
    std::set<std::string> seen(levels[f].begin(), levels[f].end());
    if (seen.size() != levels[f].size())
      throw ValidationError("factor '" + names[f] + "' has duplicate level labels");
  }
}

std::vector<std::vector<int>> subsets_of_size(int m, int k) {
  std::vector<std::vector<int>> out;
  std::vector<int> cur;
  // lexicographic enumeration
  auto rec = [&](auto&& self, int start) -> void {
    if (static_cast<int>(cur.size()) == k) {
      out.push_back(cur);
      return;
    }
    for (int i = start; i < m; ++i) {
      cur.push_back(i);
      self(self, i + 1);
      cur.pop_back();
    }
  };
  rec(rec, 0);
  return out;
}

SparseTable SparseTable::build(FactorSpec spec, std::vector<CellRow> rows) {
  spec.validate();
  if (rows.empty()) throw ValidationError("table has no cells");
  const int m = spec.factor_count();
  for (const auto& r : rows) {
    if (static_cast<int>(r.index.coords.size()) != m)
      throw ValidationError("cell index arity does not match factor count");
    for (int f = 0; f < m; ++f)
      if (r.index.coords[f] < 0 || r.index.coords[f] >= spec.level_count(f))
        throw ValidationError("cell index out of range for factor '" + spec.names[f] + "'");
    if (!(r.n > 0)) throw ValidationError("cell weight must be positive");
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const CellRow& a, const CellRow& b) { return a.index < b.index; });

  SparseTable t;
  t.spec_ = std::move(spec);
  for (std::size_t i = 0; i < rows.size();) {
    double wsum = 0, ysum = 0;
    std::size_t j = i;
    while (j < rows.size() && rows[j].index == rows[i].index) {
      wsum += rows[j].n;
      ysum += rows[j].n * rows[j].y;
      ++j;
    }
    t.index_.push_back(rows[i].index);
    t.y_.push_back(ysum / wsum);
    t.n_.push_back(wsum);
    i = j;
  }
  for (std::size_t p = 0; p < t.index_.size(); ++p) t.lookup_.emplace(t.index_[p], p);
  return t;
}

std::optional<std::size_t> SparseTable::find(const CellIndex& idx) const {
  auto it = lookup_.find(idx);
  if (it == lookup_.end()) return std::nullopt;
  return it->second;
}

bool SparseTable::balanced() const {
  for (double w : n_)
    if (w != n_[0]) return false;
  return true;
}

bool SparseTable::fully_observed() const {
  double grid = 1;
  for (int f = 0; f < spec_.factor_count(); ++f) grid *= spec_.level_count(f);
  return grid == static_cast<double>(cell_count());
}

SparseTable SparseTable::with_values(std::span<const double> y) const {
  if (y.size() != y_.size()) throw ValidationError("value vector length mismatch");
  SparseTable t(*this);
  t.y_.assign(y.begin(), y.end());
  return t;
}

SparseTable SparseTable::with_unit_weights() const {
  SparseTable t(*this);
  std::fill(t.n_.begin(), t.n_.end(), 1.0);
  return t;
}

namespace {

FactorSpec discover_spec(const std::vector<std::string>& factor_names,
                         const std::vector<csv::Row>& rows) {
  FactorSpec spec;
  spec.names = factor_names;
  spec.levels.resize(factor_names.size());
  std::vector<std::unordered_map<std::string, int>> seen(factor_names.size());
  for (std::size_t r = 1; r < rows.size(); ++r) {
    for (std::size_t f = 0; f < factor_names.size(); ++f) {
      const std::string& label = rows[r].fields[f];
      auto [it, inserted] = seen[f].emplace(label, static_cast<int>(spec.levels[f].size()));
      if (inserted) spec.levels[f].push_back(label);
    }
  }
  return spec;
}

}  // namespace

SparseTable load_cells(const std::string& path, const std::optional<FactorSpec>& spec_in) {
  auto rows = csv::read_file(path);
  if (rows.empty()) throw ValidationError("empty cell file: " + path);
  const auto& header = rows[0].fields;
  if (header.size() < 3 || header[header.size() - 2] != "y" || header.back() != "n")
    throw ParseError("cell file header must name factor columns then 'y','n' (line " +
                     std::to_string(rows[0].line) + ")");
  const std::size_t m = header.size() - 2;
  std::vector<std::string> factor_names(header.begin(), header.end() - 2);
  if (rows.size() < 2) throw ValidationError("cell file has no data rows: " + path);

  // With a user spec, columns are matched by name in any order.
  std::vector<std::size_t> col_of(m);
  FactorSpec spec;
  if (spec_in) {
    spec = *spec_in;
    spec.validate();
    if (static_cast<std::size_t>(spec.factor_count()) != m)
      throw ValidationError("cell file factor count does not match supplied spec");
    for (int f = 0; f < spec.factor_count(); ++f) {
      auto it = std::find(factor_names.begin(), factor_names.end(), spec.names[f]);
      if (it == factor_names.end())
        throw ValidationError("cell file is missing factor column '" + spec.names[f] + "'");
      col_of[f] = static_cast<std::size_t>(it - factor_names.begin());
    }
  } else {
    for (std::size_t f = 0; f < m; ++f) col_of[f] = f;
  }

  for (std::size_t r = 1; r < rows.size(); ++r)
    if (rows[r].fields.size() != header.size())
      throw ParseError("wrong field count at line " + std::to_string(rows[r].line));

  if (!spec_in) spec = discover_spec(factor_names, rows);

  std::vector<SparseTable::CellRow> cells;
  cells.reserve(rows.size() - 1);
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    CellIndex idx;
    idx.coords.resize(m);
    for (std::size_t f = 0; f < m; ++f) {
      const std::string& label = row.fields[col_of[f]];
      int ord = spec.find_level(static_cast<int>(f), label);
      if (ord < 0)
        throw ValidationError("unknown level '" + label + "' for factor '" + spec.names[f] +
                              "' at line " + std::to_string(row.line));
      idx.coords[f] = ord;
    }
    double y = csv::parse_double(row.fields[m], row.line);
    double n = csv::parse_double(row.fields[m + 1], row.line);
    if (!(n > 0))
      throw ValidationError("non-positive weight at line " + std::to_string(row.line));
    cells.push_back({std::move(idx), y, n});
  }
  return SparseTable::build(std::move(spec), std::move(cells));
}

void save_cells(const SparseTable& table, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot write file: " + path);
  std::vector<std::string> header = table.spec().names;
  header.push_back("y");
  header.push_back("n");
  f << csv::encode_row(header) << "\n";
  for (std::size_t p = 0; p < table.cell_count(); ++p) {
    std::vector<std::string> fields;
    fields.reserve(header.size());
    for (int fct = 0; fct < table.spec().factor_count(); ++fct)
      fields.push_back(table.spec().levels[fct][table.index(p).coords[fct]]);
    fields.push_back(csv::format_double(table.value(p)));
    fields.push_back(csv::format_double(table.weight(p)));
    f << csv::encode_row(fields) << "\n";
  }
}

double weighted_grand_mean(const SparseTable& table) {
  double num = 0, den = 0;
  for (std::size_t p = 0; p < table.cell_count(); ++p) {
    num += table.weight(p) * table.value(p);
    den += table.weight(p);
  }
  return num / den;
}

double unweighted_mean(const SparseTable& table) {
  double s = 0;
  for (std::size_t p = 0; p < table.cell_count(); ++p) s += table.value(p);
  return s / static_cast<double>(table.cell_count());
}

}  // namespace hanova
