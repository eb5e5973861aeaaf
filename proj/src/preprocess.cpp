#include "hanova/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "hanova/csv.hpp"

namespace hanova {

void UnitRecords::validate() const {
  spec.validate();
  std::map<std::string, const CellIndex*> cell_of_unit;
  std::map<std::pair<CellIndex, std::string>, int> in_cell;
  for (const auto& r : rows) {
    if (r.n_reviews < 1) throw ValidationError("unit '" + r.unit_id + "' has no reviews");
    if (static_cast<int>(r.cell.coords.size()) != spec.factor_count())
      throw ValidationError("unit cell index arity mismatch");
    auto [it, inserted] = cell_of_unit.emplace(r.unit_id, &r.cell);
    if (!inserted && !(*it->second == r.cell))
      throw ValidationError("unit '" + r.unit_id + "' appears in more than one cell");
    if (++in_cell[{r.cell, r.unit_id}] > 1)
      throw ValidationError("unit '" + r.unit_id + "' listed twice in its cell");
  }
}

UnitVariances estimate_unit_variances(const UnitRecords& units,
                                      std::optional<double> sigma_r2_supplied) {
  units.validate();
  UnitVariances uv;

  if (sigma_r2_supplied) {
    if (*sigma_r2_supplied < 0) throw ValidationError("sigma_r2 must be non-negative");
    uv.sigma_r2 = *sigma_r2_supplied;
    uv.source = UnitVariances::Source::kSupplied;
  } else {
    if (units.raw_reviews.empty())
      throw ValidationError("no raw reviews available: supply sigma_r2 explicitly");
    // pooled within-unit sample variance
    std::map<std::string, std::vector<double>> per_unit;
    for (const auto& [id, rating] : units.raw_reviews) per_unit[id].push_back(rating);
    double ss = 0;
    long dof = 0;
    for (const auto& [id, ratings] : per_unit) {
      if (ratings.size() < 2) continue;
      double mean = 0;
      for (double v : ratings) mean += v;
      mean /= static_cast<double>(ratings.size());
      for (double v : ratings) ss += (v - mean) * (v - mean);
      dof += static_cast<long>(ratings.size()) - 1;
    }
    if (dof == 0)
      throw ValidationError("no unit has two or more raw reviews: supply sigma_r2 explicitly");
    uv.sigma_r2 = ss / static_cast<double>(dof);
    uv.source = UnitVariances::Source::kEstimated;
  }

  // one-way method of moments per multi-unit cell:
  // Var(unit means within a cell) = sigma_u^2 + sigma_r^2 * mean(1/n_i)
  std::map<CellIndex, std::vector<const UnitRecords::Row*>> by_cell;
  for (const auto& r : units.rows) by_cell[r.cell].push_back(&r);
  double acc = 0;
  long cells_used = 0;
  for (const auto& [cell, members] : by_cell) {
    if (members.size() < 2) continue;
    double mean = 0, inv_n = 0;
    for (const auto* r : members) {
      mean += r->y;
      inv_n += 1.0 / static_cast<double>(r->n_reviews);
    }
    mean /= static_cast<double>(members.size());
    inv_n /= static_cast<double>(members.size());
    double var = 0;
    for (const auto* r : members) var += (r->y - mean) * (r->y - mean);
    var /= static_cast<double>(members.size() - 1);
    acc += std::max(0.0, var - uv.sigma_r2 * inv_n);
    ++cells_used;
  }
  if (cells_used == 0)
    throw ValidationError("no cell has two or more units: supply sigma_u2 explicitly");
  uv.sigma_u2 = acc / static_cast<double>(cells_used);
  return uv;
}

SparseTable aggregate_cells(const UnitRecords& units, const UnitVariances& uv) {
  units.validate();
  if (uv.sigma_u2 < 0 || uv.sigma_r2 < 0) throw ValidationError("variances must be non-negative");
  if (uv.sigma_u2 == 0 && uv.sigma_r2 == 0)
    throw ValidationError("sigma_u2 and sigma_r2 cannot both be zero (infinite precision): "
                          "supply positive variances");

  std::map<CellIndex, std::pair<double, double>> acc;  // cell -> (sum w*y, sum w)
  for (const auto& r : units.rows) {
    const double w = 1.0 / (uv.sigma_u2 + uv.sigma_r2 / static_cast<double>(r.n_reviews));
    auto& [wy, wsum] = acc[r.cell];
    wy += w * r.y;
    wsum += w;
  }
  std::vector<SparseTable::CellRow> rows;
  rows.reserve(acc.size());
  for (const auto& [cell, sums] : acc)
    rows.push_back({cell, sums.first / sums.second, sums.second});
  return SparseTable::build(units.spec, std::move(rows));
}

std::vector<double> unit_shrinkage(const UnitRecords& units, const UnitVariances& uv,
                                   std::span<const double> cell_estimates) {
  if (cell_estimates.size() != units.rows.size())
    throw ValidationError("unit_shrinkage: cell estimates must align with unit rows");
  std::vector<double> out(units.rows.size());
  for (std::size_t i = 0; i < units.rows.size(); ++i) {
    const auto& r = units.rows[i];
    if (uv.sigma_r2 == 0) {
      out[i] = r.y;  // data are exact
    } else if (uv.sigma_u2 == 0) {
      out[i] = cell_estimates[i];  // no unit effect
    } else {
      const double a = static_cast<double>(r.n_reviews) / uv.sigma_r2;
      const double b = 1.0 / uv.sigma_u2;
      out[i] = (a * r.y + b * cell_estimates[i]) / (a + b);
    }
  }
  return out;
}

UnitRecords load_unit_records(const std::string& path, const std::optional<FactorSpec>& spec_in) {
  auto rows = csv::read_file(path);
  if (rows.empty()) throw ValidationError("empty unit file: " + path);
  const auto& header = rows[0].fields;
  if (header.size() < 4 || header[header.size() - 3] != "unit_id" ||
      header[header.size() - 2] != "y" || header.back() != "n_reviews")
    throw ParseError("unit file header must name factor columns then 'unit_id','y','n_reviews'");
  const std::size_t m = header.size() - 3;

  UnitRecords units;
  if (spec_in) {
    units.spec = *spec_in;
    units.spec.validate();
    if (static_cast<std::size_t>(units.spec.factor_count()) != m)
      throw ValidationError("unit file factor count does not match supplied spec");
  } else {
    units.spec.names.assign(header.begin(), header.begin() + m);
    units.spec.levels.resize(m);
    for (std::size_t r = 1; r < rows.size(); ++r) {
      if (rows[r].fields.size() != header.size())
        throw ParseError("wrong field count at line " + std::to_string(rows[r].line));
      for (std::size_t f = 0; f < m; ++f) {
        const std::string& label = rows[r].fields[f];
        if (units.spec.find_level(static_cast<int>(f), label) < 0)
          units.spec.levels[f].push_back(label);
      }
    }
  }

  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.fields.size() != header.size())
      throw ParseError("wrong field count at line " + std::to_string(row.line));
    UnitRecords::Row unit;
    unit.cell.coords.resize(m);
    for (std::size_t f = 0; f < m; ++f) {
      int ord = units.spec.find_level(static_cast<int>(f), row.fields[f]);
      if (ord < 0)
        throw ValidationError("unknown level '" + row.fields[f] + "' at line " +
                              std::to_string(row.line));
      unit.cell.coords[f] = ord;
    }
    unit.unit_id = row.fields[m];
    unit.y = csv::parse_double(row.fields[m + 1], row.line);
    unit.n_reviews = csv::parse_long(row.fields[m + 2], row.line);
    if (unit.n_reviews < 1)
      throw ValidationError("review count must be >= 1 at line " + std::to_string(row.line));
    units.rows.push_back(std::move(unit));
  }
  units.validate();
  return units;
}

void load_raw_reviews(const std::string& path, UnitRecords& units) {
  auto rows = csv::read_file(path);
  if (rows.empty()) throw ValidationError("empty review file: " + path);
  if (rows[0].fields != std::vector<std::string>{"unit_id", "rating"})
    throw ParseError("review file header must be 'unit_id,rating'");
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].fields.size() != 2)
      throw ParseError("wrong field count at line " + std::to_string(rows[r].line));
    units.raw_reviews.emplace_back(rows[r].fields[0],
                                   csv::parse_double(rows[r].fields[1], rows[r].line));
  }
}

void save_unit_variances(const UnitVariances& uv, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot write variances file: " + path);
  f << "sigma_u2 = " << csv::format_double(uv.sigma_u2) << "\n";
  f << "sigma_r2 = " << csv::format_double(uv.sigma_r2) << "\n";
  f << "source = " << (uv.source == UnitVariances::Source::kEstimated ? "estimated" : "supplied")
    << "\n";
}

UnitVariances load_unit_variances(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot open variances file: " + path);
  UnitVariances uv;
  std::string line;
  long lineno = 0;
  bool have_u = false, have_r = false;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto eq = line.find(" = ");
    if (eq == std::string::npos)
      throw ParseError("bad variances line " + std::to_string(lineno));
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 3);
    if (key == "sigma_u2") {
      uv.sigma_u2 = csv::parse_double(value, lineno);
      have_u = true;
    } else if (key == "sigma_r2") {
      uv.sigma_r2 = csv::parse_double(value, lineno);
      have_r = true;
    } else if (key == "source") {
      uv.source = value == "supplied" ? UnitVariances::Source::kSupplied
                                      : UnitVariances::Source::kEstimated;
    } else {
      throw ParseError("unknown variances key '" + key + "' at line " + std::to_string(lineno));
    }
  }
  if (!have_u || !have_r) throw ValidationError("variances file incomplete: " + path);
  return uv;
}

}  // namespace hanova
