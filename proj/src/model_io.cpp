#include "hanova/model_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "hanova/csv.hpp"

namespace hanova {

namespace {

std::string join_plus(const std::vector<std::string>& parts) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out.push_back('+');
    out += parts[i];
  }
  return out;
}

std::vector<std::string> split_plus(const std::string& s) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : s) {
    if (c == '+') {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  parts.push_back(cur);
  return parts;
}

}  // namespace

void save_model(const HanovaFit& fit, const std::string& path) {
  for (const auto& factor_levels : fit.spec.levels)
    for (const auto& label : factor_levels)
      if (label.find('+') != std::string::npos)
        throw ValidationError("level label '" + label + "' contains '+', unsupported in model files");

  std::ofstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot write model file: " + path);

  f << "#hanova,1\n";
  {
    std::vector<std::string> row = {"#factors"};
    row.insert(row.end(), fit.spec.names.begin(), fit.spec.names.end());
    f << csv::encode_row(row) << "\n";
  }
  for (int fct = 0; fct < fit.spec.factor_count(); ++fct) {
    std::vector<std::string> row = {"#levels", fit.spec.names[fct]};
    row.insert(row.end(), fit.spec.levels[fct].begin(), fit.spec.levels[fct].end());
    f << csv::encode_row(row) << "\n";
  }
  f << "#grand_mean," << csv::format_double(fit.grand_mean) << "\n";
  f << "#maxk," << fit.maxk << "\n";
  {
    std::vector<std::string> row = {"#lambda"};
    for (double l : fit.lambdas) row.push_back(csv::format_double(l));
    f << csv::encode_row(row) << "\n";
  }
  f << "order,margin,levels,coef\n";

  for (const auto& of : fit.order_fits) {
    if (of.inherits_prior) continue;  // falls through to the order below
    for (const auto& block : of.coefficients.blocks) {
      std::vector<std::string> jnames;
      for (int fct : block.J) jnames.push_back(fit.spec.names[fct]);
      const std::string margin = join_plus(jnames);
      for (std::size_t g = 0; g < block.keys.size(); ++g) {
        std::int64_t key = block.keys[g];
        std::vector<std::string> labels(block.J.size());
        for (std::size_t i = block.J.size(); i-- > 0;) {
          labels[i] = fit.spec.levels[block.J[i]][key % block.dims[i]];
          key /= block.dims[i];
        }
        std::vector<std::string> row = {std::to_string(of.order), margin, join_plus(labels),
                                        csv::format_double(block.values[g])};
        f << csv::encode_row(row) << "\n";
      }
    }
  }
}

HanovaFit load_model(const std::string& path) {
  auto rows = csv::read_file(path);
  if (rows.empty() || rows[0].fields.empty() || rows[0].fields[0] != "#hanova")
    throw ValidationError("not a model file: " + path);

  HanovaFit fit;
  bool have_mean = false, have_maxk = false, have_lambda = false;
  std::size_t r = 1;
  for (; r < rows.size(); ++r) {
    const auto& fields = rows[r].fields;
    if (fields.empty() || fields[0].empty() || fields[0][0] != '#') break;
    const std::string& key = fields[0];
    if (key == "#factors") {
      fit.spec.names.assign(fields.begin() + 1, fields.end());
      fit.spec.levels.resize(fit.spec.names.size());
    } else if (key == "#levels") {
      if (fields.size() < 3) throw ParseError("bad #levels line " + std::to_string(rows[r].line));
      auto it = std::find(fit.spec.names.begin(), fit.spec.names.end(), fields[1]);
      if (it == fit.spec.names.end())
        throw ParseError("unknown factor in #levels at line " + std::to_string(rows[r].line));
      fit.spec.levels[it - fit.spec.names.begin()].assign(fields.begin() + 2, fields.end());
    } else if (key == "#grand_mean") {
      fit.grand_mean = csv::parse_double(fields.at(1), rows[r].line);
      have_mean = true;
    } else if (key == "#maxk") {
      fit.maxk = static_cast<int>(csv::parse_long(fields.at(1), rows[r].line));
      have_maxk = true;
    } else if (key == "#lambda") {
      for (std::size_t i = 1; i < fields.size(); ++i)
        fit.lambdas.push_back(csv::parse_double(fields[i], rows[r].line));
      have_lambda = true;
    } else {
      throw ParseError("unknown model header '" + key + "' at line " + std::to_string(rows[r].line));
    }
  }
  if (!have_mean || !have_maxk || !have_lambda || fit.spec.names.empty())
    throw ValidationError("model file is missing header fields: " + path);
  fit.spec.validate();
  if (fit.maxk < 1 || fit.maxk > fit.spec.factor_count() ||
      static_cast<int>(fit.lambdas.size()) != fit.maxk)
    throw ValidationError("model header is inconsistent: " + path);

  if (r >= rows.size() || rows[r].fields != std::vector<std::string>{"order", "margin", "levels", "coef"})
    throw ValidationError("model file is missing the coefficient header row");
  ++r;

  fit.order_fits.resize(fit.maxk);
  for (int k = 1; k <= fit.maxk; ++k) {
    auto& of = fit.order_fits[k - 1];
    of.order = k;
    of.lambda = fit.lambdas[k - 1];
    of.inherits_prior = std::isinf(fit.lambdas[k - 1]);
    of.converged = true;
    of.coefficients.order = k;
  }

  // Collect coefficient rows per (order, subset); rows are written in key
  // order but we re-sort to be safe.
  struct Entry {
    std::int64_t key;
    double value;
  };
  std::map<std::pair<int, std::vector<int>>, std::vector<Entry>> block_rows;
  for (; r < rows.size(); ++r) {
    const auto& fields = rows[r].fields;
    if (fields.size() != 4) throw ParseError("bad coefficient row at line " + std::to_string(rows[r].line));
    const int order = static_cast<int>(csv::parse_long(fields[0], rows[r].line));
    if (order < 1 || order > fit.maxk)
      throw ParseError("coefficient order out of range at line " + std::to_string(rows[r].line));
    std::vector<int> J;
    for (const auto& name : split_plus(fields[1])) {
      auto it = std::find(fit.spec.names.begin(), fit.spec.names.end(), name);
      if (it == fit.spec.names.end())
        throw ParseError("unknown factor '" + name + "' at line " + std::to_string(rows[r].line));
      J.push_back(static_cast<int>(it - fit.spec.names.begin()));
    }
    auto labels = split_plus(fields[2]);
    if (labels.size() != J.size() || static_cast<int>(J.size()) != order)
      throw ParseError("margin arity mismatch at line " + std::to_string(rows[r].line));
    std::int64_t key = 0;
    for (std::size_t i = 0; i < J.size(); ++i) {
      const int ord = fit.spec.find_level(J[i], labels[i]);
      if (ord < 0)
        throw ParseError("unknown level '" + labels[i] + "' at line " + std::to_string(rows[r].line));
      key = key * fit.spec.level_count(J[i]) + ord;
    }
    block_rows[{order, J}].push_back({key, csv::parse_double(fields[3], rows[r].line)});
  }

  for (auto& [ok, entries] : block_rows) {
    auto& of = fit.order_fits[ok.first - 1];
    if (of.inherits_prior)
      throw ValidationError("model file has coefficients for an infinite-lambda order");
    CoefficientBlock block;
    block.J = ok.second;
    for (int fct : block.J) block.dims.push_back(fit.spec.level_count(fct));
    std::sort(entries.begin(), entries.end(),
              [](const Entry& a, const Entry& b) { return a.key < b.key; });
    for (const auto& e : entries) {
      if (!block.keys.empty() && block.keys.back() == e.key)
        throw ValidationError("duplicate coefficient row in model file");
      block.keys.push_back(e.key);
      block.values.push_back(e.value);
    }
    of.coefficients.blocks.push_back(std::move(block));
  }

  // Blocks must sit in lexicographic subset order for deterministic predict.
  for (auto& of : fit.order_fits)
    std::sort(of.coefficients.blocks.begin(), of.coefficients.blocks.end(),
              [](const CoefficientBlock& a, const CoefficientBlock& b) { return a.J < b.J; });
  return fit;
}

}  // namespace hanova
