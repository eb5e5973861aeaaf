#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hanova/types.hpp"

namespace hanova {

// Observed cells of a sparse multi-way table. Cells are stored in
// lexicographic index order and the structure is immutable after
// construction, so it can be shared read-only across threads.
class SparseTable {
 public:
  struct CellRow {
    CellIndex index;
    double y;
    double n;
  };

  // Merges duplicate indices as a weighted mean with summed weights,
  // sorts lexicographically, and validates weights.
  static SparseTable build(FactorSpec spec, std::vector<CellRow> rows);

  const FactorSpec& spec() const { return spec_; }
  std::size_t cell_count() const { return y_.size(); }
  const std::vector<CellIndex>& indices() const { return index_; }
  std::span<const double> values() const { return y_; }
  std::span<const double> weights() const { return n_; }
  const CellIndex& index(std::size_t pos) const { return index_[pos]; }
  double value(std::size_t pos) const { return y_[pos]; }
  double weight(std::size_t pos) const { return n_[pos]; }

  // Position of a cell, if observed.
  std::optional<std::size_t> find(const CellIndex& idx) const;

  bool balanced() const;  // all observed weights equal
  bool fully_observed() const;

  // Same layout and weights, different responses.
  SparseTable with_values(std::span<const double> y) const;
  // Same layout and responses, all weights set to 1.
  SparseTable with_unit_weights() const;

 private:
  FactorSpec spec_;
  std::vector<CellIndex> index_;
  std::vector<double> y_;
  std::vector<double> n_;
  std::map<CellIndex, std::size_t> lookup_;
};

// Reads the cell CSV format: header names the factor columns followed by
// literal columns `y` and `n`. Level labels are discovered from the data
// in first-appearance order when `spec` is absent.
SparseTable load_cells(const std::string& path, const std::optional<FactorSpec>& spec = {});

// Writes the cell CSV format in lexicographic cell order; exact
// round-trip through load_cells.
void save_cells(const SparseTable& table, const std::string& path);

double weighted_grand_mean(const SparseTable& table);

// Mean of observed responses with every cell weighted equally.
double unweighted_mean(const SparseTable& table);

}  // namespace hanova
