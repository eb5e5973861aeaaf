#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hanova/table.hpp"
#include "hanova/types.hpp"

namespace hanova {

// Unit-level data before aggregation into cell means: every row is one
// unit (e.g. one restaurant) with its mean rating and review count.
struct UnitRecords {
  struct Row {
    CellIndex cell;
    std::string unit_id;
    double y;       // unit mean rating
    long n_reviews; // >= 1
  };
  FactorSpec spec;
  std::vector<Row> rows;
  // Optional raw ratings for estimating the single-review variance.
  std::vector<std::pair<std::string, double>> raw_reviews;  // (unit_id, rating)

  void validate() const;  // rejects units appearing in more than one cell
};

struct UnitVariances {
  double sigma_u2 = 0;  // unit-effect variance
  double sigma_r2 = 0;  // single-review variance
  enum class Source { kEstimated, kSupplied } source = Source::kEstimated;
};

// sigma_r^2 as the pooled within-unit sample variance of raw ratings (or
// the supplied value), sigma_u^2 by one-way method of moments over cells
// with at least two units, clamped at zero.
UnitVariances estimate_unit_variances(const UnitRecords& units,
                                      std::optional<double> sigma_r2_supplied = {});

// Collapses units into precision-weighted cell means. The cell weight is
// sum_i 1/(sigma_u^2 + sigma_r^2/n_i), which makes the downstream noise
// variance exactly 1.
SparseTable aggregate_cells(const UnitRecords& units, const UnitVariances& uv);

// Shrinks each unit mean toward its cell estimate:
// (n_i y_ci / sr2 + cell / su2) / (n_i / sr2 + 1 / su2),
// returning y_ci when sr2 == 0 and the cell estimate when su2 == 0.
// `cell_estimates` is aligned with units.rows.
std::vector<double> unit_shrinkage(const UnitRecords& units, const UnitVariances& uv,
                                   std::span<const double> cell_estimates);

// Unit CSV: factor columns, then unit_id,y,n_reviews.
UnitRecords load_unit_records(const std::string& path,
                              const std::optional<FactorSpec>& spec = {});
// Raw-review CSV: unit_id,rating. Merged into an existing record set.
void load_raw_reviews(const std::string& path, UnitRecords& units);

void save_unit_variances(const UnitVariances& uv, const std::string& path);
UnitVariances load_unit_variances(const std::string& path);

}  // namespace hanova
