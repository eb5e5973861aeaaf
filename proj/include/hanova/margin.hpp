#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "hanova/table.hpp"
#include "hanova/types.hpp"

namespace hanova {

// Precomputed grouping of observed cells by their levels on a factor
// subset J. Groups are ordered by ascending flat margin key and cells
// within a group by ascending table position, so every reduction over
// the plan has one fixed summation order: results are bitwise identical
// whether the serial or the OpenMP kernel runs, and for any thread count.
class MarginPlan {
 public:
  static MarginPlan build(const SparseTable& table, std::vector<int> J);

  const std::vector<int>& subset() const { return J_; }
  std::size_t group_count() const { return group_key_.size(); }
  std::int64_t group_key(std::size_t g) const { return group_key_[g]; }
  std::int32_t group_of_cell(std::size_t pos) const { return cell_group_[pos]; }
  // Cells of group g, as table positions in fixed order.
  std::span<const std::int32_t> group_cells(std::size_t g) const {
    return {order_.data() + begin_[g], static_cast<std::size_t>(begin_[g + 1] - begin_[g])};
  }

  // Level tuple over J for a flat key.
  std::vector<Level> decode_key(std::int64_t key) const;

 private:
  std::vector<int> J_;
  std::vector<int> dims_;                // level counts of the factors in J
  std::vector<std::int64_t> group_key_;  // ascending
  std::vector<std::int32_t> cell_group_; // per table position
  std::vector<std::int32_t> order_;      // table positions grouped by margin
  std::vector<std::int32_t> begin_;      // CSR offsets, size group_count()+1
};

// out[g] = sum of values over the cells of group g, in plan order.
void margin_group_sums_serial(const MarginPlan& plan, std::span<const double> values,
                              std::span<double> out);
void margin_group_sums_parallel(const MarginPlan& plan, std::span<const double> values,
                                std::span<double> out);
// Dispatches to the parallel kernel when the plan is big enough to pay off.
void margin_group_sums(const MarginPlan& plan, std::span<const double> values,
                       std::span<double> out);

// Weighted table sum over the complement of J: for every observed margin
// level L, sums `values` over the cells with I_J = L. `values` must have
// one entry per observed cell in table order.
std::map<MarginKey, double> margin_sum(const SparseTable& table, std::span<const double> values,
                                       const std::vector<int>& J);

}  // namespace hanova
