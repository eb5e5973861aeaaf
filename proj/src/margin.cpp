#include "hanova/margin.hpp"

#include <algorithm>
#include <numeric>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace hanova {

MarginPlan MarginPlan::build(const SparseTable& table, std::vector<int> J) {
  const int m = table.spec().factor_count();
  for (std::size_t i = 0; i < J.size(); ++i) {
    if (J[i] < 0 || J[i] >= m) throw ValidationError("margin subset has a factor out of range");
    if (i > 0 && J[i] <= J[i - 1])
      throw ValidationError("margin subset must be strictly increasing");
  }
  MarginPlan plan;
  plan.J_ = J;
  plan.dims_.reserve(J.size());
  for (int f : J) plan.dims_.push_back(table.spec().level_count(f));

  const std::size_t n = table.cell_count();
  std::vector<std::int64_t> key(n);
  for (std::size_t p = 0; p < n; ++p) {
    std::int64_t k = 0;
    for (std::size_t i = 0; i < J.size(); ++i)
      k = k * plan.dims_[i] + table.index(p).coords[J[i]];
    key[p] = k;
  }

  // Sort positions by (key, position): cells are already in lexicographic
  // index order, which fixes the per-group summation order.
  std::vector<std::int32_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::int32_t a, std::int32_t b) { return key[a] < key[b]; });

  plan.order_ = std::move(order);
  plan.cell_group_.resize(n);
  plan.begin_.push_back(0);
  for (std::size_t i = 0; i < n; ++i) {
    std::int32_t pos = plan.order_[i];
    if (i == 0 || key[pos] != key[plan.order_[i - 1]]) {
      plan.group_key_.push_back(key[pos]);
      if (i != 0) plan.begin_.push_back(static_cast<std::int32_t>(i));
    }
    plan.cell_group_[pos] = static_cast<std::int32_t>(plan.group_key_.size() - 1);
  }
  plan.begin_.push_back(static_cast<std::int32_t>(n));
  return plan;
}

std::vector<Level> MarginPlan::decode_key(std::int64_t key) const {
  std::vector<Level> L(J_.size());
  for (std::size_t i = J_.size(); i-- > 0;) {
    L[i] = static_cast<Level>(key % dims_[i]);
    key /= dims_[i];
  }
  return L;
}

void margin_group_sums_serial(const MarginPlan& plan, std::span<const double> values,
                              std::span<double> out) {
  const std::size_t G = plan.group_count();
  for (std::size_t g = 0; g < G; ++g) {
    double s = 0;
    for (std::int32_t pos : plan.group_cells(g)) s += values[pos];
    out[g] = s;
  }
}

void margin_group_sums_parallel(const MarginPlan& plan, std::span<const double> values,
                                std::span<double> out) {
  const std::int64_t G = static_cast<std::int64_t>(plan.group_count());
#pragma omp parallel for schedule(static)
  for (std::int64_t g = 0; g < G; ++g) {
    double s = 0;
    for (std::int32_t pos : plan.group_cells(g)) s += values[pos];
    out[g] = s;
  }
}

void margin_group_sums(const MarginPlan& plan, std::span<const double> values,
                       std::span<double> out) {
  // Each group is summed sequentially either way; the parallel kernel only
  // distributes whole groups, so the result is identical.
  if (values.size() >= 16384 && plan.group_count() >= 2)
    margin_group_sums_parallel(plan, values, out);
  else
    margin_group_sums_serial(plan, values, out);
}

std::map<MarginKey, double> margin_sum(const SparseTable& table, std::span<const double> values,
                                       const std::vector<int>& J) {
  if (values.size() != table.cell_count())
    throw ValidationError("margin_sum: values length does not match cell count");
  MarginPlan plan = MarginPlan::build(table, J);
  std::vector<double> sums(plan.group_count());
  margin_group_sums(plan, values, sums);
  std::map<MarginKey, double> out;
  for (std::size_t g = 0; g < plan.group_count(); ++g) {
    MarginKey key{J, plan.decode_key(plan.group_key(g))};
    out.emplace(std::move(key), sums[g]);
  }
  return out;
}

}  // namespace hanova
