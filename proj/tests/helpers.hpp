#pragma once

#include <Eigen/Dense>
#include <map>
#include <random>
#include <vector>

#include "hanova/margin.hpp"
#include "hanova/rng.hpp"
#include "hanova/solver.hpp"
#include "hanova/table.hpp"

namespace hanova::testing {

// Table from explicit (coords..., y, n) tuples; factor names a,b,c,...
// and level labels <name><ordinal>, sized to fit the given cells.
inline SparseTable make_table(const std::vector<int>& level_counts,
                              const std::vector<std::vector<double>>& cells) {
  FactorSpec spec;
  for (std::size_t f = 0; f < level_counts.size(); ++f) {
    std::string name(1, static_cast<char>('a' + f));
    spec.names.push_back(name);
    std::vector<std::string> labels;
    for (int l = 0; l < level_counts[f]; ++l) labels.push_back(name + std::to_string(l));
    spec.levels.push_back(labels);
  }
  std::vector<SparseTable::CellRow> rows;
  for (const auto& c : cells) {
    CellIndex idx;
    for (std::size_t f = 0; f < level_counts.size(); ++f)
      idx.coords.push_back(static_cast<Level>(c[f]));
    rows.push_back({idx, c[level_counts.size()], c[level_counts.size() + 1]});
  }
  return SparseTable::build(spec, rows);
}

// Fully observed table with y ~ N(0,1) and the given weights (unit default).
inline SparseTable random_full_table(const std::vector<int>& level_counts, std::uint64_t seed,
                                     double weight = 1.0) {
  std::mt19937_64 rng = make_rng(seed, 17);
  std::normal_distribution<double> normal(0, 1);
  std::vector<std::vector<double>> cells;
  std::vector<int> coords(level_counts.size(), 0);
  while (true) {
    std::vector<double> row(coords.begin(), coords.end());
    row.push_back(normal(rng));
    row.push_back(weight);
    cells.push_back(row);
    int f = static_cast<int>(level_counts.size()) - 1;
    while (f >= 0 && ++coords[f] == level_counts[f]) coords[f--] = 0;
    if (f < 0) break;
  }
  return make_table(level_counts, cells);
}

// Random subset of the grid, random y, weights uniform in [0.5, 4].
inline SparseTable random_sparse_table(const std::vector<int>& level_counts, std::size_t n_cells,
                                       std::uint64_t seed, bool unit_weights = false) {
  std::mt19937_64 rng = make_rng(seed, 23);
  std::normal_distribution<double> normal(0, 1);
  std::uniform_real_distribution<double> uw(0.5, 4.0);
  std::size_t grid = 1;
  for (int c : level_counts) grid *= static_cast<std::size_t>(c);
  std::vector<std::size_t> all(grid);
  std::iota(all.begin(), all.end(), 0);
  std::shuffle(all.begin(), all.end(), rng);
  n_cells = std::min(n_cells, grid);
  std::vector<std::vector<double>> cells;
  for (std::size_t i = 0; i < n_cells; ++i) {
    std::size_t rest = all[i];
    std::vector<double> row(level_counts.size() + 2);
    for (int f = static_cast<int>(level_counts.size()); f-- > 0;) {
      row[f] = static_cast<double>(rest % level_counts[f]);
      rest /= level_counts[f];
    }
    row[level_counts.size()] = normal(rng);
    row[level_counts.size() + 1] = unit_weights ? 1.0 : uw(rng);
    cells.push_back(row);
  }
  return make_table(level_counts, cells);
}

// Exhaustive margin sum, independent of the plan/kernel machinery.
inline std::map<MarginKey, double> brute_force_margin_sum(const SparseTable& table,
                                                          std::span<const double> values,
                                                          const std::vector<int>& J) {
  std::map<MarginKey, double> out;
  for (std::size_t p = 0; p < table.cell_count(); ++p) {
    MarginKey key;
    key.J = J;
    for (int f : J) key.L.push_back(table.index(p).coords[f]);
    out[key] += values[p];
  }
  return out;
}

// Densely assembled normal-equation system for one order: unknowns are the
// coefficients of every observed margin level, equations follow the
// stationarity of the penalized least squares objective.
struct DenseNormalSystem {
  Eigen::MatrixXd Z;
  Eigen::VectorXd u;
  std::vector<const MarginPlan*> plans;  // borrowed
  std::vector<int> offset;               // column offset per block
};

inline DenseNormalSystem assemble_normal_system(const SparseTable& table,
                                                const std::vector<MarginPlan>& plans,
                                                double lambda, std::span<const double> y,
                                                std::span<const double> weights,
                                                std::span<const double> prior) {
  DenseNormalSystem sys;
  int total = 0;
  for (const auto& plan : plans) {
    sys.plans.push_back(&plan);
    sys.offset.push_back(total);
    total += static_cast<int>(plan.group_count());
  }
  sys.Z = Eigen::MatrixXd::Zero(total, total);
  sys.u = Eigen::VectorXd::Zero(total);
  const std::size_t n = table.cell_count();
  for (std::size_t p = 0; p < n; ++p) {
    const double wl = weights[p] + lambda;
    for (std::size_t a = 0; a < plans.size(); ++a) {
      const int ra = sys.offset[a] + plans[a].group_of_cell(p);
      sys.u[ra] += weights[p] * y[p] + lambda * prior[p];
      for (std::size_t b = 0; b < plans.size(); ++b) {
        const int cb = sys.offset[b] + plans[b].group_of_cell(p);
        sys.Z(ra, cb) += wl;
      }
    }
  }
  return sys;
}

// Fitted values from a dense minimum-norm solve of the normal equations.
inline std::vector<double> dense_normal_solve_mu(const SparseTable& table,
                                                 const DenseNormalSystem& sys) {
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(sys.Z);
  Eigen::VectorXd beta = cod.solve(sys.u);
  std::vector<double> mu(table.cell_count(), 0.0);
  for (std::size_t p = 0; p < table.cell_count(); ++p)
    for (std::size_t b = 0; b < sys.plans.size(); ++b)
      mu[p] += beta[sys.offset[b] + sys.plans[b]->group_of_cell(p)];
  return mu;
}

// Max relative residual |u - Z beta| / (1 + |u|) over rows with positive
// diagonal, for coefficients produced by the iterative solver.
inline double normal_equation_residual(const DenseNormalSystem& sys,
                                       const CoefficientSet& coefficients) {
  Eigen::VectorXd beta(sys.Z.rows());
  int at = 0;
  for (const auto& block : coefficients.blocks)
    for (double v : block.values) beta[at++] = v;
  Eigen::VectorXd resid = sys.u - sys.Z * beta;
  double worst = 0;
  for (int r = 0; r < resid.size(); ++r) {
    if (sys.Z(r, r) <= 0) continue;
    worst = std::max(worst, std::abs(resid[r]) / (1.0 + std::abs(sys.u[r])));
  }
  return worst;
}

inline std::vector<MarginPlan> build_plans(const SparseTable& table, int order) {
  std::vector<MarginPlan> plans;
  for (const auto& J : subsets_of_size(table.spec().factor_count(), order))
    plans.push_back(MarginPlan::build(table, J));
  return plans;
}

inline double sup_diff(std::span<const double> a, std::span<const double> b) {
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace hanova::testing
