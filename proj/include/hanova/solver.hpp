#pragma once

#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "hanova/margin.hpp"
#include "hanova/table.hpp"
#include "hanova/types.hpp"

namespace hanova {

// Penalty value meaning "shrink all the way to the prior".
inline constexpr double kInfiniteLambda = std::numeric_limits<double>::infinity();

struct ConvergenceOpts {
  double tol = 1e-8;      // sweep-to-sweep sup-norm change of mu, relative to 1+sup|y|
  int max_sweeps = 500;
};

// Order-k effects for one factor subset J, stored compactly: one
// coefficient per margin level observed in the training table, absent
// levels are exactly zero. Logically the block spans the full
// cross-product of J's level counts.
struct CoefficientBlock {
  std::vector<int> J;
  std::vector<int> dims;               // level counts of J's factors
  std::vector<std::int64_t> keys;      // ascending flat margin keys
  std::vector<double> values;

  double at_key(std::int64_t key) const;
  double at_levels(std::span<const Level> L) const;
  std::int64_t flat_key(const CellIndex& idx) const;
};

struct CoefficientSet {
  int order = 0;
  std::vector<CoefficientBlock> blocks;  // lexicographic by J

  // Sum of block coefficients at the cell's margins; well-defined for any
  // valid index, observed or not.
  double eval(const CellIndex& idx) const;
};

// State of the block coordinate descent for one order.
struct BackfitWorkspace {
  int order = 0;
  double lambda = 0;
  std::vector<MarginPlan> plans;             // per block
  std::vector<std::vector<double>> u;        // right-hand sides, per block group
  std::vector<std::vector<double>> z;        // diagonal coefficients sum(n_I+lambda)
  std::vector<std::vector<double>> beta;
  std::vector<double> wl;                    // n_I + lambda per cell
  std::vector<double> y;                     // responses being fit
  std::vector<double> weights;
  std::vector<double> prior;
  std::vector<double> mu;                    // current fit, kept equal to sum of betas
};

struct OrderFit {
  int order = 0;
  CoefficientSet coefficients;
  std::vector<double> mu;           // fitted values at observed cells, same scale as the fit's y
  double lambda = 0;
  int sweeps = 0;
  bool converged = false;
  bool inherits_prior = false;      // infinite-lambda order: mu == previous order's mu
  std::vector<double> objective_trace;
};

struct HanovaFit {
  FactorSpec spec;
  double grand_mean = 0;
  std::vector<OrderFit> order_fits;  // k = 1..maxk
  int maxk = 0;
  std::vector<double> lambdas;
  bool centered = true;

  // grand_mean + order-k coefficient sum; order 0 is the grand mean and
  // infinite-lambda orders fall through to the order below.
  double predict(const CellIndex& idx, std::optional<int> order = {}) const;
  // Fitted values at the training cells, mean restored.
  std::vector<double> fitted(int order) const;
};

// sum n_I (y_I - mu_I)^2 + lambda sum (mu_I - prior_I)^2 over observed cells.
double wpls_objective(const SparseTable& table, std::span<const double> mu, double lambda,
                      std::span<const double> prior);
double wpls_objective(std::span<const double> y, std::span<const double> weights,
                      std::span<const double> mu, double lambda, std::span<const double> prior);

BackfitWorkspace make_workspace(const SparseTable& table, std::span<const double> y,
                                std::span<const double> weights, int order, double lambda,
                                std::span<const double> prior);

// One Gauss-Seidel pass over all blocks in lexicographic order; returns the
// sup-norm of the coefficient changes. Margin levels with no observed cell
// are skipped, leaving their coefficients at zero.
double backfit_sweep(BackfitWorkspace& ws);

// Solves the order-k weighted penalized least squares problem on the
// table's responses. An infinite lambda short-circuits to mu = prior.
OrderFit fit_order(const SparseTable& table, int order, double lambda,
                   std::span<const double> prior_mu, const ConvergenceOpts& opts = {});

// Same, with explicit responses and weights (the table provides structure).
OrderFit fit_order_on(const SparseTable& table, std::span<const double> y,
                      std::span<const double> weights, int order, double lambda,
                      std::span<const double> prior_mu, const ConvergenceOpts& opts = {});

// Runs the full hierarchy: grand mean, then order k = 1..maxk, each order
// shrinking toward the previous one. Responses are centered by the weighted
// grand mean before order 1; the mean is restored in predict/fitted.
HanovaFit fit_hanova(const SparseTable& table, const std::vector<double>& lambdas, int maxk,
                     const ConvergenceOpts& opts = {});

// Posterior blend of data and the full-order fit:
// (sigma_m2 * y + sigma2 * mu_hat) / (sigma2 + sigma_m2) per observed cell.
// Requires maxk == m.
std::vector<double> final_blend(const HanovaFit& fit, const SparseTable& table, double sigma2,
                                double sigma_m2);

}  // namespace hanova
