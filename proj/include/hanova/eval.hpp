#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hanova/solver.hpp"
#include "hanova/table.hpp"
#include "hanova/types.hpp"
#include "hanova/variance.hpp"

namespace hanova {

// Settings for drawing tables from the hierarchical random effects model.
// `sigma_sds` are the component standard deviations sigma_0, sigma_1, ...
// (short lists are padded with zeros); `noise_sd` is the observation sigma.
struct SimSpec {
  std::vector<int> level_counts;
  std::vector<double> sigma_sds;
  double sigma_m_sd = 0;
  double noise_sd = 0;

  enum class Weights { kEqual, kRatioBounded };
  Weights weight_scheme = Weights::kEqual;
  double equal_weight = 1.0;
  double weight_ratio = 10.0;  // log-uniform weights on [1, ratio]

  double observe_rate = 1.0;
  int replicates = 1;
  std::uint64_t seed = 0;
  std::size_t dense_threshold = 5000;

  void validate() const;
  int m() const { return static_cast<int>(level_counts.size()); }
  // sigma_0^2 .. sigma_m^2
  std::vector<double> component_variances() const;
  int true_order() const;  // highest k with sigma_{k-1} > 0
};

struct SimInstance {
  SparseTable table;
  std::vector<double> true_mu;  // aligned with observed cells
  std::uint64_t replicate = 0;
};

// Deterministic in (spec.seed, replicate). Below the dense threshold the
// coefficients are drawn in the orthogonal coordinates of the exact nested
// basis; above it, as independent pure-interaction margin effects scaled so
// each contrast direction keeps its model variance (exact on balanced fully
// observed tables).
SimInstance simulate(const SimSpec& spec, std::uint64_t replicate);

double rmse(std::span<const double> pred, std::span<const double> truth,
            std::span<const double> weights = {});

struct CvOptions {
  int folds = 5;
  int cv_order = 0;  // 0 means maxk
  std::uint64_t seed = 0;
  ConvergenceOpts conv;
};

struct CvResult {
  int cv_order = 0;
  std::vector<double> grid;
  std::uint64_t fold_seed = 0;
  std::vector<double> mean_loss;               // per candidate
  std::vector<std::vector<double>> fold_loss;  // [candidate][fold]
  double selected_candidate = 0;
  double one_se_candidate = 0;
  std::vector<double> selected;  // full lambda vector with the winner plugged in
  std::vector<double> one_se;
};

// Coordinate-wise K-fold CV: the grid varies one order's lambda while the
// others stay at `base_lambdas`. Held-out loss is the weighted squared
// error of predict at order maxk. Ties prefer the larger lambda.
CvResult cross_validate(const SparseTable& table, int maxk, const std::vector<double>& grid,
                        const std::vector<double>& base_lambdas, const CvOptions& opts);

// Default grid: empirical lambda times {0.1,0.2,0.5,1,2,5,10}; an infinite
// empirical value falls back to multiples of a large finite pivot.
std::vector<double> default_cv_grid(double empirical_lambda);

struct Method {
  enum class Kind { kOls, kHanovaOracle, kHanovaEmpirical, kBayesOracle };
  Kind kind = Kind::kOls;
  int order = 1;  // ignored for the Bayes oracle

  std::string name() const;
};

struct ExperimentOpts {
  ConvergenceOpts conv;
  SubspaceOpts subspace;
  std::optional<double> lambda_cap = 5.0;  // applied to empirically estimated lambdas
  bool parallel = true;
};

struct ExperimentResult {
  std::vector<Method> methods;
  std::vector<std::vector<double>> rmse;  // [method][replicate]
  std::optional<double> bayes_risk;       // closed-form reference, equal weights only

  double mean_rmse(std::size_t method) const;
  double quantile_rmse(std::size_t method, double q) const;
};

// Per-replicate RMSE of each method against the simulated truth on the
// observed cells. Replicates run in parallel with per-replicate streams.
ExperimentResult run_experiment(const SimSpec& spec, const std::vector<Method>& methods,
                                const ExperimentOpts& opts = {});

// Exact risk (RMSE) of the posterior mean under the generating model, for
// equal-weight tables: the reference line the oracle fit should attain.
double bayes_risk_rmse(const SparseTable& table, double per_cell_noise_var,
                       const std::vector<double>& component_variances,
                       const SubspaceOpts& opts = {});

void write_experiment_csv(const ExperimentResult& result, const std::string& path);
void write_cv_csv(const CvResult& result, const std::string& path);

}  // namespace hanova
