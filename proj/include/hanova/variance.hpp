#pragma once

#include <optional>
#include <vector>

#include "hanova/table.hpp"
#include "hanova/types.hpp"

namespace hanova {

struct ProjectionOpts {
  double jitter = 1e-10;   // ridge added to resolve rank deficiency
  double tol = 1e-11;
  int max_sweeps = 5000;
};

// Non-convergence of the projection fit; carries the partial value.
struct ProjectionConvergenceError : ValidationError {
  double partial_value;
  ProjectionConvergenceError(const std::string& msg, double partial)
      : ValidationError(msg), partial_value(partial) {}
};

struct SubspaceOpts {
  ProjectionOpts projection;
  std::size_t numeric_rank_threshold = 20000;  // max cells for the numeric-rank path
  double rank_tol = 1e-10;
};

enum class DimMethod { kClosedForm, kNumericRank };

// Dimensions d_k of the effect subspaces and squared projection norms
// Q_k = ||P_k y||^2 of the centered responses, k = 1..m, plus ||y||^2.
struct SubspaceInfo {
  int m = 0;
  std::size_t n = 0;
  std::vector<int> dims;        // d_1..d_m
  std::vector<double> sq_norms; // Q_1..Q_m
  double y_sq_norm = 0;
  DimMethod method = DimMethod::kClosedForm;
};

// ||P_k y||^2 where P_k projects onto the order-k effect subspace with all
// cells weighted equally. Responses are taken as given: center them first.
double projection_sq_norm(const SparseTable& table, int order, const ProjectionOpts& opts = {});

// Rank of the order-k indicator design restricted to the observed cells:
// closed form on fully observed tables, numeric rank otherwise (only up to
// the configured cell-count threshold).
int subspace_dim(const SparseTable& table, int order, const SubspaceOpts& opts = {});

// Centers responses by the unweighted mean over observed cells, then fills
// dims and projection norms for every order.
SubspaceInfo compute_subspace_info(const SparseTable& table, const SubspaceOpts& opts = {});

struct VarianceComponents {
  int m = 0;
  double sigma2 = 0;       // supplied observation noise variance
  double sigma2_eff = 0;   // sigma2 * tr(N^-1)/n, used by the estimators
  std::vector<double> sigmas_raw;  // sigma_0^2..sigma_m^2 before clamping
  std::vector<double> sigmas;      // clamped at zero
  std::vector<bool> clamped;
  std::vector<bool> degenerate;    // no usable dimension gap
  std::vector<double> taus;        // tau_k^2 = sigma_k^2+..+sigma_{m-1}^2, k = 0..m
};

// Method-of-moments components from the quadratic forms in `info`.
VarianceComponents estimate_sigmas(const SparseTable& table, double sigma2,
                                   const SubspaceInfo& info);

// lambda_k = (sigma2_eff + sigma_m^2 + ... + sigma_k^2) / sigma_{k-1}^2,
// with division by a zero component giving the infinite sentinel. A cap
// truncates finite and infinite values alike.
std::vector<double> lambdas_from_sigmas(const VarianceComponents& vc,
                                        std::optional<double> cap = {});

// sigma2 * (sum over observed cells of 1/n_I) / |cells|
double effective_sigma2(const SparseTable& table, double sigma2);

}  // namespace hanova
