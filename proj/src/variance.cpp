#include "hanova/variance.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "hanova/solver.hpp"

namespace hanova {

double projection_sq_norm(const SparseTable& table, int order, const ProjectionOpts& opts) {
  const int m = table.spec().factor_count();
  if (order < 1 || order > m) throw ValidationError("projection order out of range");
  const std::size_t n = table.cell_count();
  const std::vector<double> unit(n, 1.0);
  const std::vector<double> zero(n, 0.0);

  ConvergenceOpts conv;
  conv.tol = opts.tol;
  conv.max_sweeps = opts.max_sweeps;
  OrderFit fit = fit_order_on(table, table.values(), unit, order, opts.jitter, zero, conv);

  // The jittered minimizer is P_k y / (1 + jitter) exactly.
  double q = 0;
  for (double v : fit.mu) q += v * v;
  q *= (1.0 + opts.jitter) * (1.0 + opts.jitter);
  if (!fit.converged)
    throw ProjectionConvergenceError(
        "projection fit did not converge in " + std::to_string(fit.sweeps) + " sweeps", q);
  return q;
}

namespace {

int closed_form_dim(const FactorSpec& spec, int order) {
  const int m = spec.factor_count();
  std::int64_t d = 0;
  for (int j = 0; j <= order; ++j)
    for (const auto& J : subsets_of_size(m, j)) {
      std::int64_t prod = 1;
      for (int f : J) prod *= spec.level_count(f) - 1;
      d += prod;
    }
  return static_cast<int>(d);
}

int numeric_rank_dim(const SparseTable& table, int order, double rank_tol) {
  const int m = table.spec().factor_count();
  const std::size_t n = table.cell_count();
  std::size_t p = 0;
  for (const auto& J : subsets_of_size(m, order)) {
    std::size_t prod = 1;
    for (int f : J) prod *= static_cast<std::size_t>(table.spec().level_count(f));
    p += prod;
  }
  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(n, p);
  std::size_t col0 = 0;
  for (const auto& J : subsets_of_size(m, order)) {
    std::vector<std::int64_t> stride(J.size(), 1);
    for (std::size_t i = J.size(); i-- > 1;)
      stride[i - 1] = stride[i] * table.spec().level_count(J[i]);
    std::size_t prod = 1;
    for (int f : J) prod *= static_cast<std::size_t>(table.spec().level_count(f));
    for (std::size_t pos = 0; pos < n; ++pos) {
      std::int64_t key = 0;
      for (std::size_t i = 0; i < J.size(); ++i)
        key += stride[i] * table.index(pos).coords[J[i]];
      X(pos, col0 + static_cast<std::size_t>(key)) = 1.0;
    }
    col0 += prod;
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  qr.setThreshold(rank_tol);
  return static_cast<int>(qr.rank());
}

}  // namespace

int subspace_dim(const SparseTable& table, int order, const SubspaceOpts& opts) {
  const int m = table.spec().factor_count();
  if (order < 1 || order > m) throw ValidationError("subspace order out of range");
  // The order-m design has one free coefficient per observed cell, so the
  // top subspace always spans everything.
  if (order == m) return static_cast<int>(table.cell_count());
  if (table.fully_observed()) return closed_form_dim(table.spec(), order);
  if (table.cell_count() > opts.numeric_rank_threshold)
    throw ValidationError(
        "numeric rank needed for a sparse table with " + std::to_string(table.cell_count()) +
        " cells (threshold " + std::to_string(opts.numeric_rank_threshold) +
        "): supply lambda directly or select it by cross-validation");
  return numeric_rank_dim(table, order, opts.rank_tol);
}

SubspaceInfo compute_subspace_info(const SparseTable& table, const SubspaceOpts& opts) {
  SubspaceInfo info;
  info.m = table.spec().factor_count();
  info.n = table.cell_count();
  info.method = table.fully_observed() ? DimMethod::kClosedForm : DimMethod::kNumericRank;

  const double mean = unweighted_mean(table);
  std::vector<double> yc(info.n);
  for (std::size_t i = 0; i < info.n; ++i) yc[i] = table.value(i) - mean;
  SparseTable centered = table.with_values(yc);

  info.y_sq_norm = 0;
  for (double v : yc) info.y_sq_norm += v * v;

  for (int k = 1; k <= info.m; ++k) {
    info.dims.push_back(subspace_dim(table, k, opts));
    if (k == info.m)
      info.sq_norms.push_back(info.y_sq_norm);  // P_m is the identity on observed cells
    else
      info.sq_norms.push_back(projection_sq_norm(centered, k, opts.projection));
  }
  return info;
}

VarianceComponents estimate_sigmas(const SparseTable& table, double sigma2,
                                   const SubspaceInfo& info) {
  if (sigma2 < 0) throw ValidationError("sigma2 must be non-negative");
  const int m = info.m;
  if (static_cast<int>(info.dims.size()) != m || static_cast<int>(info.sq_norms.size()) != m)
    throw ValidationError("subspace info incomplete");

  VarianceComponents vc;
  vc.m = m;
  vc.sigma2 = sigma2;
  vc.sigma2_eff = effective_sigma2(table, sigma2);

  // Gap j spans Q_j..Q_{j+1}, with the centered conventions d_0 = 1, Q_0 = 0
  // and d_{m+1} = n, Q_{m+1} = ||y||^2.
  std::vector<double> Q(static_cast<std::size_t>(m) + 2);
  std::vector<double> d(static_cast<std::size_t>(m) + 2);
  Q[0] = 0;
  d[0] = 1;
  for (int k = 1; k <= m; ++k) {
    Q[k] = info.sq_norms[k - 1];
    d[k] = info.dims[k - 1];
  }
  Q[m + 1] = info.y_sq_norm;
  d[m + 1] = static_cast<double>(info.n);

  std::vector<double> gap(static_cast<std::size_t>(m) + 1);
  std::vector<bool> gap_defined(static_cast<std::size_t>(m) + 1);
  for (int j = 0; j <= m; ++j) {
    gap_defined[j] = d[j + 1] > d[j];
    gap[j] = gap_defined[j] ? (Q[j + 1] - Q[j]) / (d[j + 1] - d[j]) : 0.0;
  }

  vc.sigmas_raw.assign(static_cast<std::size_t>(m) + 1, 0.0);
  vc.degenerate.assign(static_cast<std::size_t>(m) + 1, false);

  vc.sigmas_raw[m] = (gap_defined[m] ? gap[m] : 0.0) - vc.sigma2_eff;
  vc.degenerate[m] = !gap_defined[m];

  // Working down, each component is its gap minus the next defined gap;
  // past the top the "next gap" is the known noise plus the top component.
  double next_gap = gap_defined[m] ? gap[m] : vc.sigma2_eff + std::max(0.0, vc.sigmas_raw[m]);
  for (int k = m - 1; k >= 0; --k) {
    if (!gap_defined[k]) {
      vc.sigmas_raw[k] = 0.0;
      vc.degenerate[k] = true;
      continue;  // next_gap carries past the hole
    }
    vc.sigmas_raw[k] = gap[k] - next_gap;
    next_gap = gap[k];
  }

  vc.sigmas.resize(vc.sigmas_raw.size());
  vc.clamped.assign(vc.sigmas_raw.size(), false);
  for (std::size_t k = 0; k < vc.sigmas_raw.size(); ++k) {
    vc.clamped[k] = vc.sigmas_raw[k] < 0;
    vc.sigmas[k] = std::max(0.0, vc.sigmas_raw[k]);
  }

  vc.taus.assign(static_cast<std::size_t>(m) + 1, 0.0);
  for (int k = m - 1; k >= 0; --k) vc.taus[k] = vc.taus[k + 1] + vc.sigmas[k];
  return vc;
}

std::vector<double> lambdas_from_sigmas(const VarianceComponents& vc, std::optional<double> cap) {
  std::vector<double> lambdas(vc.m);
  double numerator = vc.sigma2_eff;  // sigma2 + sigma_m^2 + ... + sigma_k^2
  for (int k = vc.m; k >= 1; --k) {
    numerator += vc.sigmas[k];
    const double denom = vc.sigmas[k - 1];
    double lam = denom > 0 ? numerator / denom : kInfiniteLambda;
    if (cap) lam = std::min(lam, *cap);
    lambdas[k - 1] = lam;
  }
  return lambdas;
}

double effective_sigma2(const SparseTable& table, double sigma2) {
  double s = 0;
  for (std::size_t p = 0; p < table.cell_count(); ++p) s += 1.0 / table.weight(p);
  return sigma2 * s / static_cast<double>(table.cell_count());
}

}  // namespace hanova
