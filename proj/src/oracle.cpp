#include "hanova/oracle.hpp"

#include <cmath>

namespace hanova {

Eigen::Ref<const Eigen::MatrixXd> DenseBasis::incremental_block(int k) const {
  const int lo = (k == 1) ? 0 : dims[k - 2];
  const int hi = dims[k - 1];
  return U.middleCols(lo, hi - lo);
}

Eigen::VectorXd DenseBasis::project(int k, const Eigen::VectorXd& v) const {
  const auto Uk = U.leftCols(dims[k - 1]);
  return Uk * (Uk.transpose() * v);
}

DenseBasis build_basis(const SparseTable& table, std::size_t dense_threshold, double rel_tol) {
  const std::size_t n = table.cell_count();
  if (n > dense_threshold)
    throw ValidationError("table too large for the dense basis (" + std::to_string(n) + " cells, threshold " +
                          std::to_string(dense_threshold) + ")");
  const int m = table.spec().factor_count();

  DenseBasis basis;
  basis.n = static_cast<int>(n);
  basis.U.resize(n, n);
  int accepted = 0;

  auto try_accept = [&](Eigen::VectorXd col) {
    const double orig = col.norm();
    if (orig == 0) return;
    // MGS with one re-orthogonalization pass
    for (int pass = 0; pass < 2; ++pass)
      for (int j = 0; j < accepted; ++j) col -= basis.U.col(j).dot(col) * basis.U.col(j);
    const double resid = col.norm();
    if (resid <= rel_tol * orig) return;
    basis.U.col(accepted) = col / resid;
    ++accepted;
  };

  // constant direction first
  try_accept(Eigen::VectorXd::Ones(n));

  for (int k = 1; k <= m; ++k) {
    for (const auto& J : subsets_of_size(m, k)) {
      std::vector<int> dims_J;
      std::int64_t prod = 1;
      for (int f : J) {
        dims_J.push_back(table.spec().level_count(f));
        prod *= dims_J.back();
      }
      for (std::int64_t key = 0; key < prod; ++key) {
        // decode key to levels over J, row-major
        std::vector<Level> L(J.size());
        std::int64_t rest = key;
        for (std::size_t i = J.size(); i-- > 0;) {
          L[i] = static_cast<Level>(rest % dims_J[i]);
          rest /= dims_J[i];
        }
        Eigen::VectorXd col = Eigen::VectorXd::Zero(n);
        for (std::size_t p = 0; p < n; ++p) {
          bool match = true;
          for (std::size_t i = 0; i < J.size(); ++i)
            if (table.index(p).coords[J[i]] != L[i]) {
              match = false;
              break;
            }
          if (match) col[p] = 1.0;
        }
        try_accept(col);
      }
    }
    basis.dims.push_back(accepted);
  }

  // complete to an orthogonal matrix
  for (std::size_t i = 0; i < n && accepted < static_cast<int>(n); ++i)
    try_accept(Eigen::VectorXd::Unit(n, static_cast<Eigen::Index>(i)));
  if (accepted != static_cast<int>(n))
    throw ValidationError("basis completion failed");  // should not happen
  return basis;
}

namespace {

void check_posterior_inputs(const SparseTable& table, const DenseBasis& basis, double sigma2,
                            const std::vector<double>& sigmas) {
  const int m = table.spec().factor_count();
  if (!table.balanced())
    throw ValidationError("posterior mean oracle requires equal weights on all observed cells");
  if (static_cast<int>(table.cell_count()) != basis.n)
    throw ValidationError("basis does not match the table");
  if (static_cast<int>(sigmas.size()) != m + 1)
    throw ValidationError("need m+1 variance components (sigma_0^2..sigma_m^2)");
  for (double s : sigmas)
    if (s < 0) throw ValidationError("variance components must be non-negative");
  if (sigma2 < 0) throw ValidationError("sigma2 must be non-negative");
  if (sigma2 + sigmas[static_cast<std::size_t>(m)] == 0)
    throw ValidationError("sigma2 + sigma_m^2 must be positive");
}

// tau_k^2 = sigma_k^2 + ... + sigma_{m-1}^2
std::vector<double> taus_from(const std::vector<double>& sigmas, int m) {
  std::vector<double> tau(static_cast<std::size_t>(m) + 1, 0.0);
  for (int k = m - 1; k >= 0; --k) tau[k] = tau[k + 1] + sigmas[k];
  return tau;
}

}  // namespace

std::vector<double> dense_posterior_mean(const SparseTable& table, const DenseBasis& basis,
                                         double sigma2, const std::vector<double>& sigmas) {
  check_posterior_inputs(table, basis, sigma2, sigmas);
  const int m = table.spec().factor_count();
  const double sm2 = sigmas[static_cast<std::size_t>(m)];
  const auto tau = taus_from(sigmas, m);

  const std::size_t n = table.cell_count();
  Eigen::VectorXd y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = table.value(i);

  Eigen::VectorXd out = (sm2 / (sigma2 + sm2)) * y;
  for (int k = 1; k <= m; ++k) {
    const double ck = sigma2 / (sigma2 + sm2) - sigma2 / (sigma2 + sm2 + tau[k - 1]);
    if (ck == 0) continue;
    const auto Vk = basis.incremental_block(k);
    out += ck * (Vk * (Vk.transpose() * y));
  }
  return {out.data(), out.data() + n};
}

std::vector<double> dense_posterior_mean_resolvent(const SparseTable& table,
                                                   const DenseBasis& basis, double sigma2,
                                                   const std::vector<double>& sigmas) {
  check_posterior_inputs(table, basis, sigma2, sigmas);
  const int m = table.spec().factor_count();
  const double sm2 = sigmas[static_cast<std::size_t>(m)];
  const auto tau = taus_from(sigmas, m);

  const std::size_t n = table.cell_count();
  Eigen::VectorXd y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = table.value(i);

  const int dm = basis.dims.back();
  Eigen::VectorXd prior_diag(dm);
  for (int k = 1; k <= m; ++k) {
    const int lo = (k == 1) ? 0 : basis.dims[k - 2];
    for (int j = lo; j < basis.dims[k - 1]; ++j) prior_diag[j] = tau[k - 1];
  }
  const auto Um = basis.U.leftCols(dm);
  Eigen::MatrixXd M = Um * prior_diag.asDiagonal() * Um.transpose();
  M.diagonal().array() += sigma2 + sm2;
  Eigen::VectorXd out = y - sigma2 * M.lu().solve(y);
  return {out.data(), out.data() + n};
}

std::vector<double> two_way_additive_fit(const SparseTable& table) {
  if (table.spec().factor_count() != 2)
    throw ValidationError("two-way closed form requires exactly two factors");
  if (!table.fully_observed())
    throw ValidationError("two-way closed form requires a fully observed table");
  for (std::size_t p = 0; p < table.cell_count(); ++p)
    if (table.weight(p) != 1.0)
      throw ValidationError("two-way closed form requires unit weights");

  const int I = table.spec().level_count(0);
  const int J = table.spec().level_count(1);
  std::vector<double> row_mean(I, 0.0), col_mean(J, 0.0);
  double grand = 0;
  for (std::size_t p = 0; p < table.cell_count(); ++p) {
    const auto& c = table.index(p).coords;
    row_mean[c[0]] += table.value(p);
    col_mean[c[1]] += table.value(p);
    grand += table.value(p);
  }
  for (double& v : row_mean) v /= J;
  for (double& v : col_mean) v /= I;
  grand /= static_cast<double>(I) * J;

  std::vector<double> fit(table.cell_count());
  for (std::size_t p = 0; p < table.cell_count(); ++p) {
    const auto& c = table.index(p).coords;
    fit[p] = row_mean[c[0]] + col_mean[c[1]] - grand;
  }
  return fit;
}

std::vector<double> barry_two_way(const SparseTable& table, double lambda) {
  if (lambda < 0) throw ValidationError("lambda must be non-negative");
  std::vector<double> additive = two_way_additive_fit(table);
  if (std::isinf(lambda)) return additive;
  std::vector<double> out(table.cell_count());
  for (std::size_t p = 0; p < table.cell_count(); ++p)
    out[p] = table.value(p) / (1 + lambda) + lambda * additive[p] / (1 + lambda);
  return out;
}

}  // namespace hanova
