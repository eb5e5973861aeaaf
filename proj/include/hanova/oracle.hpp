#pragma once

#include <Eigen/Dense>
#include <vector>

#include "hanova/table.hpp"
#include "hanova/types.hpp"

namespace hanova {

// Orthonormal basis of R^n (n = observed cells) organized by the nested
// effect subspaces S_1 c S_2 c ... c S_m. Column 0 is the constant
// direction; S_k spans columns [0, dim(k)). Test-scale only.
struct DenseBasis {
  int n = 0;
  std::vector<int> dims;  // dims[k-1] = dim S_k, k = 1..m
  Eigen::MatrixXd U;      // n x n orthogonal

  // Columns spanning S_k but not S_{k-1}; block 1 includes the constant.
  Eigen::Ref<const Eigen::MatrixXd> incremental_block(int k) const;
  // Projection of v onto S_k.
  Eigen::VectorXd project(int k, const Eigen::VectorXd& v) const;
};

// Incrementally orthonormalizes the order-1..order-m indicator designs over
// the observed cells (modified Gram-Schmidt with one re-orthogonalization
// pass), discarding columns below a relative tolerance, then completes to a
// full orthogonal matrix.
DenseBasis build_basis(const SparseTable& table, std::size_t dense_threshold = 5000,
                       double rel_tol = 1e-10);

// Exact posterior mean of the hierarchical Gaussian model on a balanced
// table, evaluated on the table's responses as given (callers wanting
// centered-model semantics subtract the grand mean first):
//   sm2/(s2+sm2) * y + sum_k [s2/(s2+sm2) - s2/(s2+sm2+tau_{k-1}^2)] VkVk' y
// `sigmas` holds the variances (sigma_0^2 ... sigma_m^2).
std::vector<double> dense_posterior_mean(const SparseTable& table, const DenseBasis& basis,
                                         double sigma2, const std::vector<double>& sigmas);

// Same quantity through the resolvent form
//   y - s2 * ((s2+sm2) I + Um Sigma Um')^{-1} y
// kept as an independent route for cross-checking.
std::vector<double> dense_posterior_mean_resolvent(const SparseTable& table,
                                                   const DenseBasis& basis, double sigma2,
                                                   const std::vector<double>& sigmas);

// Closed-form shrinkage estimate on a fully observed two-way table with
// unit weights: y/(1+lambda) + lambda * P_A y / (1+lambda), where P_A y is
// the additive fit ybar_i. + ybar_.j - ybar_.. . Infinite lambda returns
// the additive fit.
std::vector<double> barry_two_way(const SparseTable& table, double lambda);

// The additive fit P_A y itself (same preconditions).
std::vector<double> two_way_additive_fit(const SparseTable& table);

}  // namespace hanova
