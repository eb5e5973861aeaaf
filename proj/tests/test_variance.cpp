#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "hanova/eval.hpp"
#include "hanova/oracle.hpp"
#include "hanova/variance.hpp"
#include "helpers.hpp"

using namespace hanova;
using namespace hanova::testing;

namespace {

std::vector<double> centered_values(const SparseTable& t) {
  const double mean = unweighted_mean(t);
  std::vector<double> yc(t.cell_count());
  for (std::size_t p = 0; p < t.cell_count(); ++p) yc[p] = t.value(p) - mean;
  return yc;
}

}  // namespace

TEST_CASE("one-factor projection is saturated") {
  SparseTable t = make_table({4}, {{0, 3, 1}, {1, -1, 1}, {2, 0.5, 1}, {3, 2, 1}});
  SparseTable centered = t.with_values(centered_values(t));
  double norm2 = 0;
  for (double v : centered.values()) norm2 += v * v;
  CHECK(projection_sq_norm(centered, 1) == doctest::Approx(norm2).epsilon(1e-10));
}

TEST_CASE("pure interaction pattern has no main-effect energy") {
  SparseTable t =
      make_table({2, 2}, {{0, 0, 1, 1}, {0, 1, -1, 1}, {1, 0, -1, 1}, {1, 1, 1, 1}});
  CHECK(projection_sq_norm(t, 1) < 1e-16);
  CHECK(projection_sq_norm(t, 2) == doctest::Approx(4.0).epsilon(1e-9));
}

TEST_CASE("projection norms match the dense basis oracle") {
  SparseTable t = random_sparse_table({4, 3}, 9, 61, /*unit_weights=*/true);
  SparseTable centered = t.with_values(centered_values(t));
  DenseBasis basis = build_basis(centered);
  Eigen::VectorXd y(centered.cell_count());
  for (std::size_t p = 0; p < centered.cell_count(); ++p) y[p] = centered.value(p);
  for (int k = 1; k <= 2; ++k) {
    const double oracle = basis.project(k, y).squaredNorm();
    const double iterative = projection_sq_norm(centered, k);
    CHECK(iterative == doctest::Approx(oracle).epsilon(1e-8));
  }
}

TEST_CASE("balanced full tables: iterative projections match the basis") {
  SparseTable t = random_full_table({3, 3, 2}, 71);
  SparseTable centered = t.with_values(centered_values(t));
  DenseBasis basis = build_basis(centered);
  Eigen::VectorXd y(centered.cell_count());
  for (std::size_t p = 0; p < centered.cell_count(); ++p) y[p] = centered.value(p);
  for (int k = 1; k <= 3; ++k) {
    const double oracle = basis.project(k, y).squaredNorm();
    const double iterative = projection_sq_norm(centered, k);
    CHECK(std::abs(iterative - oracle) <= 1e-8 * std::max(1.0, oracle));
  }
}

TEST_CASE("projection fit reports non-convergence with a partial value") {
  SparseTable t = random_full_table({5, 5}, 3);
  ProjectionOpts opts;
  opts.max_sweeps = 1;
  opts.tol = 1e-16;
  CHECK_THROWS_AS((void)projection_sq_norm(t, 1, opts), ProjectionConvergenceError);
  try {
    (void)projection_sq_norm(t, 1, opts);
  } catch (const ProjectionConvergenceError& e) {
    CHECK(e.partial_value > 0);
  }
}

TEST_CASE("subspace dimensions, closed form") {
  SparseTable t = random_full_table({2, 2}, 4);
  CHECK(subspace_dim(t, 1) == 3);
  CHECK(subspace_dim(t, 2) == 4);

  SparseTable big = random_full_table({10, 10}, 4);
  CHECK(subspace_dim(big, 1) == 1 + 9 + 9);
  CHECK(subspace_dim(big, 2) == 100);

  SparseTable three = random_full_table({3, 4, 2}, 4);
  CHECK(subspace_dim(three, 1) == 1 + 2 + 3 + 1);
  CHECK(subspace_dim(three, 2) == 7 + 2 * 3 + 2 * 1 + 3 * 1);
  CHECK(subspace_dim(three, 3) == 24);
}

TEST_CASE("subspace dimension by numeric rank matches a dense free-parameter design") {
  SparseTable t = random_sparse_table({3, 3}, 5, 29);
  // intercept + (3-1) + (3-1) treatment-coded columns
  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(5, 5);
  for (std::size_t p = 0; p < t.cell_count(); ++p) {
    X(p, 0) = 1;
    const auto& c = t.index(p).coords;
    if (c[0] >= 1) X(p, c[0]) = 1;
    if (c[1] >= 1) X(p, 2 + c[1]) = 1;
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  qr.setThreshold(1e-10);
  CHECK(subspace_dim(t, 1) == static_cast<int>(qr.rank()));
}

TEST_CASE("numeric rank path refuses oversized tables") {
  SparseTable t = random_sparse_table({30, 30}, 200, 5);
  SubspaceOpts opts;
  opts.numeric_rank_threshold = 100;
  CHECK_THROWS_WITH_AS((void)subspace_dim(t, 1, opts), doctest::Contains("cross-validation"),
                       ValidationError);
}

TEST_CASE("Q_k is monotone and bounded by the total energy") {
  for (std::uint64_t seed : {11ULL, 12ULL}) {
    SparseTable t = random_sparse_table({3, 3, 2}, 13, seed, /*unit_weights=*/true);
    SubspaceInfo info = compute_subspace_info(t);
    for (std::size_t k = 1; k < info.sq_norms.size(); ++k) {
      CHECK(info.sq_norms[k] >= info.sq_norms[k - 1] - 1e-10);
      CHECK(info.dims[k] >= info.dims[k - 1]);
    }
    CHECK(info.sq_norms.back() <= info.y_sq_norm + 1e-10);
  }
}

TEST_CASE("zero responses clamp every component to zero") {
  SparseTable t = random_full_table({3, 3}, 2).with_values(std::vector<double>(9, 0.0));
  SubspaceInfo info = compute_subspace_info(t);
  VarianceComponents vc = estimate_sigmas(t, 1.0, info);
  for (int k = 0; k <= 2; ++k) CHECK(vc.sigmas[k] == 0.0);
  CHECK(vc.sigmas_raw[2] == doctest::Approx(-1.0));  // top gap is degenerate: 0 - sigma2
  CHECK(vc.clamped[2]);
  CHECK(vc.degenerate[2]);
}

TEST_CASE("hand-computed components for data in the additive space") {
  // 3x3 full table, y_ij = alpha_i + gamma_j with alpha=(1,0,-1), gamma=(2,0,-2)
  std::vector<std::vector<double>> cells;
  const double alpha[] = {1, 0, -1};
  const double gamma[] = {2, 0, -2};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      cells.push_back({double(i), double(j), alpha[i] + gamma[j], 1.0});
  SparseTable t = make_table({3, 3}, cells);
  SubspaceInfo info = compute_subspace_info(t);
  CHECK(info.dims == std::vector<int>{5, 9});
  CHECK(info.sq_norms[0] == doctest::Approx(30.0).epsilon(1e-9));
  CHECK(info.sq_norms[1] == doctest::Approx(30.0).epsilon(1e-12));

  VarianceComponents vc = estimate_sigmas(t, 1.0, info);
  // gap structure: 30/(5-1) - 0, then 0 - (sigma2 + 0), then the degenerate top
  CHECK(vc.sigmas_raw[0] == doctest::Approx(7.5).epsilon(1e-9));
  CHECK(vc.sigmas_raw[1] == doctest::Approx(-1.0).epsilon(1e-9));
  CHECK(vc.sigmas_raw[2] == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(vc.sigmas[0] == doctest::Approx(7.5).epsilon(1e-9));
  CHECK(vc.sigmas[1] == 0.0);
  CHECK(vc.sigmas[2] == 0.0);
  CHECK(vc.clamped[1]);
  CHECK(vc.taus[0] == doctest::Approx(7.5).epsilon(1e-9));
  CHECK(vc.taus[1] == 0.0);

  auto lambdas = lambdas_from_sigmas(vc);
  CHECK(lambdas[0] == doctest::Approx(1.0 / 7.5).epsilon(1e-9));
  CHECK(std::isinf(lambdas[1]));
}

TEST_CASE("lambda formula arithmetic") {
  VarianceComponents vc;
  vc.m = 2;
  vc.sigma2 = 1.0;
  vc.sigma2_eff = 1.0;
  vc.sigmas = {4.0, 1.0, 0.0};
  auto lambdas = lambdas_from_sigmas(vc);
  CHECK(lambdas[0] == doctest::Approx(0.5));
  CHECK(lambdas[1] == doctest::Approx(1.0));

  vc.sigmas = {0.0, 1.0, 0.0};
  auto inf_first = lambdas_from_sigmas(vc);
  CHECK(std::isinf(inf_first[0]));
  auto capped = lambdas_from_sigmas(vc, 5.0);
  CHECK(capped[0] == 5.0);
}

TEST_CASE("lambdas are scale equivariant") {
  VarianceComponents vc;
  vc.m = 3;
  vc.sigma2 = 0.7;
  vc.sigma2_eff = 0.7;
  vc.sigmas = {3.0, 1.2, 0.4, 0.1};
  auto base = lambdas_from_sigmas(vc);
  const double c = 17.5;
  VarianceComponents scaled = vc;
  scaled.sigma2 *= c;
  scaled.sigma2_eff *= c;
  for (double& s : scaled.sigmas) s *= c;
  auto rescaled = lambdas_from_sigmas(scaled);
  for (int k = 0; k < 3; ++k) CHECK(rescaled[k] == doctest::Approx(base[k]).epsilon(1e-12));
}

TEST_CASE("effective sigma2") {
  SparseTable equal = make_table({2}, {{0, 1, 1}, {1, 2, 1}});
  CHECK(effective_sigma2(equal, 2.5) == doctest::Approx(2.5));

  SparseTable uneven = make_table({2}, {{0, 1, 1}, {1, 2, 4}});
  CHECK(effective_sigma2(uneven, 2.0) == doctest::Approx(1.25));

  SparseTable t = random_sparse_table({3, 3}, 7, 83);
  double acc = 0;
  for (std::size_t p = 0; p < t.cell_count(); ++p) acc += 1.0 / t.weight(p);
  CHECK(effective_sigma2(t, 3.0) == doctest::Approx(3.0 * acc / t.cell_count()).epsilon(1e-14));
}

TEST_CASE("component estimates are unbiased on simulated tables") {
  // 6x5 grid, equal weights 4, per-review noise 1 (so cell noise sd = 0.5),
  // components (sigma_0, sigma_1) = (2, 1)
  SimSpec spec;
  spec.level_counts = {6, 5};
  spec.sigma_sds = {2.0, 1.0};
  spec.noise_sd = 1.0;
  spec.weight_scheme = SimSpec::Weights::kEqual;
  spec.equal_weight = 4.0;
  spec.seed = 424242;

  const int reps = 400;
  std::vector<double> s0(reps), s1(reps);
  for (int r = 0; r < reps; ++r) {
    SimInstance inst = simulate(spec, static_cast<std::uint64_t>(r));
    SubspaceInfo info = compute_subspace_info(inst.table);
    VarianceComponents vc = estimate_sigmas(inst.table, 1.0, info);
    s0[r] = vc.sigmas_raw[0];
    s1[r] = vc.sigmas_raw[1];
  }
  auto mean_se = [&](const std::vector<double>& v) {
    double mean = 0;
    for (double x : v) mean += x;
    mean /= v.size();
    double ss = 0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::pair<double, double>{mean, std::sqrt(ss / (v.size() - 1.0) / v.size())};
  };
  auto [m0, se0] = mean_se(s0);
  auto [m1, se1] = mean_se(s1);
  CHECK(std::abs(m0 - 4.0) < 4 * se0);
  CHECK(std::abs(m1 - 1.0) < 4 * se1);
}
