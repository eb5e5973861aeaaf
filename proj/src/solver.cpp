#include "hanova/solver.hpp"

#include <algorithm>
#include <cmath>

namespace hanova {

double CoefficientBlock::at_key(std::int64_t key) const {
  auto it = std::lower_bound(keys.begin(), keys.end(), key);
  if (it == keys.end() || *it != key) return 0.0;
  return values[static_cast<std::size_t>(it - keys.begin())];
}

std::int64_t CoefficientBlock::flat_key(const CellIndex& idx) const {
  std::int64_t k = 0;
  for (std::size_t i = 0; i < J.size(); ++i) k = k * dims[i] + idx.coords[J[i]];
  return k;
}

double CoefficientBlock::at_levels(std::span<const Level> L) const {
  std::int64_t k = 0;
  for (std::size_t i = 0; i < J.size(); ++i) k = k * dims[i] + L[i];
  return at_key(k);
}

double CoefficientSet::eval(const CellIndex& idx) const {
  double s = 0;
  for (const auto& b : blocks) s += b.at_key(b.flat_key(idx));
  return s;
}

double wpls_objective(std::span<const double> y, std::span<const double> weights,
                      std::span<const double> mu, double lambda, std::span<const double> prior) {
  if (lambda < 0) throw ValidationError("lambda must be non-negative");
  if (mu.size() != y.size() || prior.size() != y.size())
    throw ValidationError("wpls_objective: vector length mismatch");
  double misfit = 0, penalty = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double r = y[i] - mu[i];
    misfit += weights[i] * r * r;
    const double d = mu[i] - prior[i];
    penalty += d * d;
  }
  return misfit + lambda * penalty;
}

double wpls_objective(const SparseTable& table, std::span<const double> mu, double lambda,
                      std::span<const double> prior) {
  return wpls_objective(table.values(), table.weights(), mu, lambda, prior);
}

BackfitWorkspace make_workspace(const SparseTable& table, std::span<const double> y,
                                std::span<const double> weights, int order, double lambda,
                                std::span<const double> prior) {
  const int m = table.spec().factor_count();
  if (order < 1 || order > m) throw ValidationError("order must be between 1 and the factor count");
  if (lambda < 0) throw ValidationError("lambda must be non-negative");
  const std::size_t n = table.cell_count();
  if (y.size() != n || weights.size() != n || prior.size() != n)
    throw ValidationError("fit vectors must align with the table's observed cells");

  BackfitWorkspace ws;
  ws.order = order;
  ws.lambda = lambda;
  ws.y.assign(y.begin(), y.end());
  ws.weights.assign(weights.begin(), weights.end());
  ws.prior.assign(prior.begin(), prior.end());
  ws.mu.assign(n, 0.0);

  ws.wl.resize(n);
  std::vector<double> rhs(n);
  for (std::size_t i = 0; i < n; ++i) {
    ws.wl[i] = weights[i] + lambda;
    rhs[i] = weights[i] * y[i] + lambda * prior[i];
  }

  for (const auto& J : subsets_of_size(m, order)) {
    MarginPlan plan = MarginPlan::build(table, J);
    const std::size_t G = plan.group_count();
    std::vector<double> u(G), z(G);
    margin_group_sums(plan, rhs, u);
    margin_group_sums(plan, ws.wl, z);
    ws.u.push_back(std::move(u));
    ws.z.push_back(std::move(z));
    ws.beta.emplace_back(G, 0.0);
    ws.plans.push_back(std::move(plan));
  }
  return ws;
}

double backfit_sweep(BackfitWorkspace& ws) {
  const std::size_t n = ws.mu.size();
  std::vector<double> s;
  std::vector<double> wmu(n);
  double max_delta = 0;

  for (std::size_t b = 0; b < ws.plans.size(); ++b) {
    const MarginPlan& plan = ws.plans[b];
    const std::size_t G = plan.group_count();
    for (std::size_t i = 0; i < n; ++i) wmu[i] = ws.wl[i] * ws.mu[i];
    s.resize(G);
    margin_group_sums(plan, wmu, s);

    auto& beta = ws.beta[b];
    for (std::size_t g = 0; g < G; ++g) {
      // plans carry only observed margin levels, and weights are positive,
      // so z > 0 here; unobserved levels stay implicitly at zero
      const double zg = ws.z[b][g];
      if (zg <= 0) {
        s[g] = 0;
        continue;
      }
      s[g] = (ws.u[b][g] - s[g]) / zg;
      beta[g] += s[g];
      max_delta = std::max(max_delta, std::abs(s[g]));
    }
    for (std::size_t i = 0; i < n; ++i) ws.mu[i] += s[plan.group_of_cell(i)];
  }
  return max_delta;
}

namespace {

CoefficientSet extract_coefficients(const BackfitWorkspace& ws, const FactorSpec& spec) {
  CoefficientSet cs;
  cs.order = ws.order;
  for (std::size_t b = 0; b < ws.plans.size(); ++b) {
    const MarginPlan& plan = ws.plans[b];
    CoefficientBlock block;
    block.J = plan.subset();
    for (int f : block.J) block.dims.push_back(spec.level_count(f));
    block.keys.reserve(plan.group_count());
    for (std::size_t g = 0; g < plan.group_count(); ++g) block.keys.push_back(plan.group_key(g));
    block.values = ws.beta[b];
    cs.blocks.push_back(std::move(block));
  }
  return cs;
}

}  // namespace

OrderFit fit_order_on(const SparseTable& table, std::span<const double> y,
                      std::span<const double> weights, int order, double lambda,
                      std::span<const double> prior_mu, const ConvergenceOpts& opts) {
  OrderFit fit;
  fit.order = order;
  fit.lambda = lambda;

  if (std::isinf(lambda)) {
    const int m = table.spec().factor_count();
    if (order < 1 || order > m)
      throw ValidationError("order must be between 1 and the factor count");
    fit.mu.assign(prior_mu.begin(), prior_mu.end());
    fit.coefficients.order = order;
    fit.inherits_prior = true;
    fit.converged = true;
    return fit;
  }

  BackfitWorkspace ws = make_workspace(table, y, weights, order, lambda, prior_mu);
  double sup_y = 0;
  for (double v : ws.y) sup_y = std::max(sup_y, std::abs(v));
  const double mu_tol = opts.tol * (1.0 + sup_y);

  std::vector<double> mu_prev = ws.mu;
  fit.objective_trace.reserve(16);
  for (int sweep = 0; sweep < opts.max_sweeps; ++sweep) {
    const double beta_delta = backfit_sweep(ws);
    fit.sweeps = sweep + 1;
    fit.objective_trace.push_back(
        wpls_objective(ws.y, ws.weights, ws.mu, lambda, ws.prior));
    double mu_delta = 0;
    for (std::size_t i = 0; i < ws.mu.size(); ++i)
      mu_delta = std::max(mu_delta, std::abs(ws.mu[i] - mu_prev[i]));
    mu_prev = ws.mu;
    if (mu_delta < mu_tol || beta_delta == 0.0) {
      fit.converged = true;
      break;
    }
  }

  fit.mu = std::move(ws.mu);
  fit.coefficients = extract_coefficients(ws, table.spec());
  return fit;
}

OrderFit fit_order(const SparseTable& table, int order, double lambda,
                   std::span<const double> prior_mu, const ConvergenceOpts& opts) {
  return fit_order_on(table, table.values(), table.weights(), order, lambda, prior_mu, opts);
}

HanovaFit fit_hanova(const SparseTable& table, const std::vector<double>& lambdas, int maxk,
                     const ConvergenceOpts& opts) {
  const int m = table.spec().factor_count();
  if (maxk < 1 || maxk > m) throw ValidationError("maxk must be between 1 and the factor count");
  if (static_cast<int>(lambdas.size()) != maxk)
    throw ValidationError("need one lambda per order up to maxk");

  HanovaFit fit;
  fit.spec = table.spec();
  fit.maxk = maxk;
  fit.lambdas = lambdas;
  fit.centered = true;
  fit.grand_mean = weighted_grand_mean(table);

  const std::size_t n = table.cell_count();
  std::vector<double> yc(n);
  for (std::size_t i = 0; i < n; ++i) yc[i] = table.value(i) - fit.grand_mean;

  std::vector<double> prior(n, 0.0);
  for (int k = 1; k <= maxk; ++k) {
    OrderFit of = fit_order_on(table, yc, table.weights(), k, lambdas[k - 1], prior, opts);
    prior = of.mu;
    fit.order_fits.push_back(std::move(of));
  }
  return fit;
}

double HanovaFit::predict(const CellIndex& idx, std::optional<int> order) const {
  if (static_cast<int>(idx.coords.size()) != spec.factor_count())
    throw ValidationError("predict: index arity does not match factor count");
  for (int f = 0; f < spec.factor_count(); ++f)
    if (idx.coords[f] < 0 || idx.coords[f] >= spec.level_count(f))
      throw ValidationError("predict: level ordinal out of range for factor '" + spec.names[f] +
                            "'");
  int k = order.value_or(maxk);
  if (k < 0 || k > maxk) throw ValidationError("predict: order out of range");
  while (k >= 1 && order_fits[k - 1].inherits_prior) --k;
  if (k == 0) return grand_mean;
  return grand_mean + order_fits[k - 1].coefficients.eval(idx);
}

std::vector<double> HanovaFit::fitted(int order) const {
  if (order < 1 || order > maxk) throw ValidationError("fitted: order out of range");
  const auto& mu = order_fits[order - 1].mu;
  std::vector<double> out(mu.size());
  for (std::size_t i = 0; i < mu.size(); ++i) out[i] = grand_mean + mu[i];
  return out;
}

std::vector<double> final_blend(const HanovaFit& fit, const SparseTable& table, double sigma2,
                                double sigma_m2) {
  if (fit.maxk != table.spec().factor_count())
    throw ValidationError("final_blend needs a fit of full order (maxk == m)");
  if (sigma2 < 0 || sigma_m2 < 0) throw ValidationError("variances must be non-negative");
  if (sigma2 + sigma_m2 == 0) throw ValidationError("sigma2 + sigma_m2 must be positive");
  std::vector<double> muhat = fit.fitted(fit.maxk);
  if (muhat.size() != table.cell_count())
    throw ValidationError("final_blend: fit does not match table");
  const double wy = sigma_m2 / (sigma2 + sigma_m2);
  const double wm = sigma2 / (sigma2 + sigma_m2);
  std::vector<double> out(muhat.size());
  for (std::size_t i = 0; i < muhat.size(); ++i)
    out[i] = wy * table.value(i) + wm * muhat[i];
  return out;
}

}  // namespace hanova
