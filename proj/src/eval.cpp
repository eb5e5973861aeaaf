#include "hanova/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "hanova/csv.hpp"
#include "hanova/oracle.hpp"
#include "hanova/rng.hpp"

namespace hanova {

void SimSpec::validate() const {
  if (level_counts.empty()) throw ValidationError("simulation needs at least one factor");
  for (int c : level_counts)
    if (c < 2) throw ValidationError("every simulated factor needs at least two levels");
  if (static_cast<int>(sigma_sds.size()) > m())
    throw ValidationError("too many sigma components (expected at most m)");
  for (double s : sigma_sds)
    if (s < 0) throw ValidationError("sigma components must be non-negative");
  if (sigma_m_sd < 0 || noise_sd < 0) throw ValidationError("sigmas must be non-negative");
  if (!(observe_rate > 0) || observe_rate > 1)
    throw ValidationError("observation rate must be in (0, 1]");
  if (weight_ratio < 1) throw ValidationError("weight ratio must be >= 1");
  if (!(equal_weight > 0)) throw ValidationError("weights must be positive");
}

std::vector<double> SimSpec::component_variances() const {
  std::vector<double> v(static_cast<std::size_t>(m()) + 1, 0.0);
  for (std::size_t k = 0; k < sigma_sds.size(); ++k) v[k] = sigma_sds[k] * sigma_sds[k];
  v[static_cast<std::size_t>(m())] = sigma_m_sd * sigma_m_sd;
  return v;
}

int SimSpec::true_order() const {
  int order = 0;
  for (std::size_t k = 0; k < sigma_sds.size(); ++k)
    if (sigma_sds[k] > 0) order = static_cast<int>(k) + 1;
  if (sigma_m_sd > 0) order = m();
  return order;
}

namespace {

FactorSpec make_sim_factor_spec(const std::vector<int>& level_counts) {
  FactorSpec spec;
  for (std::size_t f = 0; f < level_counts.size(); ++f) {
    spec.names.push_back("f" + std::to_string(f + 1));
    std::vector<std::string> labels;
    int width = 1;
    for (int c = level_counts[f] - 1; c >= 10; c /= 10) ++width;
    for (int l = 0; l < level_counts[f]; ++l) {
      std::string s = std::to_string(l);
      labels.push_back("L" + std::string(width - s.size(), '0') + s);
    }
    spec.levels.push_back(std::move(labels));
  }
  return spec;
}

// tau_k^2 = sum of component variances k..m-1
std::vector<double> taus_of(const std::vector<double>& comp_var, int m) {
  std::vector<double> tau(static_cast<std::size_t>(m) + 1, 0.0);
  for (int k = m - 1; k >= 0; --k) tau[k] = tau[k + 1] + comp_var[k];
  return tau;
}

// Draws mu (centered-model scale) over the observed cells in the exact
// orthogonal coordinates of the nested basis.
std::vector<double> draw_mu_dense(const SparseTable& table, const SimSpec& spec,
                                  std::mt19937_64& rng) {
  DenseBasis basis = build_basis(table, spec.dense_threshold);
  const auto tau = taus_of(spec.component_variances(), spec.m());
  const std::size_t n = table.cell_count();
  std::normal_distribution<double> normal(0.0, 1.0);

  Eigen::VectorXd theta = Eigen::VectorXd::Zero(n);
  for (int k = 1; k <= spec.m(); ++k) {
    const int lo = (k == 1) ? 0 : basis.dims[k - 2];
    const int hi = basis.dims[k - 1];
    const double sd = std::sqrt(tau[k - 1]);
    for (int j = lo; j < hi; ++j) theta[j] = sd * normal(rng);
  }
  Eigen::VectorXd mu = basis.U.leftCols(basis.dims.back()) * theta.head(basis.dims.back());

  if (spec.sigma_m_sd > 0)
    for (std::size_t i = 0; i < n; ++i) mu[i] += spec.sigma_m_sd * normal(rng);
  return {mu.data(), mu.data() + n};
}

// Above the dense threshold: independent pure-interaction margin effects.
// For each subset J the draw lives in the contrast space (centered along
// every factor of J) and is scaled so each direction carries tau_{|J|-1}^2
// in the observed-cell coordinates; exact when the table is balanced and
// fully observed, approximate otherwise.
std::vector<double> draw_mu_margins(const SparseTable& table, const SimSpec& spec,
                                    std::mt19937_64& rng) {
  const int m = spec.m();
  const auto tau = taus_of(spec.component_variances(), m);
  const std::size_t n = table.cell_count();
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> mu(n, 0.0);

  for (int k = 1; k <= m; ++k) {
    if (tau[k - 1] == 0) continue;
    for (const auto& J : subsets_of_size(m, k)) {
      std::vector<int> dims;
      std::size_t prod = 1;
      for (int f : J) {
        dims.push_back(spec.level_counts[f]);
        prod *= static_cast<std::size_t>(spec.level_counts[f]);
      }
      std::vector<double> g(prod);
      for (double& v : g) v = normal(rng);

      // project onto pure contrasts: sweep out marginal means per factor
      std::vector<std::size_t> stride(dims.size(), 1);
      for (std::size_t i = dims.size(); i-- > 1;)
        stride[i - 1] = stride[i] * static_cast<std::size_t>(dims[i]);
      for (std::size_t i = 0; i < dims.size(); ++i) {
        const std::size_t d = static_cast<std::size_t>(dims[i]);
        const std::size_t st = stride[i];
        for (std::size_t base = 0; base < prod; ++base) {
          if ((base / st) % d != 0) continue;
          double mean = 0;
          for (std::size_t l = 0; l < d; ++l) mean += g[base + l * st];
          mean /= static_cast<double>(d);
          for (std::size_t l = 0; l < d; ++l) g[base + l * st] -= mean;
        }
      }

      double cells_per_level = spec.observe_rate;
      for (int f = 0; f < m; ++f)
        if (std::find(J.begin(), J.end(), f) == J.end()) cells_per_level *= spec.level_counts[f];
      const double scale = std::sqrt(tau[k - 1] / std::max(1.0, cells_per_level));

      for (std::size_t pos = 0; pos < n; ++pos) {
        std::size_t key = 0;
        for (std::size_t i = 0; i < J.size(); ++i)
          key += stride[i] * static_cast<std::size_t>(table.index(pos).coords[J[i]]);
        mu[pos] += scale * g[key];
      }
    }
  }

  // constant direction, variance tau_0^2 along 1/sqrt(n)
  const double theta_c = std::sqrt(tau[0]) * normal(rng);
  const double c = theta_c / std::sqrt(static_cast<double>(n));
  for (double& v : mu) v += c;

  if (spec.sigma_m_sd > 0)
    for (double& v : mu) v += spec.sigma_m_sd * normal(rng);
  return mu;
}

}  // namespace

SimInstance simulate(const SimSpec& spec, std::uint64_t replicate) {
  spec.validate();
  std::mt19937_64 rng = make_rng(spec.seed, replicate);
  const int m = spec.m();
  FactorSpec fspec = make_sim_factor_spec(spec.level_counts);

  std::size_t grid = 1;
  for (int c : spec.level_counts) grid *= static_cast<std::size_t>(c);

  // observed cells
  std::vector<std::size_t> chosen(grid);
  std::iota(chosen.begin(), chosen.end(), 0);
  if (spec.observe_rate < 1.0) {
    std::shuffle(chosen.begin(), chosen.end(), rng);
    std::size_t keep =
        std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(spec.observe_rate * grid)));
    chosen.resize(keep);
    std::sort(chosen.begin(), chosen.end());
  }
  const std::size_t n = chosen.size();

  std::vector<SparseTable::CellRow> rows(n);
  for (std::size_t i = 0; i < n; ++i) {
    CellIndex idx;
    idx.coords.resize(m);
    std::size_t rest = chosen[i];
    for (int f = m; f-- > 0;) {
      idx.coords[f] = static_cast<Level>(rest % spec.level_counts[f]);
      rest /= spec.level_counts[f];
    }
    rows[i] = {std::move(idx), 0.0, 1.0};
  }

  // weights before responses so the noise scale is defined
  if (spec.weight_scheme == SimSpec::Weights::kEqual) {
    for (auto& r : rows) r.n = spec.equal_weight;
  } else {
    std::uniform_real_distribution<double> u(0.0, std::log(spec.weight_ratio));
    for (auto& r : rows) r.n = std::exp(u(rng));
  }

  SparseTable table = SparseTable::build(fspec, rows);

  std::vector<double> mu = (n <= spec.dense_threshold) ? draw_mu_dense(table, spec, rng)
                                                       : draw_mu_margins(table, spec, rng);

  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i)
    y[i] = mu[i] + spec.noise_sd / std::sqrt(table.weight(i)) * normal(rng);

  SimInstance inst{table.with_values(y), std::move(mu), replicate};
  return inst;
}

double rmse(std::span<const double> pred, std::span<const double> truth,
            std::span<const double> weights) {
  if (pred.size() != truth.size())
    throw ValidationError("rmse: prediction and truth lengths differ");
  if (!weights.empty() && weights.size() != pred.size())
    throw ValidationError("rmse: weights length mismatch");
  double num = 0, den = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    const double d = pred[i] - truth[i];
    num += w * d * d;
    den += w;
  }
  return std::sqrt(num / den);
}

CvResult cross_validate(const SparseTable& table, int maxk, const std::vector<double>& grid,
                        const std::vector<double>& base_lambdas, const CvOptions& opts) {
  const int m = table.spec().factor_count();
  if (maxk < 1 || maxk > m) throw ValidationError("cv: maxk out of range");
  if (static_cast<int>(base_lambdas.size()) != maxk)
    throw ValidationError("cv: need one base lambda per order");
  if (grid.empty()) throw ValidationError("cv: empty candidate grid");
  if (opts.folds < 2) throw ValidationError("cv: need at least two folds");
  const int cv_order = opts.cv_order == 0 ? maxk : opts.cv_order;
  if (cv_order < 1 || cv_order > maxk) throw ValidationError("cv: cv_order out of range");

  const std::size_t n = table.cell_count();
  const int K = opts.folds;
  // Fold membership hangs off the cell's labels (not its position), so
  // relabeling factor levels moves cells around without changing folds.
  std::vector<int> fold(n);
  {
    std::vector<std::pair<std::uint64_t, std::vector<std::string>>> keyed(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::uint64_t h = opts.seed ^ 0x9E3779B97F4A7C15ULL;
      std::vector<std::string> labels;
      for (int f = 0; f < m; ++f) {
        const std::string& label = table.spec().levels[f][table.index(i).coords[f]];
        labels.push_back(label);
        for (unsigned char c : label) {
          h ^= c;
          (void)splitmix64(h);
        }
        h ^= 0xFFULL;
        (void)splitmix64(h);
      }
      std::uint64_t s = h;
      keyed[i] = {splitmix64(s), std::move(labels)};
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (keyed[a].first != keyed[b].first) return keyed[a].first < keyed[b].first;
      return keyed[a].second < keyed[b].second;
    });
    for (std::size_t rank = 0; rank < n; ++rank)
      fold[order[rank]] = static_cast<int>(rank % static_cast<std::size_t>(K));
  }
  for (int f = 0; f < K; ++f) {
    std::size_t train = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (fold[i] != f) ++train;
    if (train == 0) throw ValidationError("cv: a fold leaves the training set empty");
  }

  CvResult result;
  result.cv_order = cv_order;
  result.grid = grid;
  result.fold_seed = opts.seed;
  result.fold_loss.assign(grid.size(), std::vector<double>(K, 0.0));
  result.mean_loss.assign(grid.size(), 0.0);

  for (std::size_t c = 0; c < grid.size(); ++c) {
    std::vector<double> lambdas = base_lambdas;
    lambdas[cv_order - 1] = grid[c];
    for (int f = 0; f < K; ++f) {
      std::vector<SparseTable::CellRow> train_rows;
      train_rows.reserve(n);
      for (std::size_t i = 0; i < n; ++i)
        if (fold[i] != f)
          train_rows.push_back({table.index(i), table.value(i), table.weight(i)});
      SparseTable train = SparseTable::build(table.spec(), std::move(train_rows));
      HanovaFit fit = fit_hanova(train, lambdas, maxk, opts.conv);
      double num = 0, den = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (fold[i] != f) continue;
        const double d = table.value(i) - fit.predict(table.index(i));
        num += table.weight(i) * d * d;
        den += table.weight(i);
      }
      result.fold_loss[c][f] = num / den;
    }
    double mean = 0;
    for (double l : result.fold_loss[c]) mean += l;
    result.mean_loss[c] = mean / K;
  }

  // argmin with ties broken toward the larger lambda
  std::size_t best = 0;
  for (std::size_t c = 1; c < grid.size(); ++c) {
    const double tol = 1e-12 * (1.0 + std::abs(result.mean_loss[best]));
    if (result.mean_loss[c] < result.mean_loss[best] - tol ||
        (std::abs(result.mean_loss[c] - result.mean_loss[best]) <= tol && grid[c] > grid[best]))
      best = c;
  }
  result.selected_candidate = grid[best];

  double se = 0;
  {
    const auto& losses = result.fold_loss[best];
    double mean = result.mean_loss[best], ss = 0;
    for (double l : losses) ss += (l - mean) * (l - mean);
    se = std::sqrt(ss / (K - 1.0) / K);
  }
  std::size_t one_se = best;
  for (std::size_t c = 0; c < grid.size(); ++c)
    if (result.mean_loss[c] <= result.mean_loss[best] + se && grid[c] > grid[one_se]) one_se = c;
  result.one_se_candidate = grid[one_se];

  result.selected = base_lambdas;
  result.selected[cv_order - 1] = result.selected_candidate;
  result.one_se = base_lambdas;
  result.one_se[cv_order - 1] = result.one_se_candidate;
  return result;
}

std::vector<double> default_cv_grid(double empirical_lambda) {
  const double pivot =
      (std::isinf(empirical_lambda) || empirical_lambda <= 0) ? 100.0 : empirical_lambda;
  std::vector<double> grid;
  for (double f : {0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0}) grid.push_back(pivot * f);
  return grid;
}

std::string Method::name() const {
  switch (kind) {
    case Kind::kOls: return "ols-" + std::to_string(order);
    case Kind::kHanovaOracle: return "hanova-oracle-" + std::to_string(order);
    case Kind::kHanovaEmpirical: return "hanova-empirical-" + std::to_string(order);
    case Kind::kBayesOracle: return "bayes-oracle";
  }
  return "?";
}

double ExperimentResult::mean_rmse(std::size_t method) const {
  const auto& v = rmse[method];
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double ExperimentResult::quantile_rmse(std::size_t method, double q) const {
  std::vector<double> v = rmse[method];
  std::sort(v.begin(), v.end());
  const double pos = q * (static_cast<double>(v.size()) - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return v[lo] * (1 - frac) + v[hi] * frac;
}

double bayes_risk_rmse(const SparseTable& table, double per_cell_noise_var,
                       const std::vector<double>& component_variances, const SubspaceOpts& opts) {
  if (!table.balanced())
    throw ValidationError("the Bayes risk reference needs equal weights");
  const int m = table.spec().factor_count();
  if (static_cast<int>(component_variances.size()) != m + 1)
    throw ValidationError("need m+1 component variances");
  const auto tau = taus_of(component_variances, m);
  const double sm2 = component_variances[static_cast<std::size_t>(m)];
  const double s2 = per_cell_noise_var;

  double mse = 0;
  int d_prev = 0;
  for (int k = 1; k <= m; ++k) {
    const int dk = subspace_dim(table, k, opts);
    const double v = tau[k - 1] + sm2;
    if (v + s2 > 0) mse += (dk - d_prev) * (v * s2 / (v + s2));
    d_prev = dk;
  }
  const std::size_t n = table.cell_count();
  if (static_cast<int>(n) > d_prev && sm2 + s2 > 0)
    mse += (static_cast<double>(n) - d_prev) * (sm2 * s2 / (sm2 + s2));
  return std::sqrt(mse / static_cast<double>(n));
}

namespace {

std::vector<double> ols_fitted(const SparseTable& table, int order, const ConvergenceOpts& conv) {
  const double gm = weighted_grand_mean(table);
  const std::size_t n = table.cell_count();
  std::vector<double> yc(n), zero(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) yc[i] = table.value(i) - gm;
  OrderFit fit = fit_order_on(table, yc, table.weights(), order, 0.0, zero, conv);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = gm + fit.mu[i];
  return out;
}

std::vector<double> method_fitted(const Method& method, const SimInstance& inst,
                                  const SimSpec& spec, const ExperimentOpts& opts) {
  const SparseTable& table = inst.table;
  switch (method.kind) {
    case Method::Kind::kOls:
      return ols_fitted(table, method.order, opts.conv);
    case Method::Kind::kHanovaOracle: {
      VarianceComponents vc;
      vc.m = spec.m();
      vc.sigma2 = spec.noise_sd * spec.noise_sd;
      vc.sigma2_eff = effective_sigma2(table, vc.sigma2);
      vc.sigmas = spec.component_variances();
      std::vector<double> lambdas = lambdas_from_sigmas(vc);
      lambdas.resize(method.order);
      HanovaFit fit = fit_hanova(table, lambdas, method.order, opts.conv);
      return fit.fitted(method.order);
    }
    case Method::Kind::kHanovaEmpirical: {
      SubspaceInfo info = compute_subspace_info(table, opts.subspace);
      VarianceComponents vc = estimate_sigmas(table, spec.noise_sd * spec.noise_sd, info);
      std::vector<double> lambdas = lambdas_from_sigmas(vc, opts.lambda_cap);
      lambdas.resize(method.order);
      HanovaFit fit = fit_hanova(table, lambdas, method.order, opts.conv);
      return fit.fitted(method.order);
    }
    case Method::Kind::kBayesOracle: {
      if (!table.balanced())
        throw ValidationError("the Bayes oracle applies to balanced tables only");
      DenseBasis basis = build_basis(table, spec.dense_threshold);
      const double gm = weighted_grand_mean(table);
      const std::size_t n = table.cell_count();
      std::vector<double> yc(n);
      for (std::size_t i = 0; i < n; ++i) yc[i] = table.value(i) - gm;
      // posterior mean per the centered model, grand mean passed through
      const double w = table.weight(0);
      const double s2_cell = spec.noise_sd * spec.noise_sd / w;
      std::vector<double> post =
          dense_posterior_mean(table.with_values(yc), basis, s2_cell, spec.component_variances());
      for (double& v : post) v += gm;
      return post;
    }
  }
  throw ValidationError("unknown method");
}

}  // namespace

ExperimentResult run_experiment(const SimSpec& spec, const std::vector<Method>& methods,
                                const ExperimentOpts& opts) {
  spec.validate();
  if (methods.empty()) throw ValidationError("no methods requested");
  for (const auto& mth : methods) {
    if (mth.kind != Method::Kind::kBayesOracle &&
        (mth.order < 1 || mth.order > spec.m()))
      throw ValidationError("method order out of range");
    if (mth.kind == Method::Kind::kBayesOracle &&
        spec.weight_scheme != SimSpec::Weights::kEqual)
      throw ValidationError("the Bayes oracle applies to balanced tables only");
  }

  ExperimentResult result;
  result.methods = methods;
  result.rmse.assign(methods.size(), std::vector<double>(spec.replicates, 0.0));

  const int R = spec.replicates;
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic) if (opts.parallel)
  for (int r = 0; r < R; ++r) {
    try {
      SimInstance inst = simulate(spec, static_cast<std::uint64_t>(r));
      for (std::size_t mi = 0; mi < methods.size(); ++mi) {
        std::vector<double> fitted = method_fitted(methods[mi], inst, spec, opts);
        result.rmse[mi][r] = rmse(fitted, inst.true_mu);
      }
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  if (spec.weight_scheme == SimSpec::Weights::kEqual) {
    SimInstance inst = simulate(spec, 0);
    result.bayes_risk =
        bayes_risk_rmse(inst.table, spec.noise_sd * spec.noise_sd / spec.equal_weight,
                        spec.component_variances(), opts.subspace);
  }
  return result;
}

void write_experiment_csv(const ExperimentResult& result, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot write file: " + path);
  f << "replicate,method,rmse\n";
  for (std::size_t mi = 0; mi < result.methods.size(); ++mi)
    for (std::size_t r = 0; r < result.rmse[mi].size(); ++r)
      f << r << "," << csv::encode_field(result.methods[mi].name()) << ","
        << csv::format_double(result.rmse[mi][r]) << "\n";
  if (result.bayes_risk)
    f << ",bayes-risk," << csv::format_double(*result.bayes_risk) << "\n";
}

void write_cv_csv(const CvResult& result, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot write file: " + path);
  f << "candidate,mean_loss,selected,one_se\n";
  for (std::size_t c = 0; c < result.grid.size(); ++c)
    f << csv::format_double(result.grid[c]) << "," << csv::format_double(result.mean_loss[c])
      << "," << (result.grid[c] == result.selected_candidate ? 1 : 0) << ","
      << (result.grid[c] == result.one_se_candidate ? 1 : 0) << "\n";
}

}  // namespace hanova
