// Command-line front end: fit, predict, preprocess, lambda, cv, simulate,
// experiment, plus a hidden oracle command for debugging. Every command is
// a pure function of its input files and printed configuration; reruns
// produce byte-identical outputs.

#include <CLI11.hpp>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "hanova/csv.hpp"
#include "hanova/eval.hpp"
#include "hanova/model_io.hpp"
#include "hanova/oracle.hpp"
#include "hanova/preprocess.hpp"
#include "hanova/solver.hpp"
#include "hanova/table.hpp"
#include "hanova/variance.hpp"

using namespace hanova;

namespace {

struct NonConvergence : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<double> parse_lambda_list(const std::string& csv_list) {
  std::vector<double> out;
  std::stringstream ss(csv_list);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok == "inf")
      out.push_back(kInfiniteLambda);
    else
      out.push_back(csv::parse_double(tok, 0));
  }
  return out;
}

std::vector<double> parse_double_list(const std::string& csv_list) {
  std::vector<double> out;
  std::stringstream ss(csv_list);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(csv::parse_double(tok, 0));
  return out;
}

std::vector<int> parse_int_list(const std::string& csv_list) {
  std::vector<int> out;
  std::stringstream ss(csv_list);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(static_cast<int>(csv::parse_long(tok, 0)));
  return out;
}

double resolve_sigma2(const std::string& text) {
  if (text == "preprocessed") return 1.0;  // aggregation scales weights so the noise is unit
  double v = csv::parse_double(text, 0);
  if (v < 0) throw ValidationError("sigma2 must be non-negative");
  return v;
}

std::string lambda_to_string(double v) {
  return std::isinf(v) ? std::string("inf") : csv::format_double(v);
}

std::string lambdas_to_string(const std::vector<double>& lambdas) {
  std::string out;
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    if (i) out.push_back(',');
    out += lambda_to_string(lambdas[i]);
  }
  return out;
}

void echo_config(const std::vector<std::pair<std::string, std::string>>& kv) {
  std::cerr << "# config:";
  for (const auto& [k, v] : kv) std::cerr << " --" << k << " " << v;
  std::cerr << "\n";
}

void apply_threads(int threads) {
#ifdef _OPENMP
  if (threads > 0) omp_set_num_threads(threads);
#else
  (void)threads;
#endif
}

// Fills SimSpec sigma fields from the convention used throughout: the list
// is (sigma_0, ..., sigma_{t}, sigma) with the observation noise last.
void apply_sigma_convention(SimSpec& spec, const std::vector<double>& sds, double sigma_m) {
  if (sds.empty()) throw ValidationError("--sigmas needs at least the noise entry");
  if (static_cast<int>(sds.size()) > spec.m() + 1)
    throw ValidationError("--sigmas has more entries than factors allow");
  spec.sigma_sds.assign(sds.begin(), sds.end() - 1);
  spec.noise_sd = sds.back();
  spec.sigma_m_sd = sigma_m;
}

void write_variance_table(std::ostream& out, const SubspaceInfo& info,
                          const VarianceComponents& vc, const std::vector<double>& lambdas) {
  out << "k,d,Q,sigma2_raw,sigma2,clamped,degenerate,tau2,lambda\n";
  for (int k = 0; k <= vc.m; ++k) {
    const double d = k == 0 ? 1 : info.dims[k - 1];
    const double Q = k == 0 ? 0.0 : info.sq_norms[k - 1];
    out << k << "," << d << "," << csv::format_double(Q) << ","
        << csv::format_double(vc.sigmas_raw[k]) << "," << csv::format_double(vc.sigmas[k]) << ","
        << (vc.clamped[k] ? 1 : 0) << "," << (vc.degenerate[k] ? 1 : 0) << ","
        << csv::format_double(vc.taus[k]) << ",";
    if (k >= 1) out << lambda_to_string(lambdas[k - 1]);
    out << "\n";
  }
}

struct FitConfig {
  std::string input, out;
  std::string report, fitted;
  std::string lambda_mode = "empirical";
  std::string lambda_list;
  std::string sigma2_text;
  int maxk = 0;
  double lambda_cap = 0;  // 0 = off
  std::string cv_grid;
  int cv_folds = 5;
  int cv_order = 0;
  double tol = 1e-8;
  int max_sweeps = 500;
  std::uint64_t seed = 0;
  int threads = 0;
  bool strict = false;
};

int run_fit(const FitConfig& cfg) {
  apply_threads(cfg.threads);
  if (cfg.input == cfg.out) throw ValidationError("--out would overwrite --input");
  SparseTable table = load_cells(cfg.input);
  const int m = table.spec().factor_count();
  const int maxk = cfg.maxk == 0 ? m : cfg.maxk;
  if (maxk < 1 || maxk > m) throw ValidationError("maxk must be between 1 and the factor count");

  ConvergenceOpts conv;
  conv.tol = cfg.tol;
  conv.max_sweeps = cfg.max_sweeps;
  std::optional<double> cap;
  if (cfg.lambda_cap > 0) cap = cfg.lambda_cap;

  std::vector<double> lambdas;
  std::optional<SubspaceInfo> info;
  std::optional<VarianceComponents> vc;

  if (cfg.lambda_mode == "supplied") {
    if (cfg.lambda_list.empty()) throw ValidationError("--lambda is required in supplied mode");
    lambdas = parse_lambda_list(cfg.lambda_list);
    if (static_cast<int>(lambdas.size()) != maxk)
      throw ValidationError("--lambda needs one value per order up to maxk");
  } else {
    if (cfg.sigma2_text.empty())
      throw ValidationError("--sigma2 is required for empirical or cv lambda selection");
    const double sigma2 = resolve_sigma2(cfg.sigma2_text);
    info = compute_subspace_info(table);
    vc = estimate_sigmas(table, sigma2, *info);
    lambdas = lambdas_from_sigmas(*vc, cap);
    lambdas.resize(maxk);
    if (cfg.lambda_mode == "cv") {
      CvOptions cv_opts;
      cv_opts.folds = cfg.cv_folds;
      cv_opts.cv_order = cfg.cv_order;
      cv_opts.seed = cfg.seed;
      cv_opts.conv = conv;
      const int order = cfg.cv_order == 0 ? maxk : cfg.cv_order;
      std::vector<double> grid = cfg.cv_grid.empty()
                                     ? default_cv_grid(lambdas[order - 1])
                                     : parse_lambda_list(cfg.cv_grid);
      CvResult cv = cross_validate(table, maxk, grid, lambdas, cv_opts);
      lambdas = cv.selected;
    } else if (cfg.lambda_mode != "empirical") {
      throw ValidationError("unknown lambda mode '" + cfg.lambda_mode + "'");
    }
  }

  HanovaFit fit = fit_hanova(table, lambdas, maxk, conv);
  save_model(fit, cfg.out);

  bool all_converged = true;
  for (const auto& of : fit.order_fits) all_converged = all_converged && of.converged;

  const std::string report_path = cfg.report.empty() ? cfg.out + ".report.txt" : cfg.report;
  {
    std::ofstream rep(report_path, std::ios::binary);
    if (!rep) throw ValidationError("cannot write report: " + report_path);
    rep << "input = " << cfg.input << "\n";
    rep << "cells = " << table.cell_count() << "\n";
    rep << "factors = " << m << "\n";
    rep << "maxk = " << maxk << "\n";
    rep << "lambda_mode = " << cfg.lambda_mode << "\n";
    rep << "lambda = " << lambdas_to_string(lambdas) << "\n";
    rep << "grand_mean = " << csv::format_double(fit.grand_mean) << "\n";
    for (const auto& of : fit.order_fits) {
      rep << "order " << of.order << ": lambda=" << lambda_to_string(of.lambda)
          << " sweeps=" << of.sweeps << " converged=" << (of.converged ? 1 : 0);
      if (!of.objective_trace.empty())
        rep << " objective=" << csv::format_double(of.objective_trace.back());
      rep << "\n";
      if (!of.objective_trace.empty()) {
        rep << "  trace:";
        for (double v : of.objective_trace) rep << " " << csv::format_double(v);
        rep << "\n";
      }
    }
    if (vc) {
      rep << "variance_table:\n";
      write_variance_table(rep, *info, *vc, lambdas_from_sigmas(*vc, cap));
    }
  }

  const std::string fitted_path = cfg.fitted.empty() ? cfg.out + ".fitted.csv" : cfg.fitted;
  {
    std::ofstream ff(fitted_path, std::ios::binary);
    if (!ff) throw ValidationError("cannot write fitted values: " + fitted_path);
    std::vector<std::string> header = table.spec().names;
    header.insert(header.end(), {"y", "n", "fitted"});
    ff << csv::encode_row(header) << "\n";
    auto fitted = fit.fitted(maxk);
    for (std::size_t p = 0; p < table.cell_count(); ++p) {
      std::vector<std::string> row;
      for (int f = 0; f < m; ++f)
        row.push_back(table.spec().levels[f][table.index(p).coords[f]]);
      row.push_back(csv::format_double(table.value(p)));
      row.push_back(csv::format_double(table.weight(p)));
      row.push_back(csv::format_double(fitted[p]));
      ff << csv::encode_row(row) << "\n";
    }
  }

  echo_config({{"input", cfg.input},
               {"out", cfg.out},
               {"maxk", std::to_string(maxk)},
               {"lambda-mode", cfg.lambda_mode},
               {"lambda", lambdas_to_string(lambdas)},
               {"tol", csv::format_double(cfg.tol)},
               {"max-sweeps", std::to_string(cfg.max_sweeps)},
               {"seed", std::to_string(cfg.seed)}});

  if (!all_converged) {
    std::cerr << "warning: backfitting hit the sweep limit before converging\n";
    if (cfg.strict) throw NonConvergence("non-convergence with --strict");
  }
  return 0;
}

int run_predict(const std::string& model_path, const std::string& query_path,
                const std::string& out_path, int order) {
  HanovaFit fit = load_model(model_path);
  auto rows = csv::read_file(query_path);
  if (rows.empty()) throw ValidationError("empty query file: " + query_path);
  const auto& header = rows[0].fields;
  const int m = fit.spec.factor_count();
  std::vector<int> col_of(m, -1);
  for (int f = 0; f < m; ++f) {
    for (std::size_t c = 0; c < header.size(); ++c)
      if (header[c] == fit.spec.names[f]) col_of[f] = static_cast<int>(c);
    if (col_of[f] < 0)
      throw ValidationError("query file is missing factor column '" + fit.spec.names[f] + "'");
  }

  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw ValidationError("cannot write file: " + out_path);
  std::vector<std::string> out_header = header;
  out_header.push_back("prediction");
  out_header.push_back("error");
  out << csv::encode_row(out_header) << "\n";

  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    std::vector<std::string> out_row = row.fields;
    std::string prediction, error;
    if (row.fields.size() != header.size()) {
      error = "wrong field count";
    } else {
      CellIndex idx;
      idx.coords.resize(m);
      for (int f = 0; f < m && error.empty(); ++f) {
        const std::string& label = row.fields[col_of[f]];
        int ord = fit.spec.find_level(f, label);
        if (ord < 0)
          error = "unknown level '" + label + "' for factor '" + fit.spec.names[f] + "'";
        else
          idx.coords[f] = ord;
      }
      if (error.empty())
        prediction = csv::format_double(
            fit.predict(idx, order == 0 ? std::optional<int>{} : std::optional<int>{order}));
    }
    out_row.push_back(prediction);
    out_row.push_back(error);
    out << csv::encode_row(out_row) << "\n";
  }
  echo_config({{"model", model_path}, {"query", query_path}, {"out", out_path}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hierarchical penalized ANOVA for sparse unbalanced tables"};
  app.require_subcommand(1);

  // fit
  FitConfig fit_cfg;
  auto* fit_cmd = app.add_subcommand("fit", "fit a model to a cell CSV");
  fit_cmd->add_option("--input", fit_cfg.input)->required();
  fit_cmd->add_option("--out", fit_cfg.out)->required();
  fit_cmd->add_option("--maxk", fit_cfg.maxk);
  fit_cmd->add_option("--lambda-mode", fit_cfg.lambda_mode)
      ->check(CLI::IsMember({"empirical", "supplied", "cv"}));
  fit_cmd->add_option("--lambda", fit_cfg.lambda_list);
  fit_cmd->add_option("--sigma2", fit_cfg.sigma2_text);
  fit_cmd->add_option("--lambda-cap", fit_cfg.lambda_cap);
  fit_cmd->add_option("--cv-grid", fit_cfg.cv_grid);
  fit_cmd->add_option("--cv-folds", fit_cfg.cv_folds);
  fit_cmd->add_option("--cv-order", fit_cfg.cv_order);
  fit_cmd->add_option("--tol", fit_cfg.tol);
  fit_cmd->add_option("--max-sweeps", fit_cfg.max_sweeps);
  fit_cmd->add_option("--seed", fit_cfg.seed);
  fit_cmd->add_option("--threads", fit_cfg.threads);
  fit_cmd->add_option("--report", fit_cfg.report);
  fit_cmd->add_option("--fitted", fit_cfg.fitted);
  fit_cmd->add_flag("--strict", fit_cfg.strict);

  // predict
  std::string pr_model, pr_query, pr_out;
  int pr_order = 0;
  auto* pr_cmd = app.add_subcommand("predict", "predict at query rows from a model file");
  pr_cmd->add_option("--model", pr_model)->required();
  pr_cmd->add_option("--query", pr_query)->required();
  pr_cmd->add_option("--out", pr_out)->required();
  pr_cmd->add_option("--order", pr_order);

  // preprocess
  std::string pp_units, pp_reviews, pp_out, pp_vars;
  double pp_sigma_r2 = -1, pp_sigma_u2 = -1;
  auto* pp_cmd = app.add_subcommand("preprocess", "collapse unit records into a cell CSV");
  pp_cmd->add_option("--units", pp_units)->required();
  pp_cmd->add_option("--reviews", pp_reviews);
  pp_cmd->add_option("--sigma-r2", pp_sigma_r2);
  pp_cmd->add_option("--sigma-u2", pp_sigma_u2);
  pp_cmd->add_option("--out", pp_out)->required();
  pp_cmd->add_option("--variances", pp_vars);

  // lambda
  std::string la_input, la_sigma2, la_out;
  double la_cap = 0;
  auto* la_cmd = app.add_subcommand("lambda", "variance components and penalty vector");
  la_cmd->add_option("--input", la_input)->required();
  la_cmd->add_option("--sigma2", la_sigma2)->required();
  la_cmd->add_option("--lambda-cap", la_cap);
  la_cmd->add_option("--out", la_out);

  // cv
  std::string cv_input, cv_sigma2, cv_grid, cv_out;
  int cv_maxk = 0, cv_order = 0, cv_folds = 5;
  std::uint64_t cv_seed = 0;
  auto* cv_cmd = app.add_subcommand("cv", "cross-validate one order's lambda");
  cv_cmd->add_option("--input", cv_input)->required();
  cv_cmd->add_option("--sigma2", cv_sigma2)->required();
  cv_cmd->add_option("--maxk", cv_maxk);
  cv_cmd->add_option("--cv-order", cv_order);
  cv_cmd->add_option("--grid", cv_grid);
  cv_cmd->add_option("--folds", cv_folds);
  cv_cmd->add_option("--seed", cv_seed);
  cv_cmd->add_option("--out", cv_out);

  // simulate
  std::string sim_levels, sim_sigmas, sim_weights = "equal", sim_out, sim_truth;
  double sim_sigma_m = 0, sim_rate = 1.0, sim_equal_weight = 1.0;
  std::uint64_t sim_seed = 0, sim_rep = 0;
  auto* sim_cmd = app.add_subcommand("simulate", "draw a table from the random effects model");
  sim_cmd->add_option("--levels", sim_levels)->required();
  sim_cmd->add_option("--sigmas", sim_sigmas)->required()
      ->description("component sds then the noise sd, e.g. 2,1,0,0.5");
  sim_cmd->add_option("--sigma-m", sim_sigma_m);
  sim_cmd->add_option("--weights", sim_weights)
      ->description("'equal' or 'ratio:<max/min>' for log-uniform weights");
  sim_cmd->add_option("--equal-weight", sim_equal_weight);
  sim_cmd->add_option("--rate", sim_rate);
  sim_cmd->add_option("--seed", sim_seed);
  sim_cmd->add_option("--rep", sim_rep);
  sim_cmd->add_option("--out", sim_out)->required();
  sim_cmd->add_option("--truth", sim_truth);

  // experiment
  std::string ex_levels, ex_sigmas, ex_weights = "equal", ex_methods, ex_out;
  double ex_sigma_m = 0, ex_rate = 1.0, ex_cap = 5.0;
  int ex_reps = 200, ex_threads = 0;
  std::uint64_t ex_seed = 0;
  auto* ex_cmd = app.add_subcommand("experiment", "simulate replicates and compare methods");
  ex_cmd->add_option("--levels", ex_levels)->required();
  ex_cmd->add_option("--sigmas", ex_sigmas)->required();
  ex_cmd->add_option("--sigma-m", ex_sigma_m);
  ex_cmd->add_option("--weights", ex_weights);
  ex_cmd->add_option("--rate", ex_rate);
  ex_cmd->add_option("--methods", ex_methods)->required()
      ->description("comma list: ols:K, hanova-oracle:K, hanova-empirical:K, bayes-oracle");
  ex_cmd->add_option("--replicates", ex_reps);
  ex_cmd->add_option("--lambda-cap", ex_cap);
  ex_cmd->add_option("--seed", ex_seed);
  ex_cmd->add_option("--threads", ex_threads);
  ex_cmd->add_option("--out", ex_out)->required();

  // oracle (hidden, debugging)
  std::string or_input, or_components, or_out;
  double or_sigma2 = 1.0;
  auto* or_cmd = app.add_subcommand("oracle", "dense posterior mean (debug)");
  or_cmd->group("");
  or_cmd->add_option("--input", or_input)->required();
  or_cmd->add_option("--sigma2", or_sigma2)->required();
  or_cmd->add_option("--components", or_components)->required()
      ->description("m+1 component variances sigma_0^2..sigma_m^2");
  or_cmd->add_option("--out", or_out);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*fit_cmd) return run_fit(fit_cfg);

    if (*pr_cmd) return run_predict(pr_model, pr_query, pr_out, pr_order);

    if (*pp_cmd) {
      UnitRecords units = load_unit_records(pp_units);
      if (!pp_reviews.empty()) load_raw_reviews(pp_reviews, units);
      UnitVariances uv;
      if (pp_sigma_u2 >= 0 && pp_sigma_r2 >= 0) {
        uv = {pp_sigma_u2, pp_sigma_r2, UnitVariances::Source::kSupplied};
      } else {
        uv = estimate_unit_variances(
            units, pp_sigma_r2 >= 0 ? std::optional<double>(pp_sigma_r2) : std::nullopt);
        if (pp_sigma_u2 >= 0) uv.sigma_u2 = pp_sigma_u2;
      }
      SparseTable cells = aggregate_cells(units, uv);
      save_cells(cells, pp_out);
      save_unit_variances(uv, pp_vars.empty() ? pp_out + ".variances.txt" : pp_vars);
      echo_config({{"units", pp_units},
                   {"out", pp_out},
                   {"sigma-u2", csv::format_double(uv.sigma_u2)},
                   {"sigma-r2", csv::format_double(uv.sigma_r2)}});
      return 0;
    }

    if (*la_cmd) {
      SparseTable table = load_cells(la_input);
      SubspaceInfo info = compute_subspace_info(table);
      VarianceComponents vc = estimate_sigmas(table, resolve_sigma2(la_sigma2), info);
      std::optional<double> cap;
      if (la_cap > 0) cap = la_cap;
      auto lambdas = lambdas_from_sigmas(vc, cap);
      write_variance_table(std::cout, info, vc, lambdas);
      if (!la_out.empty()) {
        std::ofstream f(la_out, std::ios::binary);
        if (!f) throw ValidationError("cannot write file: " + la_out);
        write_variance_table(f, info, vc, lambdas);
      }
      echo_config({{"input", la_input}, {"sigma2", la_sigma2}});
      return 0;
    }

    if (*cv_cmd) {
      SparseTable table = load_cells(cv_input);
      const int m = table.spec().factor_count();
      const int maxk = cv_maxk == 0 ? m : cv_maxk;
      SubspaceInfo info = compute_subspace_info(table);
      VarianceComponents vc = estimate_sigmas(table, resolve_sigma2(cv_sigma2), info);
      std::vector<double> base = lambdas_from_sigmas(vc);
      base.resize(maxk);
      CvOptions opts;
      opts.folds = cv_folds;
      opts.cv_order = cv_order;
      opts.seed = cv_seed;
      const int order = cv_order == 0 ? maxk : cv_order;
      std::vector<double> grid =
          cv_grid.empty() ? default_cv_grid(base[order - 1]) : parse_lambda_list(cv_grid);
      CvResult res = cross_validate(table, maxk, grid, base, opts);
      std::cout << "selected lambda_" << order << " = " << lambda_to_string(res.selected_candidate)
                << "\none-se lambda_" << order << " = " << lambda_to_string(res.one_se_candidate)
                << "\nlambda = " << lambdas_to_string(res.selected) << "\n";
      if (!cv_out.empty()) write_cv_csv(res, cv_out);
      echo_config({{"input", cv_input},
                   {"maxk", std::to_string(maxk)},
                   {"cv-order", std::to_string(order)},
                   {"folds", std::to_string(cv_folds)},
                   {"seed", std::to_string(cv_seed)}});
      return 0;
    }

    auto parse_weights = [](const std::string& text, SimSpec& spec) {
      if (text == "equal") {
        spec.weight_scheme = SimSpec::Weights::kEqual;
      } else if (text.rfind("ratio:", 0) == 0) {
        spec.weight_scheme = SimSpec::Weights::kRatioBounded;
        spec.weight_ratio = csv::parse_double(text.substr(6), 0);
      } else {
        throw ValidationError("unknown weight scheme '" + text + "'");
      }
    };

    if (*sim_cmd) {
      SimSpec spec;
      spec.level_counts = parse_int_list(sim_levels);
      apply_sigma_convention(spec, parse_double_list(sim_sigmas), sim_sigma_m);
      parse_weights(sim_weights, spec);
      spec.equal_weight = sim_equal_weight;
      spec.observe_rate = sim_rate;
      spec.seed = sim_seed;
      SimInstance inst = simulate(spec, sim_rep);
      save_cells(inst.table, sim_out);
      if (!sim_truth.empty()) {
        std::ofstream f(sim_truth, std::ios::binary);
        if (!f) throw ValidationError("cannot write file: " + sim_truth);
        std::vector<std::string> header = inst.table.spec().names;
        header.push_back("mu");
        f << csv::encode_row(header) << "\n";
        for (std::size_t p = 0; p < inst.table.cell_count(); ++p) {
          std::vector<std::string> row;
          for (int fct = 0; fct < spec.m(); ++fct)
            row.push_back(inst.table.spec().levels[fct][inst.table.index(p).coords[fct]]);
          row.push_back(csv::format_double(inst.true_mu[p]));
          f << csv::encode_row(row) << "\n";
        }
      }
      echo_config({{"levels", sim_levels},
                   {"sigmas", sim_sigmas},
                   {"weights", sim_weights},
                   {"rate", csv::format_double(sim_rate)},
                   {"seed", std::to_string(sim_seed)},
                   {"rep", std::to_string(sim_rep)}});
      return 0;
    }

    if (*ex_cmd) {
      apply_threads(ex_threads);
      SimSpec spec;
      spec.level_counts = parse_int_list(ex_levels);
      apply_sigma_convention(spec, parse_double_list(ex_sigmas), ex_sigma_m);
      parse_weights(ex_weights, spec);
      spec.observe_rate = ex_rate;
      spec.replicates = ex_reps;
      spec.seed = ex_seed;

      std::vector<Method> methods;
      std::stringstream ss(ex_methods);
      std::string tok;
      while (std::getline(ss, tok, ',')) {
        Method mth;
        auto colon = tok.find(':');
        const std::string kind = tok.substr(0, colon);
        if (colon != std::string::npos)
          mth.order = static_cast<int>(csv::parse_long(tok.substr(colon + 1), 0));
        if (kind == "ols") mth.kind = Method::Kind::kOls;
        else if (kind == "hanova-oracle") mth.kind = Method::Kind::kHanovaOracle;
        else if (kind == "hanova-empirical") mth.kind = Method::Kind::kHanovaEmpirical;
        else if (kind == "bayes-oracle") mth.kind = Method::Kind::kBayesOracle;
        else throw ValidationError("unknown method '" + kind + "'");
        methods.push_back(mth);
      }

      ExperimentOpts opts;
      if (ex_cap > 0) opts.lambda_cap = ex_cap;
      else opts.lambda_cap.reset();
      ExperimentResult res = run_experiment(spec, methods, opts);
      write_experiment_csv(res, ex_out);
      std::cout << "method,mean_rmse,p10,p50,p90\n";
      for (std::size_t mi = 0; mi < methods.size(); ++mi)
        std::cout << methods[mi].name() << "," << csv::format_double(res.mean_rmse(mi)) << ","
                  << csv::format_double(res.quantile_rmse(mi, 0.1)) << ","
                  << csv::format_double(res.quantile_rmse(mi, 0.5)) << ","
                  << csv::format_double(res.quantile_rmse(mi, 0.9)) << "\n";
      if (res.bayes_risk)
        std::cout << "bayes-risk," << csv::format_double(*res.bayes_risk) << ",,,\n";
      echo_config({{"levels", ex_levels},
                   {"sigmas", ex_sigmas},
                   {"methods", ex_methods},
                   {"replicates", std::to_string(ex_reps)},
                   {"seed", std::to_string(ex_seed)}});
      return 0;
    }

    if (*or_cmd) {
      SparseTable table = load_cells(or_input);
      DenseBasis basis = build_basis(table);
      std::cout << "n = " << table.cell_count() << "\ndims =";
      for (int d : basis.dims) std::cout << " " << d;
      std::cout << "\n";
      const double mean = unweighted_mean(table);
      std::vector<double> yc(table.cell_count());
      for (std::size_t p = 0; p < table.cell_count(); ++p) yc[p] = table.value(p) - mean;
      auto post =
          dense_posterior_mean(table.with_values(yc), basis, or_sigma2,
                               parse_double_list(or_components));
      for (double& v : post) v += mean;
      if (!or_out.empty()) {
        std::ofstream f(or_out, std::ios::binary);
        std::vector<std::string> header = table.spec().names;
        header.push_back("posterior_mean");
        f << csv::encode_row(header) << "\n";
        for (std::size_t p = 0; p < table.cell_count(); ++p) {
          std::vector<std::string> row;
          for (int fct = 0; fct < table.spec().factor_count(); ++fct)
            row.push_back(table.spec().levels[fct][table.index(p).coords[fct]]);
          row.push_back(csv::format_double(post[p]));
          f << csv::encode_row(row) << "\n";
        }
      }
      return 0;
    }
  } catch (const NonConvergence& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
