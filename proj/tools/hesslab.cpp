// hesslab: experiment runner for teacher-student Hessian spectra.
//
// Subcommands: spectrum, rank-scan, dynamics, verify, theory-curve.
// Options come from flags or a JSON config file (flags win); HESSLAB_SEED in
// the environment overrides the seed. Exit codes: 0 success, 2 config error,
// 3 numeric failure, 4 acceptance-threshold breach (reports still written).

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hesslab/hesslab.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hesslab;

namespace {

struct Cfg {
  std::string activation = "linear";
  double eps = 1.0;
  std::vector<double> poly_coeffs = {1.0, 1.0, 1.0};
  int n_in = 10;
  int n_hidden = 20;
  std::string weight_dist = "gaussian";
  int ensemble = 200;
  std::uint64_t seed = 1;
  std::int64_t mc_samples = 1000000;
  double sigma0 = 0.01;
  double lr = 0.0;  // 0: choose 0.05 / lambda_max
  int batch = 512;
  int steps = 0;  // 0: run until the slow mode has decayed ~7 e-folds
  int record_every = 1;
  double tau_rel = default_rank_tol;
  double ks_max = 0.05;
  double rate_tol = 0.05;
  std::string out = "out";
  int threads = 0;
  std::string grid = "2:10";
  bool export_hessian = false;
  std::string config_path;
};

Activation make_activation(const Cfg& c) {
  if (c.activation == "linear") return Activation::linear();
  if (c.activation == "quadratic") return Activation::quadratic(c.eps);
  if (c.activation == "erf") return Activation::erf();
  if (c.activation == "poly") return Activation::polynomial(c.poly_coeffs);
  throw usage_error("unknown activation '" + c.activation +
                    "' (expected linear|quadratic|erf|poly)");
}

WeightDist make_dist(const Cfg& c) {
  if (c.weight_dist == "gaussian") return WeightDist::Gaussian;
  if (c.weight_dist == "uniform") return WeightDist::Uniform;
  if (c.weight_dist == "rademacher") return WeightDist::Rademacher;
  throw usage_error("unknown weight-dist '" + c.weight_dist +
                    "' (expected gaussian|uniform|rademacher)");
}

json resolved_config(const std::string& command, const Cfg& c) {
  json j;
  j["command"] = command;
  j["activation"] = to_json(make_activation(c));
  j["n_in"] = c.n_in;
  j["n_hidden"] = c.n_hidden;
  j["weight_dist"] = c.weight_dist;
  j["ensemble"] = c.ensemble;
  j["seed"] = c.seed;
  j["mc_samples"] = c.mc_samples;
  j["sigma0"] = c.sigma0;
  j["lr"] = c.lr;
  j["batch"] = c.batch;
  j["steps"] = c.steps;
  j["record_every"] = c.record_every;
  j["tolerances"] = {{"tau_rel", c.tau_rel}, {"ks_max", c.ks_max}, {"rate_tol", c.rate_tol}};
  j["out"] = c.out;
  j["threads"] = c.threads;
  j["grid"] = c.grid;
  j["version"] = version;
  return j;
}

void add_common_options(CLI::App* sub, Cfg& c) {
  sub->add_option("--config", c.config_path, "JSON config file; flags override it");
  sub->add_option("--activation", c.activation, "linear|quadratic|erf|poly");
  sub->add_option("--eps", c.eps, "quadratic coefficient for --activation quadratic");
  sub->add_option("--poly-coeffs", c.poly_coeffs,
                  "polynomial coefficients c1 c2 ... (no constant term)");
  sub->add_option("--n-in", c.n_in, "input dimension");
  sub->add_option("--n-hidden", c.n_hidden, "hidden width");
  sub->add_option("--weight-dist", c.weight_dist, "gaussian|uniform|rademacher");
  sub->add_option("--ensemble", c.ensemble, "teachers (or seeds per grid cell)");
  sub->add_option("--seed", c.seed, "base seed (HESSLAB_SEED overrides)");
  sub->add_option("--mc-samples", c.mc_samples, "Monte-Carlo sample count");
  sub->add_option("--sigma0", c.sigma0, "perturbation scale");
  sub->add_option("--lr", c.lr, "learning rate (0 = 0.05/lambda_max)");
  sub->add_option("--batch", c.batch, "SGD minibatch size");
  sub->add_option("--steps", c.steps, "SGD steps (0 = auto)");
  sub->add_option("--record-every", c.record_every, "record period in steps");
  sub->add_option("--tau-rel", c.tau_rel, "relative rank tolerance");
  sub->add_option("--ks-max", c.ks_max, "KS acceptance threshold");
  sub->add_option("--rate-tol", c.rate_tol, "relative decay-rate tolerance");
  sub->add_option("--out", c.out, "output directory");
  sub->add_option("--threads", c.threads, "worker threads (0 = all cores)");
}

/// Fill fields the user did not pass on the command line from the JSON file.
void merge_config(CLI::App* sub, Cfg& c) {
  if (c.config_path.empty()) return;
  std::ifstream in(c.config_path);
  if (!in) throw usage_error("cannot read config file: " + c.config_path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw usage_error(std::string("malformed config JSON: ") + e.what());
  }
  auto take = [&](const char* flag, const char* key, auto& field) {
    if (sub->count(flag) == 0 && j.contains(key))
      field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  take("--activation", "activation", c.activation);
  take("--eps", "eps", c.eps);
  take("--poly-coeffs", "poly_coeffs", c.poly_coeffs);
  take("--n-in", "n_in", c.n_in);
  take("--n-hidden", "n_hidden", c.n_hidden);
  take("--weight-dist", "weight_dist", c.weight_dist);
  take("--ensemble", "ensemble", c.ensemble);
  take("--seed", "seed", c.seed);
  take("--mc-samples", "mc_samples", c.mc_samples);
  take("--sigma0", "sigma0", c.sigma0);
  take("--lr", "lr", c.lr);
  take("--batch", "batch", c.batch);
  take("--steps", "steps", c.steps);
  take("--record-every", "record_every", c.record_every);
  take("--tau-rel", "tau_rel", c.tau_rel);
  take("--ks-max", "ks_max", c.ks_max);
  take("--rate-tol", "rate_tol", c.rate_tol);
  take("--out", "out", c.out);
  take("--threads", "threads", c.threads);
  take("--grid", "grid", c.grid);
}

void validate_common(const Cfg& c) {
  if (c.n_in < 1 || c.n_hidden < 1) throw usage_error("--n-in/--n-hidden must be >= 1");
  if (c.ensemble < 1) throw usage_error("--ensemble must be >= 1");
  if (c.mc_samples < 2) throw usage_error("--mc-samples must be >= 2");
  if (!(c.tau_rel > 0)) throw usage_error("--tau-rel must be > 0");
  if (!(c.ks_max > 0)) throw usage_error("--ks-max must be > 0");
  if (!(c.sigma0 > 0)) throw usage_error("--sigma0 must be > 0");
  make_activation(c);
  make_dist(c);
}

fs::path prepare_out(const std::string& command, const Cfg& c) {
  const fs::path dir(c.out);
  fs::create_directories(dir);
  write_json(dir / "manifest.json", resolved_config(command, c));
  return dir;
}

HessianMatrix build_hessian(const TwoLayerNet& net, const Cfg& c) {
  if (net.activation.kind() == ActKind::Polynomial)
    return outer_product_hessian_mc(net, c.mc_samples,
                                    derive_seed(c.seed, "poly-mc"), c.threads)
        .mean;
  return hessian_analytic(net);
}

// ---- spectrum -----------------------------------------------------------------

int cmd_spectrum(const Cfg& c) {
  validate_common(c);
  const auto act = make_activation(c);
  if (act.kind() == ActKind::Polynomial)
    throw usage_error("spectrum needs a closed-form Hessian; use rank-scan for poly");
  const Architecture arch(c.n_in, c.n_hidden);
  if (c.export_hessian && arch.param_count() > 5000)
    throw usage_error("refusing full Hessian export for D > 5000 (D=" +
                      std::to_string(arch.param_count()) + ")");
  const auto dist = make_dist(c);
  const fs::path dir = prepare_out("spectrum", c);

  std::vector<std::vector<double>> all(static_cast<std::size_t>(c.ensemble));
  std::vector<std::vector<double>> nonzero(static_cast<std::size_t>(c.ensemble));
  std::optional<HessianMatrix> first;
  parallel_for(c.ensemble, c.threads, [&](int r) {
    const auto net =
        sample_teacher(arch, act, dist, derive_seed(c.seed, "ensemble-teacher",
                                                    static_cast<std::uint64_t>(r)));
    const auto H = hessian_analytic(net);
    const auto s = eig_sym(H, c.tau_rel);
    auto& a = all[static_cast<std::size_t>(r)];
    auto& nz = nonzero[static_cast<std::size_t>(r)];
    for (Eigen::Index i = 0; i < s.eigenvalues.size(); ++i) {
      a.push_back(s.eigenvalues(i));
      if (s.eigenvalues(i) > s.tol_used) nz.push_back(s.eigenvalues(i));
    }
    if (r == 0 && c.export_hessian) first = H;
  });

  std::vector<double> pooled, pooled_nz;
  for (int r = 0; r < c.ensemble; ++r) {
    pooled.insert(pooled.end(), all[static_cast<std::size_t>(r)].begin(),
                  all[static_cast<std::size_t>(r)].end());
    pooled_nz.insert(pooled_nz.end(), nonzero[static_cast<std::size_t>(r)].begin(),
                     nonzero[static_cast<std::size_t>(r)].end());
  }
  write_spectrum_csv(dir / "spectrum.csv", pooled);
  write_spectrum_csv(dir / "spectrum_nonzero.csv", pooled_nz);
  write_density_csv(dir / "density.csv", spectral_histogram(pooled_nz));
  if (first) {
    write_hessian_csv(dir / "hessian_0.csv", *first);
    write_json(dir / "hessian_0.json", hessian_to_json(*first));
  }

  json report;
  report["activation"] = act.name();
  report["arch"] = {{"n_in", c.n_in}, {"n_hidden", c.n_hidden}};
  report["ensemble"] = c.ensemble;
  report["pooled_nonzero"] = pooled_nz.size();
  int code = 0;
  if (act.kind() == ActKind::Linear) {
    const auto pred = linear_spectrum_prediction(c.n_in, c.n_hidden);
    const int points = 512;
    std::vector<double> xs(points), ys(points);
    const double lo = 0.0, hi = pred.support_hi();
    for (int i = 0; i < points; ++i) {
      xs[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / (points - 1);
      ys[static_cast<std::size_t>(i)] = pred.pdf(xs[static_cast<std::size_t>(i)]);
    }
    write_xy_csv(dir / "theory_pdf.csv", "x", "pdf", xs, ys);
    const double ks = ks_distance(pooled_nz, [&](double x) { return pred.cdf(x); });
    report["ks"] = ks;
    report["ks_max"] = c.ks_max;
    report["verdict"] = ks <= c.ks_max ? "pass" : "fail";
    if (ks > c.ks_max) code = 4;
  } else {
    report["ks"] = nullptr;
    report["verdict"] = "n/a (no closed-form prediction)";
  }
  write_json(dir / "ks_report.json", report);
  return code;
}

// ---- rank-scan ----------------------------------------------------------------

int cmd_rank_scan(const Cfg& c, bool ensemble_given) {
  validate_common(c);
  const int seeds = ensemble_given ? c.ensemble : 3;
  int lo = 0, hi = 0;
  if (std::sscanf(c.grid.c_str(), "%d:%d", &lo, &hi) != 2 || lo < 1 || hi < lo)
    throw usage_error("--grid must be min:max with 1 <= min <= max");
  const auto act = make_activation(c);
  const auto dist = make_dist(c);
  const fs::path dir = prepare_out("rank-scan", c);

  struct Row {
    int n_in, n_hidden, seed_idx;
    std::int64_t rank, n_eff;
    bool match;
  };
  const int span = hi - lo + 1;
  std::vector<Row> rows(static_cast<std::size_t>(span) * span * seeds);
  parallel_for(span * span * seeds, c.threads, [&](int idx) {
    const int cell = idx / seeds, sidx = idx % seeds;
    const int ni = lo + cell / span, nh = lo + cell % span;
    const Architecture arch(ni, nh);
    Cfg cc = c;
    const auto net = sample_teacher(
        arch, act, dist,
        derive_seed(c.seed, "rank-scan",
                    static_cast<std::uint64_t>(idx)));
    const auto H = build_hessian(net, cc);
    const auto rank = eig_sym(H, c.tau_rel).rank;
    auto rep = effective_params(act, arch);
    rep.rank_observed = rank;
    const bool match = rep.upper_bound_only ? rank <= rep.n_eff_predicted
                                            : rank == rep.n_eff_predicted;
    rows[static_cast<std::size_t>(idx)] =
        Row{ni, nh, sidx, rank, rep.n_eff_predicted, match};
  });

  std::ofstream out(dir / "rank_scan.csv");
  out << "# hesslab " << version << "\n";
  out << "n_in,n_hidden,rank,n_eff_predicted,match\n";
  bool all_match = true;
  for (const auto& r : rows) {
    out << r.n_in << "," << r.n_hidden << "," << r.rank << "," << r.n_eff << ","
        << (r.match ? "true" : "false") << "\n";
    all_match = all_match && r.match;
  }
  json report{{"grid", c.grid},
              {"seeds_per_cell", seeds},
              {"activation", act.name()},
              {"all_match", all_match}};
  write_json(dir / "rank_report.json", report);
  return all_match ? 0 : 4;
}

// ---- dynamics -----------------------------------------------------------------

int cmd_dynamics(const Cfg& c) {
  validate_common(c);
  const auto act = make_activation(c);
  if (act.kind() == ActKind::Polynomial)
    throw usage_error("dynamics needs a closed-form Hessian for the decay law");
  if (c.batch < 1 || c.record_every < 1)
    throw usage_error("--batch and --record-every must be >= 1");
  const Architecture arch(c.n_in, c.n_hidden);
  const auto dist = make_dist(c);
  const fs::path dir = prepare_out("dynamics", c);

  const auto teacher = sample_teacher(arch, act, dist, derive_seed(c.seed, "teacher"));
  const auto spectrum = eig_sym(hessian_analytic(teacher), c.tau_rel);
  const double lmax = spectrum.eigenvalues(spectrum.eigenvalues.size() - 1);
  double lmin = lmax;
  for (Eigen::Index i = 0; i < spectrum.eigenvalues.size(); ++i)
    if (spectrum.eigenvalues(i) > spectrum.tol_used) {
      lmin = spectrum.eigenvalues(i);
      break;
    }
  const double lr = c.lr > 0 ? c.lr : 0.05 / lmax;
  // run far enough that the slow mode dominates the fit window but the loss
  // stays well above the floating-point floor of the loss evaluator
  const int steps =
      c.steps > 0 ? c.steps
                  : std::min(200000, static_cast<int>(std::ceil(12.0 / (lmin * lr))));

  const auto student = perturb(teacher, c.sigma0, derive_seed(c.seed, "dyn-perturb"));
  const auto traj =
      sgd_train(student, teacher, lr, c.batch, steps, c.record_every,
                derive_seed(c.seed, "dyn-train"), lmax);
  write_xy_csv(dir / "trajectory.csv", "t", "loss", traj.times, traj.losses);
  write_xy_csv(dir / "predicted.csv", "t", "loss_pred", traj.times,
               predicted_loss_curve(spectrum, c.sigma0, traj.times));

  const auto fit = fit_tail_rate(traj, 0.25);
  json report = fit_report_json(fit, 2.0 * lmin);
  report["lr"] = lr;
  report["steps"] = steps;
  report["rate_tol"] = c.rate_tol;
  write_json(dir / "fit_report.json", report);
  return report.at("rel_err").get<double>() <= c.rate_tol ? 0 : 4;
}

// ---- verify -------------------------------------------------------------------

int cmd_verify(const Cfg& c) {
  validate_common(c);
  const auto act = make_activation(c);
  if (act.kind() == ActKind::Polynomial)
    throw usage_error("verify compares closed forms; use linear|quadratic|erf");
  const Architecture arch(c.n_in, c.n_hidden);
  const auto dist = make_dist(c);
  const fs::path dir = prepare_out("verify", c);

  const auto teacher = sample_teacher(arch, act, dist, derive_seed(c.seed, "teacher"));
  const auto H = hessian_analytic(teacher);
  const auto rep = validate_analytic_vs_mc(teacher, H, c.mc_samples,
                                           derive_seed(c.seed, "verify-mc"), c.threads);
  json out = to_json(rep);
  bool pass = rep.pass;

  if (act.kind() == ActKind::Linear) {
    const auto eig = verify_block_eigenstructure(teacher);
    const bool eig_ok = eig.max_residual < 1e-10 && eig.independent;
    out["eigenstructure"] = {{"max_residual", eig.max_residual},
                             {"n_sum_type", eig.n_sum_type},
                             {"n_kernel_type", eig.n_kernel_type},
                             {"independent", eig.independent},
                             {"verdict", eig_ok ? "pass" : "fail"}};
    pass = pass && eig_ok;
  }
  out["verdict"] = pass ? "pass" : "fail";
  write_json(dir / "verify_report.json", out);
  return pass ? 0 : 4;
}

// ---- theory-curve ----------------------------------------------------------------

int cmd_theory_curve(const Cfg& c) {
  validate_common(c);
  const fs::path dir = prepare_out("theory-curve", c);
  auto dump = [&](const TheoreticalSpectrum& t, const std::string& name) {
    const int points = 512;
    std::vector<double> xs(points), ys(points);
    const double lo = t.support_lo(), hi = t.support_hi();
    for (int i = 0; i < points; ++i) {
      xs[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / (points - 1);
      ys[static_cast<std::size_t>(i)] = t.pdf(xs[static_cast<std::size_t>(i)]);
    }
    write_xy_csv(dir / (name + ".csv"), "x", "pdf", xs, ys);
  };
  dump(chi2_scaled(c.n_hidden), "chi2");
  dump(mp_scaled(c.n_in, c.n_hidden), "mp");
  dump(TheoreticalSpectrum::convolution(c.n_in, c.n_hidden), "convolution");
  dump(linear_spectrum_prediction(c.n_in, c.n_hidden), "prediction");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"teacher-student Hessian spectrum toolkit"};
  app.require_subcommand(1);
  Cfg c;

  auto* sp = app.add_subcommand("spectrum", "ensemble Hessian eigenspectrum vs theory");
  auto* rs = app.add_subcommand("rank-scan", "Hessian rank over an (n_in, n_hidden) grid");
  auto* dy = app.add_subcommand("dynamics", "near-optimum SGD decay vs the eigenvalue law");
  auto* vf = app.add_subcommand("verify", "analytic Hessian vs Monte-Carlo oracle");
  auto* tc = app.add_subcommand("theory-curve", "emit pdf curves for the predicted laws");
  for (auto* sub : {sp, rs, dy, vf, tc}) add_common_options(sub, c);
  sp->add_flag("--export-hessian", c.export_hessian,
               "write the first teacher's Hessian (refused for D > 5000)");
  rs->add_option("--grid", c.grid, "n_in/n_hidden range as min:max");

  try {
    app.parse(argc, argv);
    CLI::App* sub = app.get_subcommands().front();
    merge_config(sub, c);
    if (const char* env = std::getenv("HESSLAB_SEED")) {
      try {
        c.seed = std::stoull(env);
      } catch (const std::exception&) {
        throw usage_error("HESSLAB_SEED must be an unsigned integer");
      }
    }
    if (sub == sp) return cmd_spectrum(c);
    if (sub == rs) return cmd_rank_scan(c, rs->count("--ensemble") > 0);
    if (sub == dy) return cmd_dynamics(c);
    if (sub == vf) return cmd_verify(c);
    if (sub == tc) return cmd_theory_curve(c);
    return 2;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  } catch (const usage_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const numeric_error& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
