// Command-line front end: deterministic-equivalent solves, Monte-Carlo
// estimates, DE-vs-MC comparison, input covariance optimization, statistics
// extraction, and model validation.  Output is CSV with 17 significant
// digits.  Exit codes: 0 success, 1 comparison envelope breached, 2 invalid
// input, 3 fixed-point non-convergence.

#include <CLI11.hpp>

#include <demac/demac.hpp>
#include <demac/io.hpp>

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace {

using demac::ChannelModel;
using demac::InputCovarianceSet;

constexpr double kLn2 = 0.6931471805599453;

struct CommonOptions {
  std::string model_path;
  std::string q_path;
  std::string output_path;
  std::vector<double> snr_db{-10, -5, 0, 5, 10, 15, 20};
  double tol = 1e-10;
  long max_iters = 10000;
  double damping = 0.0;
  std::uint64_t seed = demac::kDefaultSeed;
  long realizations = 10000;
  bool antithetic = false;
  std::string form = "auto";
  bool nats = false;
  unsigned threads = std::thread::hardware_concurrency();
  std::string emit_q_dir;
  double envelope_se = 3.0;
  double envelope_rel = 0.01;
};

void add_model_option(CLI::App* cmd, CommonOptions& opt) {
  cmd->add_option("-m,--model", opt.model_path, "channel model JSON file")
      ->required();
}

void add_sweep_options(CLI::App* cmd, CommonOptions& opt) {
  cmd->add_option("--snr-db", opt.snr_db,
                  "SNR sweep points in dB (comma separated)")
      ->delimiter(',');
  cmd->add_option("--threads", opt.threads,
                  "worker threads across sweep points");
  cmd->add_option("-o,--output", opt.output_path,
                  "write CSV here instead of stdout");
  cmd->add_flag("--nats", opt.nats,
                "report mutual information in nats instead of bits");
  cmd->add_option("--q", opt.q_path,
                  "input covariance set JSON (default: identity)");
}

void add_solver_options(CLI::App* cmd, CommonOptions& opt) {
  cmd->add_option("--tol", opt.tol, "fixed-point sweep tolerance");
  cmd->add_option("--max-iters", opt.max_iters, "fixed-point sweep budget");
  cmd->add_option("--damping", opt.damping, "fixed-point damping in [0,1)");
}

void add_mc_options(CLI::App* cmd, CommonOptions& opt) {
  cmd->add_option("--seed", opt.seed, "Monte-Carlo seed (never time-derived)");
  cmd->add_option("-R,--realizations", opt.realizations,
                  "Monte-Carlo realization count");
  cmd->add_flag("--antithetic", opt.antithetic,
                "pair each draw with its sign-flipped scatter twin");
}

double snr_db_to_x(double snr_db, demac::Index m_total) {
  return 1.0 / (double(m_total) * std::pow(10.0, snr_db / 10.0));
}

ChannelModel<double> load_checked_model(const CommonOptions& opt) {
  ChannelModel<double> model = demac::load_model<double>(opt.model_path);
  const auto violations = demac::validate(model);
  if (!violations.empty()) {
    for (const auto& v : violations) std::cerr << "invalid model: " << v << "\n";
    throw demac::InvalidArgument("model failed validation");
  }
  return model;
}

InputCovarianceSet<double> load_covariance_or_identity(
    const CommonOptions& opt, const ChannelModel<double>& model) {
  if (opt.q_path.empty())
    return InputCovarianceSet<double>::identity(model.dims);
  InputCovarianceSet<double> q =
      demac::load_covariances<double>(opt.q_path);
  demac::check_covariances(model.dims, q);
  return q;
}

demac::SolverConfig<double> solver_config(const CommonOptions& opt) {
  demac::SolverConfig<double> cfg;
  cfg.tol = opt.tol;
  cfg.max_iters = opt.max_iters;
  cfg.damping = opt.damping;
  return cfg;
}

// Runs one job per sweep point on a small worker pool; results keep sweep
// order, and the first failure wins (reproducibly: lowest point index).
template <class Job>
std::vector<std::string> run_sweep(const CommonOptions& opt, std::size_t n,
                                   Job&& job) {
  std::vector<std::string> rows(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  const unsigned thread_count =
      std::max(1u, std::min<unsigned>(opt.threads ? opt.threads : 1u,
                                      static_cast<unsigned>(n)));
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        rows[i] = job(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (thread_count == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < thread_count; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (std::size_t i = 0; i < n; ++i)
    if (errors[i]) std::rethrow_exception(errors[i]);
  return rows;
}

void write_csv(const CommonOptions& opt, const std::string& header,
               const std::vector<std::string>& rows) {
  std::ostringstream out;
  out << header << "\n";
  for (const auto& r : rows) out << r << "\n";
  if (opt.output_path.empty()) {
    std::cout << out.str();
  } else {
    std::ofstream f(opt.output_path);
    if (!f) throw demac::ParseError("cannot write " + opt.output_path);
    f << out.str();
  }
}

double wall_ms_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now() - t0)
      .count();
}

demac::DEReport<double> run_de(const ChannelModel<double>& model,
                               const InputCovarianceSet<double>& q, double x,
                               const CommonOptions& opt) {
  const auto cfg = solver_config(opt);
  const bool reducible =
      demac::has_zero_mean(model) && demac::has_common_receive_basis(model);
  if (opt.form == "general") {
    return demac::shannon_transform(model, q, x, cfg);
  } else if (opt.form == "reduced") {
    return demac::shannon_transform_reduced(model, q, x, cfg);
  } else if (opt.form == "l1") {
    bool identity_q = true;
    for (demac::Index k = 0; k < model.dims.K; ++k)
      identity_q = identity_q &&
                   (q.Q[k].array() ==
                    demac::CMat<double>::Identity(model.dims.M_k[k],
                                                  model.dims.M_k[k])
                        .array())
                       .all();
    if (!identity_q)
      throw demac::PreconditionViolated(
          "the l1 form requires identity input covariances");
    const auto red = demac::solve_l1_inversion_free(model, x, cfg);
    return demac::shannon_from_reduced(model, q, red,
                                       demac::FormUsed::reduced_l1);
  } else if (opt.form == "auto") {
    if (reducible) return demac::shannon_transform_reduced(model, q, x, cfg);
    return demac::shannon_transform(model, q, x, cfg);
  }
  throw demac::InvalidArgument("unknown form: " + opt.form);
}

int cmd_solve(const CommonOptions& opt) {
  const auto model = load_checked_model(opt);
  const auto q = load_covariance_or_identity(opt, model);
  const auto mi_unit = opt.nats ? "I_nats" : "I_bits";
  const std::string header = std::string("snr_db,x,V_nats,") + mi_unit +
                             ",cauchy,iters,residual,wall_ms";
  auto rows = run_sweep(opt, opt.snr_db.size(), [&](std::size_t i) {
    const double snr = opt.snr_db[i];
    const double x = snr_db_to_x(snr, model.dims.M());
    const auto t0 = std::chrono::steady_clock::now();
    const auto rep = run_de(model, q, x, opt);
    const double ms = wall_ms_since(t0);
    const double mi = opt.nats ? rep.I : rep.I / kLn2;
    std::ostringstream row;
    row << demac::g17(snr) << ',' << demac::g17(x) << ','
        << demac::g17(rep.V) << ',' << demac::g17(mi) << ','
        << demac::g17(std::real(rep.G)) << ',' << rep.iters << ','
        << demac::g17(rep.residual) << ',' << demac::g17(ms);
    return row.str();
  });
  write_csv(opt, header, rows);
  return 0;
}

int cmd_montecarlo(const CommonOptions& opt) {
  const auto model = load_checked_model(opt);
  const auto q = load_covariance_or_identity(opt, model);
  const std::string header = "snr_db,mi_mean,mi_stderr,R,seed,wall_ms";
  auto rows = run_sweep(opt, opt.snr_db.size(), [&](std::size_t i) {
    const double snr = opt.snr_db[i];
    const double x = snr_db_to_x(snr, model.dims.M());
    demac::MCConfig<double> cfg;
    cfg.realizations = opt.realizations;
    cfg.seed = opt.seed;
    cfg.antithetic = opt.antithetic;
    const auto t0 = std::chrono::steady_clock::now();
    const auto est = demac::ergodic_mi(model, q, x, cfg);
    const double ms = wall_ms_since(t0);
    const double scale = opt.nats ? 1.0 : 1.0 / kLn2;
    std::ostringstream row;
    row << demac::g17(snr) << ',' << demac::g17(est.mean * scale) << ','
        << demac::g17(est.std_error * scale) << ',' << est.realizations << ','
        << est.seed << ',' << demac::g17(ms);
    return row.str();
  });
  write_csv(opt, header, rows);
  return 0;
}

int cmd_compare(const CommonOptions& opt) {
  const auto model = load_checked_model(opt);
  const auto q = load_covariance_or_identity(opt, model);
  const std::string header =
      "snr_db,de_mi,mc_mean,mc_stderr,R,seed,abs_diff,diff_in_se,wall_ms";
  std::atomic<bool> breached{false};
  auto rows = run_sweep(opt, opt.snr_db.size(), [&](std::size_t i) {
    const double snr = opt.snr_db[i];
    const double x = snr_db_to_x(snr, model.dims.M());
    const auto t0 = std::chrono::steady_clock::now();
    const auto rep = run_de(model, q, x, opt);
    demac::MCConfig<double> cfg;
    cfg.realizations = opt.realizations;
    cfg.seed = opt.seed;
    cfg.antithetic = opt.antithetic;
    const auto est = demac::ergodic_mi(model, q, x, cfg);
    const double ms = wall_ms_since(t0);
    const double diff = std::abs(rep.I - est.mean);
    const double in_se =
        est.std_error > 0 ? diff / est.std_error
                          : (diff == 0 ? 0 : std::numeric_limits<double>::infinity());
    const double envelope = std::max(opt.envelope_se * est.std_error,
                                     opt.envelope_rel * std::abs(est.mean));
    if (diff > envelope) breached = true;
    const double scale = opt.nats ? 1.0 : 1.0 / kLn2;
    std::ostringstream row;
    row << demac::g17(snr) << ',' << demac::g17(rep.I * scale) << ','
        << demac::g17(est.mean * scale) << ','
        << demac::g17(est.std_error * scale) << ',' << est.realizations << ','
        << est.seed << ',' << demac::g17(diff * scale) << ','
        << demac::g17(in_se) << ',' << demac::g17(ms);
    return row.str();
  });
  write_csv(opt, header, rows);
  return breached ? 1 : 0;
}

int cmd_optimize(const CommonOptions& opt) {
  const auto model = load_checked_model(opt);
  const std::string header = "snr_db,V_uniform,V_opt,gain,outer_iters";
  auto rows = run_sweep(opt, opt.snr_db.size(), [&](std::size_t i) {
    const double snr = opt.snr_db[i];
    const double x = snr_db_to_x(snr, model.dims.M());
    demac::OptConfig<double> cfg;
    cfg.inner = solver_config(opt);
    const auto res = demac::optimize(model, x, cfg);
    if (!opt.emit_q_dir.empty()) {
      std::ostringstream name;
      name << opt.emit_q_dir << "/q_snr_" << snr << "db.json";
      demac::save_covariances(name.str(), res.Q_star);
    }
    std::ostringstream row;
    row << demac::g17(snr) << ',' << demac::g17(res.trajectory.front()) << ','
        << demac::g17(res.V_star) << ','
        << demac::g17(res.V_star - res.trajectory.front()) << ','
        << res.outer_iters;
    return row.str();
  });
  write_csv(opt, header, rows);
  return 0;
}

int cmd_extract(const CommonOptions& opt, const std::string& samples_path,
                const std::string& out_path) {
  const auto set = demac::load_samples<double>(samples_path);
  const auto model = demac::extract(set);
  demac::save_model(out_path, model);
  (void)opt;
  return 0;
}

int cmd_validate(const CommonOptions& opt) {
  const ChannelModel<double> model =
      demac::load_model<double>(opt.model_path);
  const auto violations = demac::validate(model);
  if (violations.empty()) {
    std::cout << "ok\n";
    return 0;
  }
  for (const auto& v : violations) std::cout << v << "\n";
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "deterministic-equivalent mutual information for MIMO multiple-access "
      "channels with distributed antenna sets"};
  app.require_subcommand(1);

  CommonOptions opt;
  std::string samples_path, extract_out;

  CLI::App* solve = app.add_subcommand(
      "solve", "deterministic-equivalent mutual information sweep");
  add_model_option(solve, opt);
  add_sweep_options(solve, opt);
  add_solver_options(solve, opt);
  solve->add_option("--form", opt.form,
                    "fixed-point formulation: auto, general, reduced, l1");

  CLI::App* mc = app.add_subcommand(
      "montecarlo", "Monte-Carlo mutual information sweep");
  add_model_option(mc, opt);
  add_sweep_options(mc, opt);
  add_mc_options(mc, opt);

  CLI::App* cmp = app.add_subcommand(
      "compare", "deterministic equivalent against Monte Carlo");
  add_model_option(cmp, opt);
  add_sweep_options(cmp, opt);
  add_solver_options(cmp, opt);
  add_mc_options(cmp, opt);
  cmp->add_option("--form", opt.form,
                  "fixed-point formulation: auto, general, reduced, l1");
  cmp->add_option("--envelope-se", opt.envelope_se,
                  "allowed deviation in standard errors");
  cmp->add_option("--envelope-rel", opt.envelope_rel,
                  "allowed relative deviation");

  CLI::App* op = app.add_subcommand(
      "optimize", "sum-capacity input covariance optimization sweep");
  add_model_option(op, opt);
  add_sweep_options(op, opt);
  add_solver_options(op, opt);
  op->add_option("--emit-q", opt.emit_q_dir,
                 "write the optimized covariance set per SNR point here");

  CLI::App* ex = app.add_subcommand(
      "extract", "fit a jointly correlated model to channel samples");
  ex->add_option("--samples", samples_path, "sample set JSON file")
      ->required();
  ex->add_option("--out", extract_out, "output model JSON file")->required();

  CLI::App* val = app.add_subcommand("validate", "check a model file");
  add_model_option(val, opt);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (solve->parsed()) return cmd_solve(opt);
    if (mc->parsed()) return cmd_montecarlo(opt);
    if (cmp->parsed()) return cmd_compare(opt);
    if (op->parsed()) return cmd_optimize(opt);
    if (ex->parsed()) return cmd_extract(opt, samples_path, extract_out);
    if (val->parsed()) return cmd_validate(opt);
  } catch (const demac::NoConvergence& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const demac::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
