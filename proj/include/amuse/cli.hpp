// SPDX-License-Identifier: Apache-2.0
#pragma once

// Command-line front end. Exit codes: 0 success, 1 failed invariant,
// 2 usage or configuration error, 3 numerical abort.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <regex>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Core>

#include "amuse/checkpoint.hpp"
#include "amuse/config.hpp"
#include "amuse/experiments.hpp"
#include "amuse/probes.hpp"
#include "amuse/quadratic.hpp"
#include "amuse/report.hpp"
#include "amuse/verify.hpp"

namespace amuse {

enum ExitCode : int { kExitOk = 0, kExitInvariant = 1, kExitUsage = 2, kExitNumerical = 3 };

namespace cli_detail {

namespace fs = std::filesystem;

/// Config-file option plus one string flag per registry key.
struct KeyFlags {
  std::string config_path;
  std::map<std::string, std::string> values;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "JSON config or run manifest");
    for (const auto& k : config_keys()) app->add_option("--" + k.name, values[k.name], k.help);
  }

  RunConfig resolve(const CLI::App* app) const {
    std::vector<std::pair<std::string, std::string>> flags;
    for (const auto& k : config_keys()) {
      if (app->count("--" + k.name) > 0) flags.emplace_back(k.name, values.at(k.name));
    }
    return parse_config(config_path, flags);
  }
};

inline void apply_thread_cap() {
  if (const char* n = std::getenv("AMUSE_THREADS"); n && *n) {
    const int v = std::atoi(n);
    if (v > 0) Eigen::setNbThreads(v);
  }
}

inline fs::path run_dir(const RunConfig& rc, const std::string& experiment) {
  return fs::path(rc.out_dir) / run_file_name(experiment, to_string(rc.train.opt.kind), rc.train.seed, "");
}

inline std::string checkpoint_name(std::uint64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ckpt-%07llu.bin", static_cast<unsigned long long>(step));
  return buf;
}

/// Writes manifest, metrics (and alpha rows), and the final checkpoint.
inline void write_run(const fs::path& dir, const RunConfig& rc, const std::string& subcommand,
                      const std::string& experiment, const RunResult& res) {
  fs::create_directories(dir);
  auto manifest = manifest_json(rc, subcommand);
  manifest["result"] = {{"steps_completed", res.rows.size()},
                        {"aborted", res.aborted},
                        {"abort_reason", res.abort_reason},
                        {"lanczos_failures", res.lanczos_failures}};
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  const std::string stem = run_file_name(experiment, to_string(rc.train.opt.kind), rc.train.seed, "");
  write_text(dir / (stem + ".csv"), metrics_csv(res.rows));
  if (!res.alpha_rows.empty()) {
    std::ostringstream os;
    write_alpha_csv(os, res.alpha_rows);
    write_text(dir / (stem + "-alpha.csv"), os.str());
  }
  save_checkpoint(dir / "final.bin", res.model, &res.state);
}

inline CheckpointSink sink_into(const fs::path& dir) {
  return [dir](std::uint64_t step, const MlpModel& m, const OptimizerState& s) {
    fs::create_directories(dir);
    save_checkpoint(dir / checkpoint_name(step), m, &s);
  };
}

/// Periodic checkpoints of a run directory, ordered by step.
inline std::vector<std::pair<std::uint64_t, fs::path>> list_checkpoints(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("run directory does not exist: " + dir.string());
  static const std::regex pat("ckpt-(\\d+)\\.bin");
  std::vector<std::pair<std::uint64_t, fs::path>> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = e.path().filename().string();
    if (std::regex_match(name, m, pat)) out.emplace_back(std::stoull(m[1].str()), e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline int finish_run(std::ostream& out, const fs::path& dir, const RunResult& res) {
  out << "wrote " << dir.string() << " (" << res.rows.size() << " steps";
  if (res.lanczos_failures) out << ", " << res.lanczos_failures << " unconverged bases";
  out << ")\n";
  if (res.aborted) {
    out << "aborted: " << res.abort_reason << " (last good checkpoint saved)\n";
    return kExitNumerical;
  }
  return kExitOk;
}

}  // namespace cli_detail

/// Entry point; `out` receives progress and tables, `err` diagnostics.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  namespace fs = std::filesystem;
  using namespace cli_detail;

  CLI::App app{"amuse: orthogonalized and schedule-free optimizer experiments"};
  app.require_subcommand(1);

  KeyFlags train_flags, scaling_flags, probe_flags, decay_flags, ewa_flags, viz_flags;
  auto* train = app.add_subcommand("train", "train and record metric rows");
  train_flags.attach(train);
  auto* scaling = app.add_subcommand("scaling", "Muon with dominant/bulk update scaling");
  scaling_flags.attach(scaling);

  auto* probe = app.add_subcommand("probe", "Hessian basis and gradient ratios at a checkpoint");
  probe_flags.attach(probe);
  std::string probe_ckpt, probe_out;
  probe->add_option("--checkpoint", probe_ckpt, "checkpoint file")->required();
  probe->add_option("--out", probe_out, "output directory")->required();

  auto* ewa = app.add_subcommand("ewa", "exponential weight averaging over a run's checkpoints");
  ewa_flags.attach(ewa);
  std::string ewa_dir;
  ewa->add_option("--run-dir", ewa_dir, "run directory holding ckpt-*.bin")->required();

  auto* decay = app.add_subcommand("decay", "linear learning-rate decay from a checkpoint");
  decay_flags.attach(decay);
  std::string decay_ckpt, decay_out;
  decay->add_option("--checkpoint", decay_ckpt, "checkpoint with optimizer state")->required();
  decay->add_option("--out", decay_out, "output CSV (default: stdout)");

  auto* viz = app.add_subcommand("schedule-viz", "beta, omega and alpha series of the interpolation schedule");
  viz_flags.attach(viz);

  auto* quad = app.add_subcommand("quadratic", "two-coordinate quadratic dynamics");
  double q_lambda = 4.0, q_eta = 0.1, q_a0 = 1.0, q_b0 = 1.0;
  std::size_t q_iters = 20;
  std::string q_mode = "gd";
  quad->add_option("--lambda", q_lambda, "curvature of the steep direction (> 1)");
  quad->add_option("--eta", q_eta, "step size (> 0)");
  quad->add_option("--a0", q_a0, "initial steep coordinate");
  quad->add_option("--b0", q_b0, "initial flat coordinate");
  quad->add_option("--iters", q_iters, "iterations");
  quad->add_option("--mode", q_mode, "gd | matrix_normalized")->check(CLI::IsMember({"gd", "matrix_normalized"}));

  auto* verify = app.add_subcommand("verify", "oracle and invariant suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    apply_thread_cap();
    if (*train || *scaling) {
      const bool is_train = train->parsed();
      const RunConfig rc = is_train ? train_flags.resolve(train) : scaling_flags.resolve(scaling);
      const Dataset ds = load_dataset(rc);
      const TrainConfig tc = materialize(rc, ds);
      const fs::path dir = run_dir(rc, rc.experiment);
      const RunResult res = is_train ? run_training(tc, ds, sink_into(dir))
                                     : run_subspace_scaling(tc, ds, rc.scale_alpha, rc.scale_gamma, rc.scale_start,
                                                            sink_into(dir));
      write_run(dir, rc, is_train ? "train" : "scaling", rc.experiment, res);
      return finish_run(out, dir, res);
    }

    if (*probe) {
      const RunConfig rc = probe_flags.resolve(probe);
      const Dataset ds = load_dataset(rc);
      const TrainConfig tc = materialize(rc, ds);
      Checkpoint ck = load_checkpoint(probe_ckpt);
      const std::size_t k = tc.probe.k ? tc.probe.k : ds.num_classes;
      const Batch hess = detail::hessian_batch(ds, tc.probe.hessian_samples);
      const Batch full = ds.as_batch();
      LanczosOptions lo;
      lo.tol = tc.probe.lanczos_tol;
      const EigenBasis basis = hessian_topk(ck.model, hess, k, tc.probe.lanczos_iters, tc.seed, lo);
      fs::create_directories(probe_out);
      std::ostringstream ev;
      ev << "index,eigenvalue,residual\n";
      for (std::size_t i = 0; i < basis.k(); ++i) ev << i << ',' << fmt(basis.eigenvalues[i]) << ',' << fmt(basis.residuals[i]) << '\n';
      write_text(fs::path(probe_out) / "eigenvalues.csv", ev.str());
      const OptimizerState* st = ck.optimizer ? &*ck.optimizer : nullptr;
      save_checkpoint(fs::path(probe_out) / "basis.bin", ck.model, st, &basis);
      const FlatVector g = backward(ck.model, full).flatten();
      out << "top-" << k << " basis: " << basis.iterations << " Lanczos steps, lambda_1 = " << fmt(basis.eigenvalues[0])
          << "\nr_dom(full gradient) = " << fmt(detail::safe_ratio(g, basis)) << '\n';
      if (st && !st->z.empty() && is_schedule_free(tc.opt.kind)) {
        Optimizer opt(tc.opt, ck.model.params());
        opt.load_state(*st, ck.model.params());
        BasisRequest req{k, tc.probe.lanczos_iters, lo, tc.seed};
        std::vector<AlphaRow> rows;
        for (const auto& p : grad_probe_alpha(ck.model, opt, full, hess, tc.probe.alphas, req, tc.probe.anchor)) {
          AlphaRow r;
          r.step = st->t;
          r.alpha = p.alpha;
          r.loss = p.loss;
          r.grad_norm = norm2(p.gradient);
          if (p.measured) r.rdom_grad = p.ratios.dominant;
          rows.push_back(r);
        }
        std::ostringstream os;
        write_alpha_csv(os, rows);
        write_text(fs::path(probe_out) / "alpha.csv", os.str());
        out << os.str();
      }
      return kExitOk;
    }

    if (*ewa) {
      const RunConfig rc = ewa_flags.resolve(ewa);
      const Dataset ds = load_dataset(rc);
      const auto ckpts = list_checkpoints(ewa_dir);
      if (ckpts.empty()) throw ConfigError("no ckpt-*.bin files in " + ewa_dir);
      std::vector<FlatVector> thetas;
      std::vector<double> raw;
      MlpModel like;
      const Batch full = ds.as_batch();
      for (const auto& [step, path] : ckpts) {
        Checkpoint ck = load_checkpoint(path);
        // evaluate x for schedule-free runs
        if (ck.optimizer && !ck.optimizer->x.empty()) ck.model.params().assign_flat(vectorize(ck.optimizer->x));
        raw.push_back(forward_loss(ck.model, full));
        thetas.push_back(ck.model.params().flatten());
        like = ck.model;
      }
      const auto smooth = ewa_trace(thetas, rc.ewa_coeff, like, full);
      std::ostringstream os;
      os << "step,loss,ewa_loss\n";
      for (std::size_t i = 0; i < ckpts.size(); ++i) os << ckpts[i].first << ',' << fmt(raw[i]) << ',' << fmt(smooth[i]) << '\n';
      write_text(fs::path(ewa_dir) / "ewa.csv", os.str());
      out << os.str();
      return kExitOk;
    }

    if (*decay) {
      const RunConfig rc = decay_flags.resolve(decay);
      const Dataset ds = load_dataset(rc);
      const TrainConfig tc = materialize(rc, ds);
      Checkpoint ck = load_checkpoint(decay_ckpt);
      if (!ck.optimizer) throw ConfigError("checkpoint has no optimizer state: " + decay_ckpt);
      const auto trace = decay_probe(tc, ds, ck.model, *ck.optimizer, rc.decay_lr, rc.decay_steps);
      std::ostringstream os;
      os << "step,eval_loss\n";
      for (std::size_t i = 0; i < trace.size(); ++i) os << ck.optimizer->t + i + 1 << ',' << fmt(trace[i]) << '\n';
      if (decay_out.empty()) out << os.str();
      else write_text(decay_out, os.str());
      return kExitOk;
    }

    if (*viz) {
      const RunConfig rc = viz_flags.resolve(viz);
      const fs::path dir = fs::path(rc.out_dir) / (rc.experiment + "-schedule");
      fs::create_directories(dir);
      bool ok = true;
      for (double rho : rc.viz_rhos) {
        const ScheduleViz v = schedule_viz(rc.train.opt.beta1, rho, rc.train.opt.warmup_steps, rc.viz_T);
        std::ostringstream series, hist;
        series << "t,beta,omega,alpha\n";
        for (std::size_t t = 0; t < v.beta.size(); ++t)
          series << t + 1 << ',' << fmt(v.beta[t]) << ',' << fmt(v.omega[t]) << ',' << fmt(v.alpha[t]) << '\n';
        hist << "bin,alpha_mass\n";
        for (std::size_t b = 0; b < v.histogram.size(); ++b) hist << b << ',' << fmt(v.histogram[b]) << '\n';
        const std::string tag = "rho" + fmt(rho);
        write_text(dir / ("series-" + tag + ".csv"), series.str());
        write_text(dir / ("hist-" + tag + ".csv"), hist.str());
        double s = 0.0;
        for (double a : v.alpha) s += a;
        ok = ok && std::abs(s - 1.0) < 1e-10;
        out << tag << ": beta_T = " << fmt(v.beta.back()) << ", omega_T = " << fmt(v.omega.back())
            << ", sum(alpha) - 1 = " << fmt(s - 1.0) << '\n';
      }
      write_text(dir / "manifest.json", manifest_json(rc, "schedule-viz").dump(2) + "\n");
      return ok ? kExitOk : kExitInvariant;
    }

    if (*quad) {
      const auto traj = run_quadratic(q_lambda, q_eta, q_a0, q_b0, q_iters,
                                      q_mode == "gd" ? QuadMode::gd : QuadMode::matrix_normalized);
      out << "t,a,b\n";
      for (const auto& p : traj) out << p.t << ',' << fmt(p.a) << ',' << fmt(p.b) << '\n';
      if (traj.size() != q_iters + 1) err << "halted at t = " << traj.back().t << ": a coordinate reached 0\n";
      return kExitOk;
    }

    if (*verify) {
      bool all = true;
      for (const auto& r : run_core_checks()) {
        char line[96];
        std::snprintf(line, sizeof line, "%-4s %-22s %8.3fs  ", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.seconds);
        out << line << r.detail << '\n';
        all = all && r.passed;
      }
      return all ? kExitOk : kExitInvariant;
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const FormatError& e) {
    err << "input error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    err << "invalid argument: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericalError& e) {
    err << "numerical abort: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitInvariant;
  }
  return kExitUsage;
}

}  // namespace amuse
