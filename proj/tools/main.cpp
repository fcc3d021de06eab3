// syncgap: experiment driver for the replica-coupled diffusion laboratory.
// Subcommands run the coupled-SDE sweeps, the linear-response verifier, the
// softmax identity and routing-bound checks, the bifurcation tables, both
// replica protocols and the toy-DiT decoder calibration, each emitting CSV or
// JSON artifacts plus a manifest with checksums for reproducibility.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "syncgap/diffusion.hpp"
#include "syncgap/dit.hpp"
#include "syncgap/io.hpp"
#include "syncgap/linear_response.hpp"
#include "syncgap/numerics.hpp"
#include "syncgap/protocols.hpp"
#include "syncgap/rng.hpp"
#include "syncgap/speciation.hpp"

using nlohmann::json;
using namespace syncgap;

namespace {

constexpr const char* kVersion = "0.1.0";

struct ExperimentConfig {
  std::string out_dir = "out";
  uint64_t seed = 10;
  int steps = 100;
  double beta_min = 1e-3, beta_max = 2e-1;
  double sigma = 0.5;
  int seeds = 32;
  double g = 0.5;
  std::vector<double> g_grid;
  std::string backend = "analytic";  // analytic | dit
  double eta = 1.0;
  int pool = 2;
  double fd_eps = 1e-5;

  // mixture and the analytic coupling realization
  double mix_separation = 6.5;
  double mix_variance = 0.25;
  double couple_rate = 1.0;
  double latent_couple_dt = 0.3;

  // protocol 1
  int t_int_stride = 1;
  int bootstrap_b = 200;
  bool share_noise = false;

  // protocol 2
  int tau_spec = -1;  // < 0: steps / 2
  int n_modes = 16;
  std::vector<int> lead_band = {0, 1, 2, 3};
  std::vector<int> trail_band = {12, 13, 14, 15};

  // toy DiT
  std::string weights;  // load calibrated weights from this JSON file
  int dit_class = 0;
  int calib_samples = 2048;
  double ridge_lambda = 1.0;

  // simulate-ou
  double ou_dt = 0.1;
  int trajectories = 10000;
  int d_z = 4;

  // bifurcation
  double kappa_query = -1.0;
  double gamma = 1.0;

  // experiment parameters only: the output location is not part of the
  // configuration identity
  json echo() const {
    return json{{"seed", seed},
                {"steps", steps},
                {"beta_min", beta_min},
                {"beta_max", beta_max},
                {"sigma", sigma},
                {"seeds", seeds},
                {"g", g},
                {"g_grid", g_grid},
                {"backend", backend},
                {"eta", eta},
                {"pool", pool},
                {"fd_eps", fd_eps},
                {"mix_separation", mix_separation},
                {"mix_variance", mix_variance},
                {"couple_rate", couple_rate},
                {"latent_couple_dt", latent_couple_dt},
                {"t_int_stride", t_int_stride},
                {"bootstrap_b", bootstrap_b},
                {"share_noise", share_noise},
                {"tau_spec", tau_spec},
                {"n_modes", n_modes},
                {"lead_band", lead_band},
                {"trail_band", trail_band},
                {"weights", weights},
                {"dit_class", dit_class},
                {"calib_samples", calib_samples},
                {"ridge_lambda", ridge_lambda},
                {"ou_dt", ou_dt},
                {"trajectories", trajectories},
                {"d_z", d_z},
                {"kappa", kappa_query},
                {"gamma", gamma}};
  }
};

void apply_config_file(ExperimentConfig& cfg, const std::string& path,
                       std::vector<std::string>& errors) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const std::exception& e) {
    errors.push_back(std::string("config: ") + e.what());
    return;
  }
  if (!j.is_object()) {
    errors.push_back("config: top level must be a JSON object");
    return;
  }
  auto get = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      field = j.at(key).get<std::decay_t<decltype(field)>>();
    } catch (const std::exception& e) {
      errors.push_back(std::string("config field '") + key + "': " + e.what());
    }
    j.erase(key);
  };
  get("out", cfg.out_dir);
  get("seed", cfg.seed);
  get("steps", cfg.steps);
  get("beta_min", cfg.beta_min);
  get("beta_max", cfg.beta_max);
  get("sigma", cfg.sigma);
  get("seeds", cfg.seeds);
  get("g", cfg.g);
  get("g_grid", cfg.g_grid);
  get("backend", cfg.backend);
  get("eta", cfg.eta);
  get("pool", cfg.pool);
  get("fd_eps", cfg.fd_eps);
  get("mix_separation", cfg.mix_separation);
  get("mix_variance", cfg.mix_variance);
  get("couple_rate", cfg.couple_rate);
  get("latent_couple_dt", cfg.latent_couple_dt);
  get("t_int_stride", cfg.t_int_stride);
  get("bootstrap_b", cfg.bootstrap_b);
  get("share_noise", cfg.share_noise);
  get("tau_spec", cfg.tau_spec);
  get("n_modes", cfg.n_modes);
  get("lead_band", cfg.lead_band);
  get("trail_band", cfg.trail_band);
  get("weights", cfg.weights);
  get("dit_class", cfg.dit_class);
  get("calib_samples", cfg.calib_samples);
  get("ridge_lambda", cfg.ridge_lambda);
  get("ou_dt", cfg.ou_dt);
  get("trajectories", cfg.trajectories);
  get("d_z", cfg.d_z);
  get("kappa", cfg.kappa_query);
  get("gamma", cfg.gamma);
  for (const auto& [key, value] : j.items()) {
    (void)value;
    errors.push_back("config field '" + key + "': unknown key");
  }
}

void validate_common(const ExperimentConfig& cfg, std::vector<std::string>& errors) {
  if (cfg.steps < 2) errors.push_back("steps: must be >= 2");
  if (cfg.beta_min < 0 || cfg.beta_max < cfg.beta_min)
    errors.push_back("beta_min/beta_max: need 0 <= beta_min <= beta_max");
  if (cfg.sigma < 0) errors.push_back("sigma: must be >= 0");
  if (cfg.seeds < 2) errors.push_back("seeds: must be >= 2");
  if (cfg.g < 0 || cfg.g > 1) errors.push_back("g: must lie in [0,1]");
  for (double g : cfg.g_grid)
    if (g < 0 || g > 1) errors.push_back("g_grid: entries must lie in [0,1]");
  if (cfg.backend != "analytic" && cfg.backend != "dit")
    errors.push_back("backend: must be 'analytic' or 'dit'");
  if (cfg.eta < 0 || cfg.eta > 1) errors.push_back("eta: must lie in [0,1]");
  if (cfg.pool < 1) errors.push_back("pool: must be >= 1");
  if (cfg.fd_eps < 1e-7 || cfg.fd_eps > 1e-3)
    errors.push_back("fd_eps: must lie in [1e-7, 1e-3]");
  if (cfg.mix_variance <= 0) errors.push_back("mix_variance: must be positive");
  if (cfg.couple_rate < 0 || cfg.couple_rate > 1)
    errors.push_back("couple_rate: must lie in [0,1]");
  if (cfg.latent_couple_dt < 0 || cfg.latent_couple_dt > 0.5)
    errors.push_back("latent_couple_dt: must lie in [0, 0.5]");
  if (cfg.t_int_stride < 1) errors.push_back("t_int_stride: must be >= 1");
  if (cfg.bootstrap_b < 100) errors.push_back("bootstrap_b: must be >= 100");
  if (cfg.n_modes < 1) errors.push_back("n_modes: must be >= 1");
  if (cfg.n_modes > cfg.seeds)
    errors.push_back("n_modes: cannot exceed the seed count");
  for (int k : cfg.lead_band)
    if (k < 0 || k >= cfg.n_modes) errors.push_back("lead_band: index outside the mode set");
  for (int k : cfg.trail_band)
    if (k < 0 || k >= cfg.n_modes) errors.push_back("trail_band: index outside the mode set");
}

// emits every artifact through one writer and records checksums
class ArtifactEmitter {
 public:
  ArtifactEmitter(std::string out_dir, std::string command, json config_echo)
      : out_dir_(std::move(out_dir)), command_(std::move(command)),
        config_(std::move(config_echo)) {
    std::filesystem::create_directories(out_dir_);
  }

  void emit_csv(const std::string& name, const CsvTable& table) {
    const std::string path = out_dir_ + "/" + name;
    table.write(path);
    checksums_[name] = file_checksum(path);
  }

  void emit_json(const std::string& name, const json& j) {
    const std::string path = out_dir_ + "/" + name;
    write_text_file(path, j.dump(2) + "\n");
    checksums_[name] = file_checksum(path);
  }

  void finish(uint64_t seed) {
    json manifest;
    manifest["command"] = command_;
    manifest["config"] = config_;
    manifest["config_hash"] = fnv1a64_hex(config_.dump());
    manifest["seed"] = seed;
    manifest["versions"] = {{"syncgap", kVersion}, {"manifest_format", 1}};
    manifest["artifacts"] = checksums_;
    write_text_file(out_dir_ + "/manifest.json", manifest.dump(2) + "\n");
  }

 private:
  std::string out_dir_, command_;
  json config_;
  std::map<std::string, std::string> checksums_;
};

GaussianMixture make_mixture(const ExperimentConfig& cfg, int side) {
  return branch_mixture(side, cfg.mix_separation, cfg.mix_variance);
}

DitModel make_dit(const ExperimentConfig& cfg, const NoiseSchedule& sched,
                  json* calib_report) {
  if (!cfg.weights.empty())
    return DitModel::from_json(json::parse(read_text_file(cfg.weights)));
  DitConfig dc;
  dc.rng_seed = cfg.seed;
  DitModel model(dc);
  const GaussianMixture mix = make_mixture(cfg, dc.latent_h);
  const CalibrationReport rep = model.calibrate_decoder(
      sched, mix, cfg.calib_samples, cfg.ridge_lambda, cfg.seed ^ 0xCA11B);
  if (calib_report)
    *calib_report = {{"r2_train", rep.r2_train},
                     {"r2_holdout", rep.r2_holdout},
                     {"condition", rep.condition},
                     {"n_train", rep.n_train},
                     {"n_holdout", rep.n_holdout}};
  return model;
}

std::vector<double> effective_g_grid(const ExperimentConfig& cfg) {
  if (!cfg.g_grid.empty()) return cfg.g_grid;
  return {cfg.g};
}

int run_simulate_ou(const ExperimentConfig& cfg) {
  const NoiseSchedule sched = make_vp_schedule(cfg.steps, cfg.beta_min, cfg.beta_max);
  LinearScore lin;
  ArtifactEmitter out(cfg.out_dir, "simulate-ou", cfg.echo());

  CsvTable table({"g", "step", "u_var", "v_var"});
  const std::vector<double> grid =
      cfg.g_grid.empty() ? std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0} : cfg.g_grid;
  const int substeps = static_cast<int>(std::lround(1.0 / cfg.ou_dt));
  for (double g : grid) {
    std::vector<std::vector<double>> uslot(static_cast<std::size_t>(cfg.trajectories)),
        vslot(static_cast<std::size_t>(cfg.trajectories));
    parallel_for(static_cast<std::size_t>(cfg.trajectories), [&](std::size_t m) {
      InitSpec init;
      init.sigma = 1.0;
      init.d_z = cfg.d_z;
      init.rng_seed = SplitRng(cfg.seed).split(m + 1).key();
      ReplicaPair pair = init_replicas(init);
      SplitRng noise = SplitRng(cfg.seed).split(m + 1).split(2);
      std::vector<double>&u = uslot[m], &v = vslot[m];
      u.resize(static_cast<std::size_t>(cfg.steps) + 1);
      v.resize(static_cast<std::size_t>(cfg.steps) + 1);
      auto record = [&](int step_idx) {
        auto [uu, vv] = uv_transform(pair);
        u[static_cast<std::size_t>(step_idx)] = dot(uu, uu) / cfg.d_z;
        v[static_cast<std::size_t>(step_idx)] = dot(vv, vv) / cfg.d_z;
      };
      record(0);
      for (int n = 0; n < cfg.steps; ++n) {
        const int s = cfg.steps - n;
        for (int k = 0; k < substeps; ++k) {
          const Vec na = noise.gaussian_vec(static_cast<std::size_t>(cfg.d_z));
          const Vec nb = noise.gaussian_vec(static_cast<std::size_t>(cfg.d_z));
          pair = coupled_reverse_step(pair, s, sched, g, lin, na, nb, cfg.ou_dt);
        }
        record(n + 1);
      }
    });
    // deterministic reduction in seed order
    for (int k = 0; k <= cfg.steps; ++k) {
      double uacc = 0.0, vacc = 0.0;
      for (std::size_t m = 0; m < uslot.size(); ++m) {
        uacc += uslot[m][static_cast<std::size_t>(k)];
        vacc += vslot[m][static_cast<std::size_t>(k)];
      }
      table.add_row({g, static_cast<long long>(k), uacc / cfg.trajectories,
                     vacc / cfg.trajectories});
    }
  }
  out.emit_csv("ou_variance.csv", table);
  out.finish(cfg.seed);
  return 0;
}

int run_verify_linearization(const ExperimentConfig& cfg) {
  DitConfig dc;
  dc.rng_seed = cfg.seed;
  DitModel model(dc);
  LinearizationReportConfig rc;
  rc.fd_eps = cfg.fd_eps;
  rc.rng_seed = cfg.seed;
  const json report = linearization_report(model, rc);
  ArtifactEmitter out(cfg.out_dir, "verify-linearization", cfg.echo());
  out.emit_json("linearization_report.json", report);
  out.finish(cfg.seed);

  for (const auto& layer : report.at("layers")) {
    const bool ok = layer.at("identities").at("ok").get<bool>();
    std::printf("layer %d identities: %s\n", layer.at("layer").get<int>(),
                ok ? "ok" : "FAILED");
  }
  return 0;
}

int run_bounds_check(const ExperimentConfig& cfg) {
  ArtifactEmitter out(cfg.out_dir, "bounds-check", cfg.echo());
  SplitRng root(cfg.seed);
  CsvTable table({"trial", "n", "lhs", "rhs", "slack", "in_regime", "holds"});
  int in_regime = 0, holds = 0;
  double max_row_sum = 0.0, max_a0p0 = 0.0;
  const int trials = std::max(cfg.trajectories, 1000);
  for (int t = 0; t < trials; ++t) {
    SplitRng r = root.split(static_cast<uint64_t>(t));
    const std::size_t n = 8 + r.below(25);
    Matrix logits(n, n);
    for (auto& x : logits.data()) x = r.gaussian() * 0.7;
    const Matrix a0 = softmax_rows(logits);

    Vec ds_row(n);
    for (auto& x : ds_row) x = r.gaussian();
    const Vec da = softmax_jacobian_apply(a0.row(r.below(n)), ds_row);
    double rs = 0.0;
    for (double x : da) rs += x;
    max_row_sum = std::max(max_row_sum, std::fabs(rs));
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += a0(i, j);
      max_a0p0 = std::max(max_a0p0, std::fabs(s - 1.0));
    }

    Matrix v0(n, 6), ds(n, n), dv(n, 6);
    for (auto& x : v0.data()) x = r.gaussian();
    for (auto& x : ds.data()) x = r.gaussian() * 0.2;
    Vec base(6);
    for (auto& x : base) x = r.gaussian() + 0.4;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < 6; ++j) dv(i, j) = base[j] + 0.05 * r.gaussian();
    const RoutingBound rb = routing_dominance_bound(a0, v0, ds, dv);
    if (rb.in_regime) {
      ++in_regime;
      if (rb.holds) ++holds;
    }
    table.add_row({static_cast<long long>(t), static_cast<long long>(n), rb.lhs, rb.rhs,
                   rb.lhs > 0 ? rb.rhs / rb.lhs : 0.0,
                   static_cast<long long>(rb.in_regime), static_cast<long long>(rb.holds)});
  }
  out.emit_csv("bounds.csv", table);
  out.emit_json("bounds_summary.json",
                {{"trials", trials},
                 {"in_regime", in_regime},
                 {"holds", holds},
                 {"violations", in_regime - holds},
                 {"max_abs_delta_row_sum", max_row_sum},
                 {"max_a0p0_dev", max_a0p0}});
  out.finish(cfg.seed);
  std::printf("bounds-check: %d/%d in-regime instances hold, %d violations\n", holds,
              in_regime, in_regime - holds);
  return (in_regime - holds) == 0 ? 0 : 1;
}

int run_bifurcation(const ExperimentConfig& cfg) {
  ArtifactEmitter out(cfg.out_dir, "bifurcation", cfg.echo());
  if (cfg.kappa_query >= 0.0)
    std::printf("u*(kappa=%s) = %s\n", fmt17(cfg.kappa_query).c_str(),
                fmt17(solve_self_consistency(cfg.kappa_query)).c_str());

  CsvTable ustar({"kappa", "u_star"});
  for (int i = 0; i <= 300; ++i) {
    const double k = i / 100.0;
    ustar.add_row({k, solve_self_consistency(k)});
  }
  out.emit_csv("bifurcation.csv", ustar);

  GapSweepConfig gc;
  gc.gamma = cfg.gamma;
  const auto sweep = routing_dominant_gap_sweep(gc);
  CsvTable curves({"mode", "step", "layer", "g", "kappa", "snr", "censored"});
  json gaps = json::array();
  for (const auto& pt : sweep) {
    for (int s = 0; s < static_cast<int>(pt.kappa_hi_curve.size()); ++s) {
      curves.add_row({std::string("hi"), static_cast<long long>(s), 0LL, pt.g,
                      pt.kappa_hi_curve[static_cast<std::size_t>(s)], pt.snr_hi,
                      static_cast<long long>(pt.s_hi ? 0 : 1)});
      curves.add_row({std::string("lo"), static_cast<long long>(s), 0LL, pt.g,
                      pt.kappa_lo_curve[static_cast<std::size_t>(s)], pt.snr_lo,
                      static_cast<long long>(pt.s_lo ? 0 : 1)});
    }
    json entry = {{"g", pt.g}, {"snr_hi", pt.snr_hi}, {"snr_lo", pt.snr_lo}};
    entry["s_spec_hi"] = pt.s_hi ? json(*pt.s_hi) : json();
    entry["s_spec_lo"] = pt.s_lo ? json(*pt.s_lo) : json();
    entry["delta_s"] = pt.delta_s ? json(*pt.delta_s) : json();
    gaps.push_back(std::move(entry));
  }
  out.emit_csv("speciation.csv", curves);
  out.emit_json("gaps.json", {{"config",
                               {{"c", gc.c},
                                {"m", gc.m},
                                {"lambda_mlp", gc.lambda_mlp},
                                {"chi_hi", gc.chi_hi},
                                {"chi_lo", gc.chi_lo},
                                {"gamma", gc.gamma},
                                {"steps", gc.steps},
                                {"ramp_rate", gc.ramp_rate}}},
                              {"per_g", gaps}});
  out.finish(cfg.seed);
  return 0;
}

int run_protocol1_cmd(const ExperimentConfig& cfg) {
  const NoiseSchedule sched = make_vp_schedule(cfg.steps, cfg.beta_min, cfg.beta_max);
  ArtifactEmitter out(cfg.out_dir, "protocol1", cfg.echo());

  json calib;
  std::unique_ptr<PairBackend> backend;
  int side = 8;
  if (cfg.backend == "dit") {
    DitModel model = make_dit(cfg, sched, &calib);
    side = model.config().latent_h;
    backend = std::make_unique<DitPairBackend>(std::move(model), cfg.dit_class);
  } else {
    backend = std::make_unique<AnalyticPairBackend>(make_mixture(cfg, side), sched,
                                                    cfg.couple_rate);
  }
  const GaussianMixture mix = make_mixture(cfg, side);

  Protocol1Config pc;
  pc.seeds = cfg.seeds;
  pc.sigma = cfg.sigma;
  pc.eta_sampler = cfg.eta;
  pc.pool = cfg.pool;
  pc.share_noise = cfg.share_noise;
  pc.latent_couple_dt = (cfg.backend == "analytic") ? cfg.latent_couple_dt : 0.0;
  pc.bootstrap_b = cfg.bootstrap_b;
  pc.rng_seed = cfg.seed;
  for (int t = 0; t <= cfg.steps; t += cfg.t_int_stride) pc.t_int_grid.push_back(t);

  CsvTable raw({"g", "t_int", "seed", "a_feat", "d_low", "d_high"});
  CsvTable fits({"g", "tau_spec", "ci_lo", "ci_hi", "tau_g", "tau_l", "delta_tau"});
  json notes = json::object();
  for (double g : effective_g_grid(cfg)) {
    pc.g = g;
    const Protocol1Run run = run_protocol1(*backend, sched, mix, pc);
    raw.append_from(protocol1_csv(run));
    fits.append_from(protocol1_fits_csv(run));
    if (!run.fit_note.empty()) notes[fmt17(g)] = run.fit_note;
    std::printf("protocol1 g=%s tau_spec=%s [%s, %s] delta_tau=%s\n", fmt17(g).c_str(),
                fmt17(run.tau_spec).c_str(), fmt17(run.ci_lo).c_str(),
                fmt17(run.ci_hi).c_str(), fmt17(run.delta_tau).c_str());
  }
  out.emit_csv("protocol1.csv", raw);
  out.emit_csv("protocol1_fits.csv", fits);
  if (!calib.is_null()) out.emit_json("calibration.json", calib);
  if (!notes.empty()) out.emit_json("protocol1_flags.json", notes);
  out.finish(cfg.seed);
  return 0;
}

int run_protocol2_cmd(const ExperimentConfig& cfg) {
  const NoiseSchedule sched = make_vp_schedule(cfg.steps, cfg.beta_min, cfg.beta_max);
  ArtifactEmitter out(cfg.out_dir, "protocol2", cfg.echo());

  json calib;
  std::unique_ptr<PairBackend> backend;
  if (cfg.backend == "dit") {
    DitModel model = make_dit(cfg, sched, &calib);
    backend = std::make_unique<DitPairBackend>(std::move(model), cfg.dit_class);
  } else {
    backend = std::make_unique<AnalyticPairBackend>(make_mixture(cfg, 8), sched,
                                                    cfg.couple_rate);
  }

  Protocol2Config pc;
  pc.tau_spec = (cfg.tau_spec >= 0) ? cfg.tau_spec : cfg.steps / 2;
  pc.seeds = cfg.seeds;
  pc.sigma = cfg.sigma;
  pc.n_modes = cfg.n_modes;
  pc.lead_band = cfg.lead_band;
  pc.trail_band = cfg.trail_band;
  pc.eta_sampler = 0.0;  // deterministic sampler for the internal sweep
  pc.latent_couple_dt = (cfg.backend == "analytic") ? cfg.latent_couple_dt : 0.0;
  pc.rng_seed = cfg.seed;

  CsvTable energies({"g", "layer", "step", "mode", "energy"});
  CsvTable summary({"g", "layer", "lead_mean", "trail_mean", "gint", "spread"});
  json flags = json::object();
  for (double g : effective_g_grid(cfg)) {
    pc.g = g;
    const Protocol2Run run = run_protocol2(*backend, sched, pc);
    energies.append_from(protocol2_csv(run));
    summary.append_from(protocol2_summary_csv(run));
    for (const auto& s : run.summary) {
      if (!s.usable) flags[fmt17(g) + "/layer" + std::to_string(s.layer)] = s.note;
      std::printf("protocol2 g=%s layer=%d gint=%s spread=%s%s\n", fmt17(g).c_str(),
                  s.layer, fmt17(s.gint).c_str(), fmt17(s.spread).c_str(),
                  s.usable ? "" : " [flagged]");
    }
  }
  out.emit_csv("protocol2.csv", energies);
  out.emit_csv("protocol2_summary.csv", summary);
  if (!calib.is_null()) out.emit_json("calibration.json", calib);
  if (!flags.empty()) out.emit_json("protocol2_flags.json", flags);
  out.finish(cfg.seed);
  return 0;
}

int run_calibrate(const ExperimentConfig& cfg) {
  const NoiseSchedule sched = make_vp_schedule(cfg.steps, cfg.beta_min, cfg.beta_max);
  ArtifactEmitter out(cfg.out_dir, "calibrate", cfg.echo());
  DitConfig dc;
  dc.rng_seed = cfg.seed;
  DitModel model(dc);
  const GaussianMixture mix = make_mixture(cfg, dc.latent_h);
  const CalibrationReport rep = model.calibrate_decoder(
      sched, mix, cfg.calib_samples, cfg.ridge_lambda, cfg.seed ^ 0xCA11B);
  out.emit_json("dit_weights.json", model.to_json());
  out.emit_json("calibration.json", {{"r2_train", rep.r2_train},
                                     {"r2_holdout", rep.r2_holdout},
                                     {"condition", rep.condition},
                                     {"n_train", rep.n_train},
                                     {"n_holdout", rep.n_holdout}});
  out.finish(cfg.seed);
  std::printf("calibrate: r2_train=%s r2_holdout=%s\n", fmt17(rep.r2_train).c_str(),
              fmt17(rep.r2_holdout).c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"replica-coupled diffusion laboratory"};
  app.require_subcommand(1);

  ExperimentConfig cfg;
  std::string config_path;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file");
    sub->add_option("--out", cfg.out_dir, "output directory");
    sub->add_option("--seed", cfg.seed, "master rng seed");
    sub->add_option("--steps", cfg.steps, "schedule steps S");
    sub->add_option("--beta-min", cfg.beta_min, "schedule beta at the first step");
    sub->add_option("--beta-max", cfg.beta_max, "schedule beta at the last step");
    sub->add_option("--sigma", cfg.sigma, "antisymmetric init perturbation scale");
    sub->add_option("--seeds", cfg.seeds, "paired seeds M");
    sub->add_option("--g", cfg.g, "coupling strength");
    sub->add_option("--g-grid", cfg.g_grid, "coupling strength grid");
    sub->add_option("--backend", cfg.backend, "score backend: analytic | dit");
    sub->add_option("--eta", cfg.eta, "sampler stochasticity");
    sub->add_option("--pool", cfg.pool, "pooling size of the coarse/fine split");
    sub->add_option("--fd-eps", cfg.fd_eps, "finite-difference step");
    sub->add_option("--mix-separation", cfg.mix_separation, "branch separation ||m||");
    sub->add_option("--mix-variance", cfg.mix_variance, "within-branch variance");
    sub->add_option("--couple-rate", cfg.couple_rate,
                    "content-mixing efficiency of the analytic backend");
    sub->add_option("--latent-couple-dt", cfg.latent_couple_dt,
                    "Euler substep of the latent coupling drift");
    sub->add_option("--weights", cfg.weights, "toy-DiT weight file (JSON)");
    sub->add_option("--class", cfg.dit_class, "conditioning class id");
    sub->add_option("--gamma", cfg.gamma, "local score gain");
    return sub;
  };

  auto* ou = add_common(app.add_subcommand("simulate-ou", "coupled reverse-SDE sweeps"));
  ou->add_option("--dt", cfg.ou_dt, "Euler-Maruyama substep");
  ou->add_option("--trajectories", cfg.trajectories, "ensemble size");
  ou->add_option("--d-z", cfg.d_z, "latent dimension");

  add_common(app.add_subcommand("verify-linearization",
                                "attention-difference decomposition report"));
  auto* bc = add_common(
      app.add_subcommand("bounds-check", "softmax identities and routing bound"));
  bc->add_option("--trials", cfg.trajectories, "Monte-Carlo instance count");

  auto* bif = add_common(app.add_subcommand("bifurcation", "kappa/SNR/gap tables"));
  bif->add_option("--kappa", cfg.kappa_query, "print u*(kappa) for this value");

  auto* p1 = add_common(app.add_subcommand("protocol1", "intervention-based speciation"));
  p1->add_option("--t-int-stride", cfg.t_int_stride, "intervention grid stride");
  p1->add_option("--bootstrap", cfg.bootstrap_b, "bootstrap resamples");
  p1->add_flag("--share-noise", cfg.share_noise,
               "share reverse noise until the intervention step");

  auto* p2 = add_common(app.add_subcommand("protocol2", "layerwise internal mode energies"));
  p2->add_option("--tau-spec", cfg.tau_spec, "evaluation step (default: steps/2)");
  p2->add_option("--n-modes", cfg.n_modes, "empirical mode count K");
  p2->add_option("--lead-band", cfg.lead_band, "leading mode indices");
  p2->add_option("--trail-band", cfg.trail_band, "trailing mode indices");

  auto* cal = add_common(app.add_subcommand("calibrate", "fit the toy-DiT decoder"));
  cal->add_option("--samples", cfg.calib_samples, "calibration sample count");
  cal->add_option("--ridge", cfg.ridge_lambda, "ridge penalty");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // usage errors exit 2, help exits 0
  }

  std::vector<std::string> errors;
  if (!config_path.empty()) {
    apply_config_file(cfg, config_path, errors);
    // reparse so explicit flags override config-file values
    try {
      for (auto* sub : app.get_subcommands()) sub->clear();
      app.clear();
      app.parse(argc, argv);
    } catch (const CLI::ParseError&) {
      return 2;
    }
  }
  validate_common(cfg, errors);
  if (!errors.empty()) {
    for (const auto& e : errors) std::fprintf(stderr, "config error: %s\n", e.c_str());
    return 2;
  }

  try {
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "simulate-ou") return run_simulate_ou(cfg);
    if (cmd == "verify-linearization") return run_verify_linearization(cfg);
    if (cmd == "bounds-check") return run_bounds_check(cfg);
    if (cmd == "bifurcation") return run_bifurcation(cfg);
    if (cmd == "protocol1") return run_protocol1_cmd(cfg);
    if (cmd == "protocol2") return run_protocol2_cmd(cfg);
    if (cmd == "calibrate") return run_calibrate(cfg);
    std::fprintf(stderr, "unknown subcommand\n");
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
