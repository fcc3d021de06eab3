#include "syncgap/protocols.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "syncgap/rng.hpp"

namespace syncgap {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// substream labels for the per-seed noise fan-out
enum : uint64_t { kStreamInit = 1, kStreamStep = 2, kStreamBaseline = 0xBA5E };

Vec pooled(const Vec& x, int side, int pool) {
  const int coarse = side / pool;
  Vec out(static_cast<std::size_t>(coarse * coarse), 0.0);
  for (int cy = 0; cy < coarse; ++cy)
    for (int cx = 0; cx < coarse; ++cx) {
      double acc = 0.0;
      for (int py = 0; py < pool; ++py)
        for (int px = 0; px < pool; ++px)
          acc += x[static_cast<std::size_t>((cy * pool + py) * side + cx * pool + px)];
      out[static_cast<std::size_t>(cy * coarse + cx)] =
          acc / static_cast<double>(pool * pool);
    }
  return out;
}

// bilinear upsampling of a coarse grid back to side x side (half-pixel
// centers, clamped borders)
Vec upsample_bilinear(const Vec& coarse, int coarse_side, int side) {
  Vec out(static_cast<std::size_t>(side * side));
  const double scale_f = static_cast<double>(coarse_side) / side;
  for (int y = 0; y < side; ++y) {
    const double sy = std::min(std::max((y + 0.5) * scale_f - 0.5, 0.0),
                               static_cast<double>(coarse_side - 1));
    const int y0 = static_cast<int>(sy);
    const int y1 = std::min(y0 + 1, coarse_side - 1);
    const double fy = sy - y0;
    for (int x = 0; x < side; ++x) {
      const double sx = std::min(std::max((x + 0.5) * scale_f - 0.5, 0.0),
                                 static_cast<double>(coarse_side - 1));
      const int x0 = static_cast<int>(sx);
      const int x1 = std::min(x0 + 1, coarse_side - 1);
      const double fx = sx - x0;
      const double v00 = coarse[static_cast<std::size_t>(y0 * coarse_side + x0)];
      const double v01 = coarse[static_cast<std::size_t>(y0 * coarse_side + x1)];
      const double v10 = coarse[static_cast<std::size_t>(y1 * coarse_side + x0)];
      const double v11 = coarse[static_cast<std::size_t>(y1 * coarse_side + x1)];
      out[static_cast<std::size_t>(y * side + x)] =
          (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) + fy * ((1.0 - fx) * v10 + fx * v11);
    }
  }
  return out;
}

double median_ignoring_nan(const std::vector<double>& v, int* dropped = nullptr) {
  std::vector<double> clean;
  clean.reserve(v.size());
  for (double x : v)
    if (!std::isnan(x)) clean.push_back(x);
  if (dropped) *dropped = static_cast<int>(v.size() - clean.size());
  if (clean.empty()) return kNaN;
  return median(std::move(clean));
}

struct TrajectoryResult {
  Vec xa, xb;
};

// One Euler substep of the reverse-SDE coupling drift g (z_self - z_other),
// operator-split from the DDIM update; contracts the pair difference.
void apply_latent_coupling(ReplicaPair& pair, double g, double dt) {
  if (g <= 0.0 || dt <= 0.0) return;
  for (std::size_t i = 0; i < pair.zA.size(); ++i) {
    const double diff = pair.zA[i] - pair.zB[i];
    pair.zA[i] -= g * dt * diff;
    pair.zB[i] += g * dt * diff;
  }
}

// Reverse DDIM trajectory of a coupled pair. The coupling policy is: strength
// g while the reverse-step index n < t_int, decoupled afterwards. Noise is
// keyed by (seed stream, step, replica) so realizations are shared across
// intervention times and coupling strengths.
TrajectoryResult sample_pair(const PairBackend& backend, const NoiseSchedule& sched,
                             const SplitRng& seed_root, double g, int t_int,
                             double sigma, double eta, bool share_noise,
                             double latent_couple_dt) {
  const int d = backend.dim();
  InitSpec init;
  init.sigma = sigma;
  init.d_z = d;
  init.rng_seed = seed_root.split(kStreamInit).key();
  ReplicaPair pair = init_replicas(init);

  const SplitRng noise_root = seed_root.split(kStreamStep);
  for (int n = 0; n < sched.steps; ++n) {
    const int s = sched.steps - n;  // forward index of the current state
    const bool coupled = n < t_int;
    const auto [ea, eb] = backend.eps_pair(pair.zA, pair.zB, s, coupled ? g : 0.0, nullptr);
    SplitRng step_rng = noise_root.split(static_cast<uint64_t>(n));
    const Vec na = step_rng.split(0).gaussian_vec(static_cast<std::size_t>(d));
    const Vec nb = (share_noise && coupled)
                       ? na
                       : step_rng.split(1).gaussian_vec(static_cast<std::size_t>(d));
    pair.zA = ddim_step(pair.zA, s, sched, ea, eta, na);
    pair.zB = ddim_step(pair.zB, s, sched, eb, eta, nb);
    if (coupled) apply_latent_coupling(pair, g, latent_couple_dt);
  }
  return {pair.zA, pair.zB};
}

std::optional<LogisticFit> try_fit(const std::vector<double>& xs,
                                   const std::vector<double>& ys, std::string* note,
                                   const char* label) {
  // drop NaN points (all-flagged grid cells)
  std::vector<double> fx, fy;
  for (std::size_t i = 0; i < xs.size(); ++i)
    if (!std::isnan(ys[i])) {
      fx.push_back(xs[i]);
      fy.push_back(ys[i]);
    }
  try {
    return fit_logistic(fx, fy);
  } catch (const std::exception& e) {
    if (note) {
      if (!note->empty()) *note += "; ";
      *note += std::string(label) + ": " + e.what();
    }
    return std::nullopt;
  }
}

}  // namespace

AnalyticPairBackend::AnalyticPairBackend(const GaussianMixture& mix,
                                         const NoiseSchedule& sched, double couple_rate)
    : mix0_(mix), sched_(sched), couple_rate_(couple_rate) {
  if (couple_rate_ < 0.0 || couple_rate_ > 1.0)
    throw std::invalid_argument("AnalyticPairBackend: couple_rate must lie in [0,1]");
  per_step_.reserve(static_cast<std::size_t>(sched_.steps) + 1);
  for (int s = 0; s <= sched_.steps; ++s)
    per_step_.push_back(mix0_.diffused(sched_.alpha[static_cast<std::size_t>(s)],
                                       sched_.sigma2[static_cast<std::size_t>(s)]));
}

std::pair<Vec, Vec> AnalyticPairBackend::eps_pair(
    const Vec& zA, const Vec& zB, int s, double g,
    std::vector<std::pair<Vec, Vec>>* captures) const {
  if (s < 0 || s > sched_.steps)
    throw std::out_of_range("AnalyticPairBackend: step out of range");
  if (g < 0.0 || g > 1.0)
    throw std::invalid_argument("AnalyticPairBackend: g must lie in [0,1]");
  const GaussianMixture& mix = per_step_[static_cast<std::size_t>(s)];
  const double sig = sched_.sigma(s);
  const double alpha = sched_.alpha[static_cast<std::size_t>(s)];
  const Vec ea0 = vscale(mixture_score(mix, zA), -sig);
  const Vec eb0 = vscale(mixture_score(mix, zB), -sig);
  const double w = couple_rate_ * g / (1.0 + g);
  Vec ea(ea0.size()), eb(eb0.size());
  if (sig > 0.0) {
    // pull the predicted clean content together, then recompose eps-hat
    for (std::size_t i = 0; i < ea0.size(); ++i) {
      const double xa = (zA[i] - sig * ea0[i]) / alpha;
      const double xb = (zB[i] - sig * eb0[i]) / alpha;
      const double xa_mix = xa + w * (xb - xa);
      const double xb_mix = xb + w * (xa - xb);
      ea[i] = (zA[i] - alpha * xa_mix) / sig;
      eb[i] = (zB[i] - alpha * xb_mix) / sig;
    }
  } else {
    // zero-noise step: mix the predictions directly
    for (std::size_t i = 0; i < ea0.size(); ++i) {
      ea[i] = ea0[i] + w * (eb0[i] - ea0[i]);
      eb[i] = eb0[i] + w * (ea0[i] - eb0[i]);
    }
  }
  if (captures) {
    captures->clear();
    captures->emplace_back(zA, zB);
  }
  return {ea, eb};
}

std::pair<Vec, Vec> DitPairBackend::eps_pair(
    const Vec& zA, const Vec& zB, int s, double g,
    std::vector<std::pair<Vec, Vec>>* captures) const {
  return model_.predict_eps_pair(zA, zB, s, cls_, g, captures);
}

GaussianMixture branch_mixture(int side, double separation, double variance) {
  if (side < 2) throw std::invalid_argument("branch_mixture: side must be >= 2");
  Vec m(static_cast<std::size_t>(side * side));
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x)
      m[static_cast<std::size_t>(y * side + x)] =
          std::cos(3.14159265358979323846 * y / (side - 1));
  const double n = norm2(m);
  for (auto& v : m) v *= separation / n;
  return GaussianMixture::isotropic(std::move(m), variance);
}

std::optional<double> feature_agreement(const Vec& xa, const Vec& xb,
                                        const GaussianMixture& mix, int side, int pool) {
  if (xa.size() != xb.size())
    throw std::invalid_argument("feature_agreement: shape mismatch");
  if (xa.size() != static_cast<std::size_t>(side * side))
    throw std::invalid_argument("feature_agreement: side does not match image size");
  if (pool < 1 || side % pool != 0)
    throw std::invalid_argument("feature_agreement: pool must divide side");

  Vec mhat = mix.m();
  const double mn = norm2(mhat);
  if (mn > 0.0)
    for (auto& x : mhat) x /= mn;

  // Branch coordinate rescaled by ||m|| so the pooled block keeps comparable
  // weight: by construction opposite branches score strictly lower.
  auto phi = [&](const Vec& x) {
    Vec p = pooled(x, side, pool);
    const double mu = mean(p);
    for (auto& v : p) v -= mu;
    Vec f;
    f.reserve(p.size() + 1);
    f.push_back(mn > 0.0 ? dot(x, mhat) / mn : 0.0);
    f.insert(f.end(), p.begin(), p.end());
    return f;
  };

  const Vec fa = phi(xa), fb = phi(xb);
  const double na = norm2(fa), nb = norm2(fb);
  if (na == 0.0 || nb == 0.0) return std::nullopt;  // undefined-agreement flag
  return dot(fa, fb) / (na * nb);
}

std::pair<double, double> scale_decomposition(const Vec& xa, const Vec& xb, int side,
                                              int pool) {
  if (xa.size() != xb.size() || xa.size() != static_cast<std::size_t>(side * side))
    throw std::invalid_argument("scale_decomposition: shape mismatch");
  if (pool < 1 || side % pool != 0)
    throw std::invalid_argument("scale_decomposition: pool must divide side");
  const int coarse = side / pool;

  const Vec pa = pooled(xa, side, pool);
  const Vec pb = pooled(xb, side, pool);
  double d_low = 0.0;
  for (std::size_t i = 0; i < pa.size(); ++i) d_low += (pa[i] - pb[i]) * (pa[i] - pb[i]);

  const Vec ua = upsample_bilinear(pa, coarse, side);
  const Vec ub = upsample_bilinear(pb, coarse, side);
  double d_high = 0.0;
  for (std::size_t i = 0; i < xa.size(); ++i) {
    const double ra = xa[i] - ua[i];
    const double rb = xb[i] - ub[i];
    d_high += (ra - rb) * (ra - rb);
  }
  return {d_low, d_high};
}

ModeBasis build_mode_basis(const Matrix& v0, int n_modes) {
  const std::size_t m = v0.rows(), d = v0.cols();
  if (n_modes < 1 || static_cast<std::size_t>(n_modes) > m)
    throw std::invalid_argument("build_mode_basis: need 1 <= n_modes <= seed count");

  // dual Gram matrix G = V0 V0^T / M
  Matrix gram(m, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i; j < m; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k) acc += v0(i, k) * v0(j, k);
      gram(i, j) = acc / static_cast<double>(m);
      gram(j, i) = gram(i, j);
    }
  const EigenDecomposition eig = sym_eig(gram);

  const double lead = std::max(eig.eigenvalues.front(), 0.0);
  int usable = 0;
  for (double l : eig.eigenvalues)
    if (l > 1e-12 * std::max(lead, 1e-300)) ++usable;
  if (n_modes > usable)
    throw std::runtime_error("build_mode_basis: rank too low, usable modes = " +
                             std::to_string(usable));

  ModeBasis basis;
  basis.seed_count = static_cast<int>(m);
  basis.dim = static_cast<int>(d);
  basis.usable_rank = usable;
  basis.r = Matrix(static_cast<std::size_t>(n_modes), d);
  basis.lambda0.resize(static_cast<std::size_t>(n_modes));
  basis.norm0.resize(static_cast<std::size_t>(n_modes));
  for (int k = 0; k < n_modes; ++k) {
    const auto kk = static_cast<std::size_t>(k);
    basis.lambda0[kk] = eig.eigenvalues[kk];
    // Nystrom map: r_k ~ V0^T w_k, normalized
    Vec r(d, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      const double w = eig.eigenvectors(i, kk);
      for (std::size_t c = 0; c < d; ++c) r[c] += v0(i, c) * w;
    }
    const double rn = norm2(r);
    if (rn == 0.0) throw std::runtime_error("build_mode_basis: degenerate mode");
    for (auto& x : r) x /= rn;
    basis.r.set_row(kk, r);
    double e0 = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      double proj = 0.0;
      for (std::size_t c = 0; c < d; ++c) proj += v0(i, c) * r[c];
      e0 += proj * proj;
    }
    basis.norm0[kk] = e0;  // stored as computed so lambda_k(0) == 1 exactly
  }
  return basis;
}

double mode_energy(const Matrix& vs, const ModeBasis& basis, int k) {
  if (vs.cols() != static_cast<std::size_t>(basis.dim))
    throw std::invalid_argument("mode_energy: dimension mismatch");
  if (k < 0 || static_cast<std::size_t>(k) >= basis.lambda0.size())
    throw std::invalid_argument("mode_energy: mode index out of range");
  const auto kk = static_cast<std::size_t>(k);
  if (basis.norm0[kk] <= 0.0)
    throw std::runtime_error("mode_energy: zero initial energy, undefined");
  double e = 0.0;
  for (std::size_t i = 0; i < vs.rows(); ++i) {
    double proj = 0.0;
    for (std::size_t c = 0; c < vs.cols(); ++c) proj += vs(i, c) * basis.r(kk, c);
    e += proj * proj;
  }
  return e / basis.norm0[kk];
}

Protocol1Run run_protocol1(const PairBackend& backend, const NoiseSchedule& sched,
                           const GaussianMixture& mix, const Protocol1Config& cfg) {
  if (cfg.seeds < 8) throw std::invalid_argument("run_protocol1: need at least 8 seeds");
  if (cfg.t_int_grid.empty())
    throw std::invalid_argument("run_protocol1: empty intervention grid");
  for (int t : cfg.t_int_grid)
    if (t < 0 || t > sched.steps)
      throw std::invalid_argument("run_protocol1: t_int outside the schedule horizon");
  const int d = backend.dim();
  const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(d))));
  if (side * side != d)
    throw std::invalid_argument("run_protocol1: latent is not a square image");

  Protocol1Run run;
  run.cfg = cfg;
  const std::size_t nt = cfg.t_int_grid.size();
  const std::size_t ns = static_cast<std::size_t>(cfg.seeds);
  run.a_feat = Matrix(nt, ns);
  run.d_low = Matrix(nt, ns);
  run.d_high = Matrix(nt, ns);
  run.baseline_a_feat.assign(ns, 0.0);

  const SplitRng root(cfg.rng_seed);

  // grid sorted ascending so each trajectory extends the shared coupled prefix
  std::vector<std::size_t> order(nt);
  for (std::size_t i = 0; i < nt; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return cfg.t_int_grid[a] < cfg.t_int_grid[b];
  });

  parallel_for(ns, [&](std::size_t seed) {
    const SplitRng seed_root = root.split(seed + 1);
    for (std::size_t oi = 0; oi < nt; ++oi) {
      const std::size_t ti = order[oi];
      const TrajectoryResult fin =
          sample_pair(backend, sched, seed_root, cfg.g, cfg.t_int_grid[ti], cfg.sigma,
                      cfg.eta_sampler, cfg.share_noise, cfg.latent_couple_dt);
      const auto agree = feature_agreement(fin.xa, fin.xb, mix, side, cfg.pool);
      const auto [dl, dh] = scale_decomposition(fin.xa, fin.xb, side, cfg.pool);
      run.a_feat(ti, seed) = agree ? *agree : kNaN;
      run.d_low(ti, seed) = dl;
      run.d_high(ti, seed) = dh;
    }
    // independent baseline: fresh sigma = 1 pair, never coupled
    const SplitRng base_root = root.split(kStreamBaseline).split(seed + 1);
    const TrajectoryResult base = sample_pair(backend, sched, base_root, 0.0, 0, 1.0,
                                               cfg.eta_sampler, false, 0.0);
    const auto agree = feature_agreement(base.xa, base.xb, mix, side, cfg.pool);
    run.baseline_a_feat[seed] = agree ? *agree : kNaN;
  });

  run.a_feat_median.resize(nt);
  run.d_low_curve.resize(nt);
  run.d_high_curve.resize(nt);
  run.undefined_count.assign(nt, 0);
  std::vector<double> xs(nt);
  for (std::size_t ti = 0; ti < nt; ++ti) {
    xs[ti] = cfg.t_int_grid[ti];
    int dropped = 0;
    run.a_feat_median[ti] = median_ignoring_nan(run.a_feat.row(ti), &dropped);
    run.undefined_count[ti] = dropped;
    run.d_low_curve[ti] = mean(run.d_low.row(ti));
    run.d_high_curve[ti] = mean(run.d_high.row(ti));
  }

  run.fit_spec = try_fit(xs, run.a_feat_median, &run.fit_note, "a_feat");
  run.fit_g = try_fit(xs, run.d_low_curve, &run.fit_note, "d_low");
  run.fit_l = try_fit(xs, run.d_high_curve, &run.fit_note, "d_high");
  run.tau_spec = run.fit_spec ? run.fit_spec->midpoint_tau : kNaN;
  run.tau_g = run.fit_g ? run.fit_g->midpoint_tau : kNaN;
  run.tau_l = run.fit_l ? run.fit_l->midpoint_tau : kNaN;
  run.delta_tau = (run.fit_g && run.fit_l) ? run.tau_l - run.tau_g : kNaN;

  // bootstrap CI on tau_spec: resample seeds, refit the median curve
  if (run.fit_spec) {
    SplitRng boot_root = root.split(0xB007);
    std::vector<double> taus;
    taus.reserve(static_cast<std::size_t>(cfg.bootstrap_b));
    std::vector<double> med(nt), row(ns);
    for (int b = 0; b < cfg.bootstrap_b; ++b) {
      SplitRng rb = boot_root.split(static_cast<uint64_t>(b));
      std::vector<std::size_t> pick(ns);
      for (auto& p : pick) p = rb.below(ns);
      for (std::size_t ti = 0; ti < nt; ++ti) {
        for (std::size_t i = 0; i < ns; ++i) row[i] = run.a_feat(ti, pick[i]);
        med[ti] = median_ignoring_nan(row);
      }
      std::string ignore;
      const auto fit = try_fit(xs, med, &ignore, "boot");
      if (fit) taus.push_back(fit->midpoint_tau);
    }
    if (taus.size() >= 50) {
      const double qlo = 0.5 * (1.0 - cfg.ci_level);
      run.ci_lo = percentile(taus, qlo);
      run.ci_hi = percentile(taus, 1.0 - qlo);
    } else {
      run.ci_lo = run.ci_hi = kNaN;
      if (!run.fit_note.empty()) run.fit_note += "; ";
      run.fit_note += "bootstrap: too few successful refits";
    }
  } else {
    run.ci_lo = run.ci_hi = kNaN;
  }
  return run;
}

CsvTable protocol1_csv(const Protocol1Run& run) {
  CsvTable t({"g", "t_int", "seed", "a_feat", "d_low", "d_high"});
  for (std::size_t ti = 0; ti < run.cfg.t_int_grid.size(); ++ti)
    for (int seed = 0; seed < run.cfg.seeds; ++seed)
      t.add_row({run.cfg.g, static_cast<long long>(run.cfg.t_int_grid[ti]),
                 static_cast<long long>(seed),
                 run.a_feat(ti, static_cast<std::size_t>(seed)),
                 run.d_low(ti, static_cast<std::size_t>(seed)),
                 run.d_high(ti, static_cast<std::size_t>(seed))});
  return t;
}

CsvTable protocol1_fits_csv(const Protocol1Run& run) {
  CsvTable t({"g", "tau_spec", "ci_lo", "ci_hi", "tau_g", "tau_l", "delta_tau"});
  t.add_row({run.cfg.g, run.tau_spec, run.ci_lo, run.ci_hi, run.tau_g, run.tau_l,
             run.delta_tau});
  return t;
}

CaptureSet run_capture_trajectories(const PairBackend& backend,
                                    const NoiseSchedule& sched, double g, double sigma,
                                    int seeds, uint64_t rng_seed, double eta_sampler,
                                    double latent_couple_dt) {
  if (seeds < 2) throw std::invalid_argument("run_capture_trajectories: need >= 2 seeds");
  const int d = backend.dim();
  const int layers = backend.capture_layer_count();

  CaptureSet set;
  set.layers = layers;
  set.steps = sched.steps;
  set.seeds = seeds;

  // probe the capture dimension with a dry call at the terminal step
  {
    std::vector<std::pair<Vec, Vec>> probe;
    const Vec z0(static_cast<std::size_t>(d), 0.0);
    backend.eps_pair(z0, z0, sched.steps, g, &probe);
    if (static_cast<int>(probe.size()) != layers)
      throw std::runtime_error("run_capture_trajectories: capture layer mismatch");
    set.dim = static_cast<int>(probe.front().first.size());
  }

  set.v.assign(static_cast<std::size_t>(layers),
               std::vector<Matrix>(static_cast<std::size_t>(sched.steps),
                                   Matrix(static_cast<std::size_t>(seeds),
                                          static_cast<std::size_t>(set.dim))));

  const SplitRng root(rng_seed);
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  parallel_for(static_cast<std::size_t>(seeds), [&](std::size_t seed) {
    const SplitRng seed_root = root.split(seed + 1);
    InitSpec init;
    init.sigma = sigma;
    init.d_z = d;
    init.rng_seed = seed_root.split(kStreamInit).key();
    ReplicaPair pair = init_replicas(init);
    const SplitRng noise_root = seed_root.split(kStreamStep);

    std::vector<std::pair<Vec, Vec>> captures;
    for (int n = 0; n < sched.steps; ++n) {
      const int s = sched.steps - n;
      const auto [ea, eb] = backend.eps_pair(pair.zA, pair.zB, s, g, &captures);
      for (int l = 0; l < layers; ++l) {
        const auto& [ca, cb] = captures[static_cast<std::size_t>(l)];
        Matrix& slot = set.v[static_cast<std::size_t>(l)][static_cast<std::size_t>(n)];
        for (std::size_t c = 0; c < ca.size(); ++c)
          slot(seed, c) = (ca[c] - cb[c]) * inv_sqrt2;
      }
      SplitRng step_rng = noise_root.split(static_cast<uint64_t>(n));
      const Vec na = step_rng.split(0).gaussian_vec(static_cast<std::size_t>(d));
      const Vec nb = step_rng.split(1).gaussian_vec(static_cast<std::size_t>(d));
      pair.zA = ddim_step(pair.zA, s, sched, ea, eta_sampler, na);
      pair.zB = ddim_step(pair.zB, s, sched, eb, eta_sampler, nb);
      apply_latent_coupling(pair, g, latent_couple_dt);
    }
  });
  return set;
}

Protocol2Run postprocess_protocol2(const CaptureSet& captures,
                                   const Protocol2Config& cfg) {
  if (cfg.tau_spec < 0 || cfg.tau_spec >= captures.steps)
    throw std::invalid_argument("postprocess_protocol2: tau_spec outside the horizon");
  for (int k : cfg.lead_band)
    if (k < 0 || k >= cfg.n_modes)
      throw std::invalid_argument("postprocess_protocol2: lead band outside mode set");
  for (int k : cfg.trail_band) {
    if (k < 0 || k >= cfg.n_modes)
      throw std::invalid_argument("postprocess_protocol2: trail band outside mode set");
    for (int l : cfg.lead_band)
      if (l == k)
        throw std::invalid_argument("postprocess_protocol2: bands must be disjoint");
  }

  Protocol2Run run;
  run.cfg = cfg;
  run.energy.resize(static_cast<std::size_t>(captures.layers));
  run.usable_rank.assign(static_cast<std::size_t>(captures.layers), 0);

  for (int layer = 0; layer < captures.layers; ++layer) {
    const auto ll = static_cast<std::size_t>(layer);
    LayerGapSummary sum;
    sum.layer = layer;
    ModeBasis basis;
    try {
      basis = build_mode_basis(captures.v[ll].front(), cfg.n_modes);
    } catch (const std::exception& e) {
      sum.usable = false;
      sum.note = e.what();  // layer flagged, sweep continues
      run.summary.push_back(std::move(sum));
      continue;
    }
    run.usable_rank[ll] = basis.usable_rank;

    auto& curves = run.energy[ll];
    curves.assign(static_cast<std::size_t>(captures.steps),
                  std::vector<double>(static_cast<std::size_t>(cfg.n_modes), 0.0));
    for (int n = 0; n < captures.steps; ++n)
      for (int k = 0; k < cfg.n_modes; ++k)
        curves[static_cast<std::size_t>(n)][static_cast<std::size_t>(k)] =
            mode_energy(captures.v[ll][static_cast<std::size_t>(n)], basis, k);

    // band means at the speciation step
    const auto& at_tau = curves[static_cast<std::size_t>(cfg.tau_spec)];
    double lead = 0.0, trail = 0.0;
    for (int k : cfg.lead_band) lead += at_tau[static_cast<std::size_t>(k)];
    for (int k : cfg.trail_band) trail += at_tau[static_cast<std::size_t>(k)];
    lead /= static_cast<double>(cfg.lead_band.size());
    trail /= static_cast<double>(cfg.trail_band.size());

    // per-seed ratio spread at the speciation step
    const Matrix& vtau = captures.v[ll][static_cast<std::size_t>(cfg.tau_spec)];
    Vec ratios;
    for (int m = 0; m < captures.seeds; ++m) {
      double lead_m = 0.0, trail_m = 0.0;
      for (int k : cfg.lead_band) {
        double proj = 0.0;
        for (std::size_t c = 0; c < vtau.cols(); ++c)
          proj += vtau(static_cast<std::size_t>(m), c) * basis.r(static_cast<std::size_t>(k), c);
        lead_m += captures.seeds * proj * proj / basis.norm0[static_cast<std::size_t>(k)];
      }
      for (int k : cfg.trail_band) {
        double proj = 0.0;
        for (std::size_t c = 0; c < vtau.cols(); ++c)
          proj += vtau(static_cast<std::size_t>(m), c) * basis.r(static_cast<std::size_t>(k), c);
        trail_m += captures.seeds * proj * proj / basis.norm0[static_cast<std::size_t>(k)];
      }
      lead_m /= static_cast<double>(cfg.lead_band.size());
      trail_m /= static_cast<double>(cfg.trail_band.size());
      if (lead_m > 0.0) ratios.push_back(trail_m / lead_m);
    }

    sum.usable = true;
    sum.lead_mean = lead;
    sum.trail_mean = trail;
    sum.gint = (lead > 0.0) ? trail / lead : kNaN;
    sum.spread = ratios.size() >= 2 ? sample_std(ratios) : 0.0;
    run.summary.push_back(std::move(sum));
  }
  return run;
}

Protocol2Run run_protocol2(const PairBackend& backend, const NoiseSchedule& sched,
                           const Protocol2Config& cfg) {
  const CaptureSet captures = run_capture_trajectories(
      backend, sched, cfg.g, cfg.sigma, cfg.seeds, cfg.rng_seed, cfg.eta_sampler,
      cfg.latent_couple_dt);
  return postprocess_protocol2(captures, cfg);
}

CsvTable protocol2_csv(const Protocol2Run& run) {
  CsvTable t({"g", "layer", "step", "mode", "energy"});
  for (std::size_t l = 0; l < run.energy.size(); ++l)
    for (std::size_t n = 0; n < run.energy[l].size(); ++n)
      for (std::size_t k = 0; k < run.energy[l][n].size(); ++k)
        t.add_row({run.cfg.g, static_cast<long long>(l), static_cast<long long>(n),
                   static_cast<long long>(k), run.energy[l][n][k]});
  return t;
}

CsvTable protocol2_summary_csv(const Protocol2Run& run) {
  CsvTable t({"g", "layer", "lead_mean", "trail_mean", "gint", "spread"});
  for (const auto& s : run.summary)
    t.add_row({run.cfg.g, static_cast<long long>(s.layer), s.lead_mean, s.trail_mean,
               s.gint, s.spread});
  return t;
}

}  // namespace syncgap
