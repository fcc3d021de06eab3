#include "syncgap/diffusion.hpp"

#include <cmath>
#include <stdexcept>

#include "syncgap/rng.hpp"

namespace syncgap {

NoiseSchedule make_vp_schedule(int steps, double beta_min, double beta_max) {
  if (steps < 2) throw std::invalid_argument("make_vp_schedule: need at least 2 steps");
  if (beta_min < 0.0 || beta_max < beta_min)
    throw std::invalid_argument("make_vp_schedule: betas must satisfy 0 <= beta_min <= beta_max");

  NoiseSchedule s;
  s.steps = steps;
  s.dt = 1.0;
  s.beta.assign(static_cast<std::size_t>(steps) + 1, 0.0);
  s.alpha.assign(static_cast<std::size_t>(steps) + 1, 1.0);
  s.sigma2.assign(static_cast<std::size_t>(steps) + 1, 0.0);
  for (int k = 1; k <= steps; ++k) {
    const double frac = (steps == 1) ? 0.0 : static_cast<double>(k - 1) / (steps - 1);
    const double b = beta_min + (beta_max - beta_min) * frac;
    if (b * s.dt >= 1.0)
      throw std::invalid_argument("make_vp_schedule: beta * dt must stay below 1");
    s.beta[static_cast<std::size_t>(k)] = b;
    s.alpha[static_cast<std::size_t>(k)] =
        s.alpha[static_cast<std::size_t>(k - 1)] * std::sqrt(1.0 - b * s.dt);
    s.sigma2[static_cast<std::size_t>(k)] =
        1.0 - s.alpha[static_cast<std::size_t>(k)] * s.alpha[static_cast<std::size_t>(k)];
  }
  return s;
}

std::pair<Vec, Vec> uv_transform(const ReplicaPair& pair) {
  const double r = 1.0 / std::sqrt(2.0);
  Vec u(pair.zA.size()), v(pair.zA.size());
  for (std::size_t i = 0; i < pair.zA.size(); ++i) {
    u[i] = (pair.zA[i] + pair.zB[i]) * r;
    v[i] = (pair.zA[i] - pair.zB[i]) * r;
  }
  return {u, v};
}

ReplicaPair pair_from_uv(const Vec& u, const Vec& v) {
  const double r = 1.0 / std::sqrt(2.0);
  ReplicaPair p;
  p.zA.resize(u.size());
  p.zB.resize(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) {
    p.zA[i] = (u[i] + v[i]) * r;
    p.zB[i] = (u[i] - v[i]) * r;
  }
  return p;
}

ReplicaPair init_replicas(const InitSpec& spec) {
  if (spec.sigma < 0.0) throw std::invalid_argument("init_replicas: sigma must be >= 0");
  if (spec.d_z <= 0) throw std::invalid_argument("init_replicas: d_z must be positive");
  SplitRng root(spec.rng_seed);
  SplitRng zt_rng = root.split(1);
  SplitRng dl_rng = root.split(2);
  const Vec z = zt_rng.gaussian_vec(static_cast<std::size_t>(spec.d_z));
  const Vec delta = dl_rng.gaussian_vec(static_cast<std::size_t>(spec.d_z));
  const double denom = std::sqrt(1.0 + spec.sigma * spec.sigma);
  ReplicaPair p;
  p.zA.resize(z.size());
  p.zB.resize(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    p.zA[i] = (z[i] + spec.sigma * delta[i]) / denom;
    p.zB[i] = (z[i] - spec.sigma * delta[i]) / denom;
  }
  return p;
}

double correlation(double sigma) {
  if (sigma < 0.0) throw std::domain_error("correlation: sigma must be >= 0");
  return (1.0 - sigma * sigma) / (1.0 + sigma * sigma);
}

GaussianMixture::GaussianMixture(Vec m, Matrix c) : m_(std::move(m)), c_(std::move(c)) {
  if (c_.rows() != m_.size() || c_.cols() != m_.size())
    throw std::invalid_argument("GaussianMixture: C must be d x d");
  chol_ = cholesky(c_);  // throws if not positive definite
}

GaussianMixture GaussianMixture::isotropic(Vec m, double variance) {
  if (variance <= 0.0)
    throw std::invalid_argument("GaussianMixture: variance must be positive");
  const std::size_t d = m.size();
  Matrix c(d, d);
  for (std::size_t i = 0; i < d; ++i) c(i, i) = variance;
  return GaussianMixture(std::move(m), std::move(c));
}

Vec GaussianMixture::solve_c(const Vec& rhs) const { return cholesky_solve(chol_, rhs); }

Matrix GaussianMixture::c_inverse() const { return cholesky_inverse(chol_); }

Vec GaussianMixture::sample(SplitRng& rng) const {
  const std::size_t d = dim();
  const double branch = (rng.uniform() < 0.5) ? 1.0 : -1.0;
  const Vec xi = rng.gaussian_vec(d);
  Vec out(d);
  for (std::size_t i = 0; i < d; ++i) {
    double acc = branch * m_[i];
    for (std::size_t k = 0; k <= i; ++k) acc += chol_(i, k) * xi[k];
    out[i] = acc;
  }
  return out;
}

GaussianMixture GaussianMixture::diffused(double alpha, double sigma2) const {
  Matrix c = scale(c_, alpha * alpha);
  for (std::size_t i = 0; i < c.rows(); ++i) c(i, i) += sigma2;
  return GaussianMixture(vscale(m_, alpha), std::move(c));
}

Vec mixture_score(const GaussianMixture& mix, const Vec& h) {
  if (h.size() != mix.dim()) throw std::invalid_argument("mixture_score: dimension mismatch");
  const Vec cinv_h = mix.solve_c(h);
  const Vec cinv_m = mix.solve_c(mix.m());
  const double t = std::tanh(dot(mix.m(), cinv_h));
  Vec out(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) out[i] = -cinv_h[i] + cinv_m[i] * t;
  return out;
}

Matrix effective_precision(const GaussianMixture& mix) {
  Matrix lam = mix.c_inverse();
  const Vec cinv_m = mix.solve_c(mix.m());
  for (std::size_t i = 0; i < lam.rows(); ++i)
    for (std::size_t j = 0; j < lam.cols(); ++j) lam(i, j) -= cinv_m[i] * cinv_m[j];
  return lam;
}

MixtureScore::MixtureScore(GaussianMixture mix, NoiseSchedule sched)
    : mix0_(std::move(mix)), sched_(std::move(sched)) {
  per_step_.resize(sched_.alpha.size());
}

Vec MixtureScore::score(const Vec& z, int fwd_step) const {
  if (fwd_step < 0 || fwd_step > sched_.steps)
    throw std::out_of_range("MixtureScore: step out of range");
  auto& slot = per_step_[static_cast<std::size_t>(fwd_step)];
  if (!slot) {
    const double a = sched_.alpha[static_cast<std::size_t>(fwd_step)];
    const double s2 = sched_.sigma2[static_cast<std::size_t>(fwd_step)];
    slot = std::make_unique<GaussianMixture>(mix0_.diffused(a, s2));
  }
  return mixture_score(*slot, z);
}

ReplicaPair coupled_reverse_step(const ReplicaPair& pair, int fwd_step,
                                 const NoiseSchedule& sched, double g,
                                 const ScoreFn& score_fn, const Vec& noise_a,
                                 const Vec& noise_b, double dt) {
  if (g < 0.0) throw std::invalid_argument("coupled_reverse_step: g must be >= 0");
  if (!(dt > 0.0)) throw std::invalid_argument("coupled_reverse_step: dt must be positive");
  if (fwd_step < 0 || fwd_step > sched.steps)
    throw std::out_of_range("coupled_reverse_step: step out of range");

  const double beta = sched.beta[static_cast<std::size_t>(fwd_step)];
  const Vec sa = score_fn.score(pair.zA, fwd_step);
  const Vec sb = score_fn.score(pair.zB, fwd_step);
  const double amp = std::sqrt(beta * dt);

  ReplicaPair out;
  out.zA.resize(pair.zA.size());
  out.zB.resize(pair.zB.size());
  for (std::size_t i = 0; i < pair.zA.size(); ++i) {
    const double da = pair.zA[i] - pair.zB[i];
    // reverse-time drift with the sign flip folded in: dt here is positive
    out.zA[i] = pair.zA[i] +
                (0.5 * beta * pair.zA[i] + beta * sa[i] - g * da) * dt + amp * noise_a[i];
    out.zB[i] = pair.zB[i] +
                (0.5 * beta * pair.zB[i] + beta * sb[i] + g * da) * dt + amp * noise_b[i];
  }
  return out;
}

Vec ddim_step(const Vec& z, int s, const NoiseSchedule& sched, const Vec& eps_hat,
              double eta, const Vec& noise) {
  if (s < 1 || s > sched.steps) throw std::out_of_range("ddim_step: step out of range");
  if (eps_hat.size() != z.size() || noise.size() != z.size())
    throw std::invalid_argument("ddim_step: dimension mismatch");

  const auto si = static_cast<std::size_t>(s);
  const double a_s = sched.alpha[si];
  const double a_p = sched.alpha[si - 1];
  const double sig_s = std::sqrt(sched.sigma2[si]);
  const double sig2_p = sched.sigma2[si - 1];

  double sigma_tilde = 0.0;
  if (sig_s > 0.0) {
    // ancestral posterior std scaled by eta; beta comes from the stored schedule
    sigma_tilde = eta * (std::sqrt(sig2_p) / sig_s) * std::sqrt(sched.beta[si] * sched.dt);
  }
  const double coef_eps = std::sqrt(std::max(0.0, sig2_p - sigma_tilde * sigma_tilde));

  Vec out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double z0_hat = (sig_s > 0.0) ? (z[i] - sig_s * eps_hat[i]) / a_s : z[i] / a_s;
    out[i] = a_p * z0_hat + coef_eps * eps_hat[i] + sigma_tilde * noise[i];
  }
  return out;
}

}  // namespace syncgap
