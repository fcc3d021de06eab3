#include "syncgap/speciation.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace syncgap {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void check_unit(const Vec& r) {
  const double n = norm2(r);
  if (std::fabs(n - 1.0) > 1e-12)
    throw std::invalid_argument("project_modal: r_k must be a unit vector");
}

double quad_form(const Vec& r, const Matrix& m) {
  return dot(r, matvec(m, r));
}

}  // namespace

ModalProjection project_modal(const Vec& r_k, const Matrix& c_mat, const Vec& m_vec,
                              const Matrix& k_g) {
  check_unit(r_k);
  if (c_mat.rows() != r_k.size() || k_g.rows() != r_k.size() || m_vec.size() != r_k.size())
    throw std::invalid_argument("project_modal: dimension mismatch");
  ModalProjection p;
  p.c = quad_form(r_k, c_mat);
  p.m = dot(r_k, m_vec);
  p.eta = quad_form(r_k, k_g);
  p.lambda_mlp = p.chi = p.pi = kNaN;
  p.has_components = false;
  return p;
}

ModalProjection project_modal(const Vec& r_k, const Matrix& c_mat, const Vec& m_vec,
                              const PropagatorSpec& spec) {
  ModalProjection p = project_modal(r_k, c_mat, m_vec, spec.k);
  p.lambda_mlp = quad_form(r_k, spec.j_mlp);
  p.chi = quad_form(r_k, spec.r);
  p.pi = quad_form(r_k, spec.p);
  p.g = spec.g;
  p.has_components = true;
  return p;
}

double solve_self_consistency(double kappa_value) {
  if (kappa_value < 0.0)
    throw std::domain_error("solve_self_consistency: kappa must be >= 0");
  if (kappa_value <= 1.0) return 0.0;
  const double tol = 1e-12;
  auto f = [kappa_value](double u) { return u - kappa_value * std::tanh(u); };
  // f(tol) < 0 for kappa > 1, f(kappa) > 0 since tanh(kappa) < 1
  return bisect_root(f, tol, kappa_value, tol);
}

RegimeValue kappa(const ModalProjection& proj, double gamma) {
  RegimeValue out;
  const double denom = (1.0 - proj.eta) * proj.c + gamma;
  out.in_regime = denom > 0.0 && proj.c > 0.0;
  out.value = out.in_regime ? gamma * proj.m * proj.m / (proj.c * denom) : kNaN;
  return out;
}

RegimeValue snr(const ModalProjection& proj, double gamma) {
  RegimeValue out;
  const double denom = (1.0 - proj.eta) * proj.c + gamma;
  out.in_regime = denom > 0.0 && proj.c > 0.0;
  out.value = out.in_regime ? proj.m * proj.m / (proj.c * denom) : kNaN;
  return out;
}

RegimeValue snr_expanded(const ModalProjection& proj, double gamma) {
  if (!proj.has_components)
    throw std::invalid_argument("snr_expanded: projection carries no component split");
  const auto [rho, xi] = gating_functions(proj.g);
  RegimeValue out;
  const double mu = 1.0 / proj.c;
  const double denom = gamma * mu - proj.lambda_mlp - rho * proj.chi - xi * proj.pi;
  out.in_regime = denom > 0.0 && proj.c > 0.0;
  out.value = out.in_regime ? proj.m * proj.m * mu * mu / denom : kNaN;
  return out;
}

double cumulative_gain(const std::vector<double>& etas) {
  double g = 1.0;
  for (double e : etas) g *= e;
  return g;
}

RegimeValue propagated_snr(double gain, double m_init, double c, double eta,
                           double gamma) {
  ModalProjection p;
  p.c = c;
  p.eta = eta;
  p.m = gain * m_init;
  return snr(p, gamma);
}

std::optional<double> speciation_step(const std::vector<double>& kappa_curve) {
  if (kappa_curve.empty()) return std::nullopt;
  if (kappa_curve.front() >= 1.0) return 0.0;
  for (std::size_t i = 1; i < kappa_curve.size(); ++i) {
    if (kappa_curve[i] >= 1.0) {
      const double lo = kappa_curve[i - 1], hi = kappa_curve[i];
      const double frac = (1.0 - lo) / (hi - lo);
      return static_cast<double>(i - 1) + frac;
    }
  }
  return std::nullopt;  // censored: never crosses within the horizon
}

std::optional<double> sync_gap(std::optional<double> s_lo, std::optional<double> s_hi) {
  if (!s_lo || !s_hi) return std::nullopt;
  return *s_lo - *s_hi;
}

std::vector<GapSweepPoint> routing_dominant_gap_sweep(const GapSweepConfig& cfg) {
  std::vector<GapSweepPoint> out;
  out.reserve(cfg.g_grid.size());
  for (double g : cfg.g_grid) {
    const auto [rho, xi] = gating_functions(g);
    (void)xi;
    GapSweepPoint pt;
    pt.g = g;
    auto make = [&](double chi) {
      ModalProjection p;
      p.c = cfg.c;
      p.m = cfg.m;
      p.lambda_mlp = cfg.lambda_mlp;
      p.chi = chi;
      p.pi = 0.0;
      p.g = g;
      p.eta = 1.0 + cfg.lambda_mlp + rho * chi;
      p.has_components = true;
      return p;
    };
    const RegimeValue hi = snr(make(cfg.chi_hi), cfg.gamma);
    const RegimeValue lo = snr(make(cfg.chi_lo), cfg.gamma);
    pt.snr_hi = hi.value;
    pt.snr_lo = lo.value;
    pt.kappa_hi_curve.resize(static_cast<std::size_t>(cfg.steps) + 1);
    pt.kappa_lo_curve.resize(static_cast<std::size_t>(cfg.steps) + 1);
    for (int s = 0; s <= cfg.steps; ++s) {
      const double ramp = cfg.ramp_rate * s;
      pt.kappa_hi_curve[static_cast<std::size_t>(s)] = cfg.gamma * hi.value * ramp;
      pt.kappa_lo_curve[static_cast<std::size_t>(s)] = cfg.gamma * lo.value * ramp;
    }
    pt.s_hi = speciation_step(pt.kappa_hi_curve);
    pt.s_lo = speciation_step(pt.kappa_lo_curve);
    pt.delta_s = sync_gap(pt.s_lo, pt.s_hi);
    out.push_back(std::move(pt));
  }
  return out;
}

double fixed_point_residual(const Vec& v, const Matrix& k_g, const GaussianMixture& mix,
                            double gamma) {
  if (v.size() != mix.dim() || k_g.rows() != v.size())
    throw std::invalid_argument("fixed_point_residual: dimension mismatch");
  const Vec cinv_v = mix.solve_c(v);
  const Vec cinv_m = mix.solve_c(mix.m());
  const Vec kv = matvec(k_g, v);
  const double t = std::tanh(dot(mix.m(), cinv_v));
  double acc = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double lhs = v[i] - kv[i] + gamma * cinv_v[i];
    const double rhs = gamma * cinv_m[i] * t;
    acc += (lhs - rhs) * (lhs - rhs);
  }
  return std::sqrt(acc);
}

double fixed_point_residual_repartitioned(const Vec& v, const Matrix& k_tilde,
                                          const GaussianMixture& mix, double gamma) {
  if (v.size() != mix.dim() || k_tilde.rows() != v.size())
    throw std::invalid_argument("fixed_point_residual_repartitioned: dimension mismatch");
  const Vec cinv_v = mix.solve_c(v);
  const Vec cinv_m = mix.solve_c(mix.m());
  const Vec kv = matvec(k_tilde, v);
  const double w = dot(mix.m(), cinv_v);
  const double remainder = std::tanh(w) - w;  // strictly nonlinear part
  double acc = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double lhs = v[i] - kv[i];
    const double rhs = gamma * cinv_m[i] * remainder;
    acc += (lhs - rhs) * (lhs - rhs);
  }
  return std::sqrt(acc);
}

}  // namespace syncgap
