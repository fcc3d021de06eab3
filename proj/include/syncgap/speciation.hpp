#ifndef SYNCGAP_SPECIATION_HPP
#define SYNCGAP_SPECIATION_HPP

#include <optional>

#include "syncgap/diffusion.hpp"
#include "syncgap/linear_response.hpp"
#include "syncgap/numerics.hpp"

namespace syncgap {

// Projection of the local mixture and one-block propagator onto a single
// empirical mode r_k: c = r^T C r, m = r^T m, eta = r^T K_g r, with the
// component split eta = 1 + lambda_mlp + rho(g) chi + xi(g) pi.
struct ModalProjection {
  int mode = 0;
  double c = 0.0;
  double m = 0.0;
  double eta = 0.0;
  double lambda_mlp = 0.0;
  double chi = 0.0;
  double pi = 0.0;
  double g = 0.0;
  bool has_components = false;
};

ModalProjection project_modal(const Vec& r_k, const Matrix& c_mat, const Vec& m_vec,
                              const Matrix& k_g);
ModalProjection project_modal(const Vec& r_k, const Matrix& c_mat, const Vec& m_vec,
                              const PropagatorSpec& spec);

// Unique nonnegative solution of u = kappa tanh(u): zero for kappa <= 1, the
// positive pitchfork branch for kappa > 1 (bisection to 1e-12).
double solve_self_consistency(double kappa_value);

// Value plus the positivity flag of the mean-field regime
// (1 - eta) c + gamma > 0; out-of-regime results carry value NaN.
struct RegimeValue {
  double value = 0.0;
  bool in_regime = false;
};

// kappa = gamma m^2 / (c ((1 - eta) c + gamma)).
RegimeValue kappa(const ModalProjection& proj, double gamma);

// SNR via the eta form; kappa = gamma * SNR.
RegimeValue snr(const ModalProjection& proj, double gamma);

// SNR via the component expansion m^2 mu^2 / (gamma mu - lambda - rho chi - xi pi),
// mu = 1/c; agrees with `snr` whenever eta is assembled from its components.
RegimeValue snr_expanded(const ModalProjection& proj, double gamma);

// Ordered product of per-block gains; empty input gives 1.
double cumulative_gain(const std::vector<double>& etas);

// SNR with the branch separation propagated multiplicatively: m = G * m_init.
RegimeValue propagated_snr(double gain, double m_init, double c, double eta,
                           double gamma);

// First (interpolated) step at which a kappa curve crosses 1 from below;
// nullopt when the mode never speciates within the horizon (censored).
std::optional<double> speciation_step(const std::vector<double>& kappa_curve);

// Synchronization gap  delta_s = s_lo - s_hi; censored inputs censor the gap.
std::optional<double> sync_gap(std::optional<double> s_lo, std::optional<double> s_hi);

// Synthetic routing-dominant regime: two modes with equal (c, m) and a common
// MLP gain, pattern term zero, chi_hi > chi_lo, under a linear kappa ramp in
// the reverse step. In this regime 1/SNR_lo - 1/SNR_hi and hence the gap are
// exactly proportional to rho(g).
struct GapSweepConfig {
  double c = 0.8;
  double m = 0.7;
  double lambda_mlp = -0.2;
  double chi_hi = 0.5, chi_lo = 0.1;
  double gamma = 1.0;
  int steps = 200;
  double ramp_rate = 0.02;  // kappa multiplier per reverse step
  std::vector<double> g_grid = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
};

struct GapSweepPoint {
  double g = 0.0;
  double snr_hi = 0.0, snr_lo = 0.0;
  std::optional<double> s_hi, s_lo, delta_s;
  std::vector<double> kappa_hi_curve, kappa_lo_curve;
};

std::vector<GapSweepPoint> routing_dominant_gap_sweep(const GapSweepConfig& cfg);

// Residual of the vector fixed-point equation
//   [(I - K_g) + gamma C^{-1}] v = gamma C^{-1} m tanh(m^T C^{-1} v).
double fixed_point_residual(const Vec& v, const Matrix& k_g, const GaussianMixture& mix,
                            double gamma);

// Same residual through the repartitioned route: (I - K~) v equals the
// nonlinear tanh remainder. Identical to fixed_point_residual by algebra.
double fixed_point_residual_repartitioned(const Vec& v, const Matrix& k_tilde,
                                          const GaussianMixture& mix, double gamma);

}  // namespace syncgap

#endif  // SYNCGAP_SPECIATION_HPP
