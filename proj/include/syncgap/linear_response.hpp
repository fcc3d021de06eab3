#ifndef SYNCGAP_LINEAR_RESPONSE_HPP
#define SYNCGAP_LINEAR_RESPONSE_HPP

#include <cstdint>

#include <json.hpp>

#include "syncgap/dit.hpp"
#include "syncgap/numerics.hpp"

namespace syncgap {

// Symmetry-breaking perturbation of a symmetric token state: the replica pair
// is (H0 + scale*h/sqrt2, H0 - scale*h/sqrt2).
struct Perturbation {
  Matrix h;           // N x d_model direction
  double scale = 1.0; // must be > 0
};

// First-order split of the measured attention difference Attn_A - Attn_B into
// the spatial-routing term 2 A0 dh and the pattern-modulation term
// 2 (dA+ + g dA-) V0, both taken from the replica-A increments, plus the
// quadratic remainder. An antisymmetrized (exactly odd) pair of term vectors
// is kept alongside for precision prefactor fits.
struct ResponseDecomposition {
  Matrix measured;      // Attn_A - Attn_B at the perturbed pair
  Matrix routing_term;  // 2 A0 dh
  Matrix pattern_term;  // 2 (dA+ + g dA-) V0
  Matrix residual;      // measured - rho*routing - xi*pattern (exact by construction)
  Matrix routing_odd;   // same terms built from (A - B)/2 increments
  Matrix pattern_odd;
  double g = 0.0, rho = 0.0, xi = 0.0;
};

ResponseDecomposition measure_attention_difference(const DitModel& model, int layer,
                                                   const Matrix& h0,
                                                   const Perturbation& pert, int s,
                                                   int cls, double g);

// Least-squares coefficients of `measured` against the odd routing/pattern
// bases; recovers (rho(g), xi(g)) up to O(scale^2).
struct PrefactorFit {
  double rho_hat = 0.0, xi_hat = 0.0;
};
PrefactorFit fit_prefactors(const ResponseDecomposition& d);

// Dense per-layer difference-mode propagator around a symmetric state,
// assembled columnwise by central finite differences through the exact
// forward paths: K_g = I + J_MLP + rho(g) R + xi(g) P.
struct PropagatorSpec {
  Matrix k;         // component sum
  Matrix identity;
  Matrix j_mlp;     // tokenwise MLP-branch Jacobian (beta gate absorbed)
  Matrix rho_r;     // rho(g) * R
  Matrix xi_p;      // xi(g) * P(g)
  Matrix r;         // ungated routing operator
  Matrix p;         // ungated pattern operator at this g
  double g = 0.0, rho = 0.0, xi = 0.0;
  double cross_term_norm = 0.0;  // ||J_MLP (rho R + xi P)||_F, the dropped term
};

PropagatorSpec build_propagator(const DitModel& model, int layer, const Matrix& h0,
                                int s, int cls, double g, double fd_eps);

// Repartitioned propagator K~ = K - gamma * Lambda_eff.
Matrix repartition_propagator(const Matrix& k, const GaussianMixture& mix, double gamma);

// Exact first-order softmax response of one attention row:
// dA_j = A_j (dS_j - sum_k A_k dS_k). Row sums vanish identically.
Vec softmax_jacobian_apply(const Vec& a0_row, const Vec& ds_row);

// Exact row-stochastic identities: A0 P0 = P0, dA 1 = 0, dA V0 = dA Pperp V0.
struct ProjectorReport {
  double max_abs_delta_row_sum = 0.0;
  double max_a0p0_dev = 0.0;
  double max_pattern_subspace_dev = 0.0;
  int trials = 0;
  int worst_row = -1;
  bool ok = false;
};
ProjectorReport check_projector_identities(const Matrix& a0, int trials,
                                           uint64_t rng_seed);

// Effective attention width per row: N_eff = 1 / sum_j A_ij^2, in [1, N].
Vec effective_attention_width(const Matrix& a0);

// Quantitative routing-dominance inequality with measured constants.
struct RoutingBound {
  double lhs = 0.0;        // ||dA V0|| / ||A0 dV||
  double rhs = 0.0;        // analytic bound
  bool holds = false;
  bool in_regime = false;  // 1 - lambda_perp * eps_dv > 0
  double lambda_perp = 0.0;
  double eps_v0 = 0.0, eps_dv = 0.0;
  double neff_min = 0.0;
  double ds_max = 0.0;
};
RoutingBound routing_dominance_bound(const Matrix& a0, const Matrix& v0,
                                     const Matrix& ds, const Matrix& dv);

// Full verification report for one model: prefactor fits and residual slopes
// across a g grid, identity checks, bound slack statistics and propagator
// cross-term norms, per layer.
struct LinearizationReportConfig {
  std::vector<double> g_grid = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  std::vector<double> slope_scales = {1e-1, 1e-2, 1e-3, 1e-4};
  double fit_scale = 1e-5;
  double fd_eps = 1e-5;
  int identity_trials = 1000;
  int bound_trials = 200;
  int s = 50;
  int cls = 0;
  uint64_t rng_seed = 1;
};
nlohmann::json linearization_report(const DitModel& model,
                                    const LinearizationReportConfig& cfg);

}  // namespace syncgap

#endif  // SYNCGAP_LINEAR_RESPONSE_HPP
