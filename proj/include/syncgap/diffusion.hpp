#ifndef SYNCGAP_DIFFUSION_HPP
#define SYNCGAP_DIFFUSION_HPP

#include <cmath>
#include <cstdint>
#include <memory>
#include <utility>

#include "syncgap/numerics.hpp"

namespace syncgap {

// Variance-preserving schedule over S forward steps, in per-step time units.
// Index s runs over forward time: s=0 is clean data (alpha=1, sigma2=0), s=S
// is the terminal noisy state. alpha[s] is the cumulative product of
// sqrt(1 - beta[j] * dt) for j <= s, and sigma2[s] = 1 - alpha[s]^2 exactly.
struct NoiseSchedule {
  int steps = 0;               // S
  double dt = 1.0;             // time per forward step
  std::vector<double> beta;    // size S+1; beta[0] = 0 by convention
  std::vector<double> alpha;   // size S+1; alpha[0] = 1
  std::vector<double> sigma2;  // size S+1; sigma2[s] = 1 - alpha[s]^2

  double sigma(int s) const { return std::sqrt(sigma2[static_cast<std::size_t>(s)]); }
};

NoiseSchedule make_vp_schedule(int steps, double beta_min, double beta_max);

struct ReplicaPair {
  Vec zA, zB;
};

// Orthogonal common/difference modes: u = (zA+zB)/sqrt2, v = (zA-zB)/sqrt2.
std::pair<Vec, Vec> uv_transform(const ReplicaPair& pair);
ReplicaPair pair_from_uv(const Vec& u, const Vec& v);

struct InitSpec {
  double sigma = 0.5;  // antisymmetric perturbation scale
  int d_z = 64;
  uint64_t rng_seed = 0;
};

// z_T^{A,B} = (z_T +- sigma * delta) / sqrt(1 + sigma^2) with shared z_T and
// antisymmetric delta; each replica marginal stays N(0, I).
ReplicaPair init_replicas(const InitSpec& spec);

// Inter-replica correlation (1 - sigma^2) / (1 + sigma^2).
double correlation(double sigma);

// Symmetric two-component Gaussian mixture (1/2) N(+m, C) + (1/2) N(-m, C).
class GaussianMixture {
 public:
  GaussianMixture(Vec m, Matrix c);
  static GaussianMixture isotropic(Vec m, double variance);

  const Vec& m() const { return m_; }
  const Matrix& c() const { return c_; }
  std::size_t dim() const { return m_.size(); }

  Vec solve_c(const Vec& rhs) const;       // C^{-1} rhs
  Matrix c_inverse() const;                // dense C^{-1}
  Vec sample(class SplitRng& rng) const;   // one draw from the mixture

  // Mixture forward-diffused to (alpha, sigma2): m_s = alpha m,
  // C_s = alpha^2 C + sigma2 I.
  GaussianMixture diffused(double alpha, double sigma2) const;

 private:
  Vec m_;
  Matrix c_;
  Matrix chol_;
};

// Analytic score  -C^{-1} h + C^{-1} m tanh(m^T C^{-1} h).
Vec mixture_score(const GaussianMixture& mix, const Vec& h);

// Effective precision  Lambda_eff = C^{-1} - C^{-1} m m^T C^{-1}; equals the
// negated score Jacobian at h = 0.
Matrix effective_precision(const GaussianMixture& mix);

// Score callback used by the reverse-SDE integrator.
struct ScoreFn {
  virtual ~ScoreFn() = default;
  virtual Vec score(const Vec& z, int fwd_step) const = 0;
};

// score(z) = -z  (unit Gaussian marginal approximation).
struct LinearScore final : ScoreFn {
  Vec score(const Vec& z, int) const override { return vscale(z, -1.0); }
};

// Analytic score of the mixture diffused to forward step s.
class MixtureScore final : public ScoreFn {
 public:
  MixtureScore(GaussianMixture mix, NoiseSchedule sched);
  Vec score(const Vec& z, int fwd_step) const override;

 private:
  GaussianMixture mix0_;
  NoiseSchedule sched_;
  mutable std::vector<std::unique_ptr<GaussianMixture>> per_step_;
};

// One Euler-Maruyama update of the coupled reverse SDE
//   dz^A = [f(z^A) + g (z^A - z^B)] dt + sqrt(beta) dW^A   (dt < 0 reverse),
// taken with a positive internal step `dt`: the reverse-time sign flip is
// folded in. Noise vectors are independent standard normals per replica.
ReplicaPair coupled_reverse_step(const ReplicaPair& pair, int fwd_step,
                                 const NoiseSchedule& sched, double g,
                                 const ScoreFn& score_fn, const Vec& noise_a,
                                 const Vec& noise_b, double dt);

// One DDIM update from forward step s to s-1 with stochasticity eta:
// eta = 0 deterministic, eta = 1 ancestral (DDPM) variance.
Vec ddim_step(const Vec& z, int s, const NoiseSchedule& sched, const Vec& eps_hat,
              double eta, const Vec& noise);

}  // namespace syncgap

#endif  // SYNCGAP_DIFFUSION_HPP
