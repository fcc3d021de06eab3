#ifndef SYNCGAP_PROTOCOLS_HPP
#define SYNCGAP_PROTOCOLS_HPP

#include <memory>
#include <optional>
#include <string>

#include "syncgap/diffusion.hpp"
#include "syncgap/dit.hpp"
#include "syncgap/io.hpp"
#include "syncgap/numerics.hpp"

namespace syncgap {

// Score backend for a coupled replica pair. Implementations must be pure and
// reentrant: eps_pair is called concurrently across seeds.
struct PairBackend {
  virtual ~PairBackend() = default;
  virtual int dim() const = 0;
  virtual int capture_layer_count() const = 0;
  // eps-hat predictions at forward step s for the pair coupled with strength
  // g; optionally fills per-layer flattened hidden states for both replicas.
  virtual std::pair<Vec, Vec> eps_pair(
      const Vec& zA, const Vec& zB, int s, double g,
      std::vector<std::pair<Vec, Vec>>* captures) const = 0;
};

// Analytic mixture backend. Coupling mirrors the value-mixing structure of
// gated attention at the score level: each replica's predicted clean content
// x0_hat is pulled toward the other replica's by couple_rate * g/(1+g)
// before recomposing eps-hat. The pair sum of x0_hat is exactly
// g-independent, while the content difference picks up the per-step
// multiplier 1 - 2 * couple_rate * g/(1+g), monotone decreasing in g. The
// rate mirrors the mild per-step influence of the gated residual branches;
// rate 1 reproduces the full normalized mixture (x0 + g x0_other)/(1+g).
class AnalyticPairBackend final : public PairBackend {
 public:
  AnalyticPairBackend(const GaussianMixture& mix, const NoiseSchedule& sched,
                      double couple_rate = 0.2);
  int dim() const override { return static_cast<int>(mix0_.dim()); }
  int capture_layer_count() const override { return 1; }
  std::pair<Vec, Vec> eps_pair(const Vec& zA, const Vec& zB, int s, double g,
                               std::vector<std::pair<Vec, Vec>>* captures) const override;

 private:
  GaussianMixture mix0_;
  NoiseSchedule sched_;
  double couple_rate_;
  std::vector<GaussianMixture> per_step_;  // diffused mixture per forward step
};

// Toy-DiT backend; captures are the post-block hidden states per layer.
class DitPairBackend final : public PairBackend {
 public:
  DitPairBackend(DitModel model, int cls) : model_(std::move(model)), cls_(cls) {}
  int dim() const override { return model_.config().latent_dim(); }
  int capture_layer_count() const override { return model_.config().layers; }
  std::pair<Vec, Vec> eps_pair(const Vec& zA, const Vec& zB, int s, double g,
                               std::vector<std::pair<Vec, Vec>>* captures) const override;
  const DitModel& model() const { return model_; }

 private:
  DitModel model_;
  int cls_;
};

// Smooth low-frequency branch pattern on a side x side image with the given
// separation ||m|| and isotropic within-branch variance: the default mixture
// of the protocol experiments.
GaussianMixture branch_mixture(int side, double separation, double variance);

// Toy feature map: projection of the image onto the normalized branch
// direction, concatenated with mean-centered pooled pixels. Cosine of the two
// feature vectors; nullopt when a feature vector has zero norm.
std::optional<double> feature_agreement(const Vec& xa, const Vec& xb,
                                        const GaussianMixture& mix, int side, int pool);

// Coarse/fine output discrepancy: d_low = ||P xA - P xB||^2 over the pooled
// grid, d_high the same norm on the bilinear-upsampling residuals.
std::pair<double, double> scale_decomposition(const Vec& xa, const Vec& xb, int side,
                                              int pool);

// Fixed empirical mode basis from the step-0 difference stack via the dual
// Gram matrix G = V0 V0^T / M and the Nystrom map r_k ~ V0^T w_k.
struct ModeBasis {
  Matrix r;          // n_modes x dim, unit rows
  Vec lambda0;       // eigenvalues of the empirical covariance, descending
  Vec norm0;         // ||V0 r_k||^2 as computed, used for exact normalization
  int seed_count = 0;
  int dim = 0;
  int usable_rank = 0;
};
ModeBasis build_mode_basis(const Matrix& v0, int n_modes);

// lambda_k(s) = ||V_s r_k||^2 / ||V_0 r_k||^2.
double mode_energy(const Matrix& vs, const ModeBasis& basis, int k);

// ---------------------------------------------------------------- Protocol I

struct Protocol1Config {
  double g = 0.5;
  std::vector<int> t_int_grid;  // reverse-step counts from the start at t = T
  int seeds = 32;
  double sigma = 0.5;
  double eta_sampler = 1.0;
  int pool = 2;
  bool share_noise = false;  // share reverse noise until intervention (g = 0 control)
  // operator-split coupling drift on the latents: one Euler substep of the
  // reverse-SDE term g (z_self - z_other) per sampler step, with this step
  // size; 0 disables (attention-style backends carry their own coupling)
  double latent_couple_dt = 0.0;
  int bootstrap_b = 200;
  double ci_level = 0.95;
  uint64_t rng_seed = 1;
};

struct Protocol1Run {
  Protocol1Config cfg;
  Matrix a_feat, d_low, d_high;  // rows: t_int grid, cols: seeds (a_feat may hold NaN)
  std::vector<double> a_feat_median;        // median over seeds, per the protocol
  std::vector<double> d_low_curve, d_high_curve;  // mean over seeds
  std::vector<int> undefined_count;  // flagged agreements per t_int
  std::optional<LogisticFit> fit_spec, fit_g, fit_l;
  std::string fit_note;  // degenerate-fit diagnostics, empty when clean
  double tau_spec = 0.0, tau_g = 0.0, tau_l = 0.0, delta_tau = 0.0;
  double ci_lo = 0.0, ci_hi = 0.0;
  std::vector<double> baseline_a_feat;  // independent sigma=1 pairs, per seed
};

Protocol1Run run_protocol1(const PairBackend& backend, const NoiseSchedule& sched,
                           const GaussianMixture& mix, const Protocol1Config& cfg);

CsvTable protocol1_csv(const Protocol1Run& run);
CsvTable protocol1_fits_csv(const Protocol1Run& run);

// --------------------------------------------------------------- Protocol II

struct Protocol2Config {
  double g = 0.0;
  int tau_spec = 50;  // evaluation step (reverse-step units)
  int seeds = 32;
  double sigma = 0.5;
  int n_modes = 16;
  std::vector<int> lead_band = {0, 1, 2, 3};
  std::vector<int> trail_band = {12, 13, 14, 15};
  double eta_sampler = 0.0;      // deterministic sampler
  double latent_couple_dt = 0.0; // as in Protocol1Config
  uint64_t rng_seed = 1;
};

// Per-layer, per-step difference stacks: v[layer][step] is seeds x dim with
// rows vec(H_A - H_B)/sqrt(2), captured during the forward at that step.
struct CaptureSet {
  int layers = 0, steps = 0, seeds = 0, dim = 0;
  std::vector<std::vector<Matrix>> v;
};

CaptureSet run_capture_trajectories(const PairBackend& backend,
                                    const NoiseSchedule& sched, double g, double sigma,
                                    int seeds, uint64_t rng_seed, double eta_sampler,
                                    double latent_couple_dt = 0.0);

struct LayerGapSummary {
  int layer = 0;
  bool usable = false;
  std::string note;
  double lead_mean = 0.0, trail_mean = 0.0, gint = 0.0, spread = 0.0;
};

struct Protocol2Run {
  Protocol2Config cfg;
  // energy[layer][step][mode]; unusable layers hold empty curves
  std::vector<std::vector<std::vector<double>>> energy;
  std::vector<int> usable_rank;
  std::vector<LayerGapSummary> summary;
};

Protocol2Run postprocess_protocol2(const CaptureSet& captures,
                                   const Protocol2Config& cfg);
Protocol2Run run_protocol2(const PairBackend& backend, const NoiseSchedule& sched,
                           const Protocol2Config& cfg);

CsvTable protocol2_csv(const Protocol2Run& run);
CsvTable protocol2_summary_csv(const Protocol2Run& run);

}  // namespace syncgap

#endif  // SYNCGAP_PROTOCOLS_HPP
