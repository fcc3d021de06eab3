#ifndef SYNCGAP_DIT_HPP
#define SYNCGAP_DIT_HPP

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "syncgap/diffusion.hpp"
#include "syncgap/numerics.hpp"

namespace syncgap {

struct DitConfig {
  int layers = 4;
  int heads = 2;
  int d_model = 32;
  int patch = 2;
  int latent_c = 1, latent_h = 8, latent_w = 8;
  int d_mlp = 64;
  int d_cond = 16;
  int n_classes = 2;
  double gate_alpha = 0.1;  // attention-branch gate magnitude
  double gate_beta = 0.1;   // mlp-branch gate magnitude
  double ln_eps = 1e-6;
  uint64_t rng_seed = 1;

  int d_h() const { return d_model / heads; }
  int n_tokens() const { return (latent_h / patch) * (latent_w / patch); }
  int patch_dim() const { return patch * patch * latent_c; }
  int latent_dim() const { return latent_c * latent_h * latent_w; }
  void validate() const;
};

struct TokenSequence {
  int n_tokens = 0;
  int channels = 0;
  Matrix values;  // n_tokens x channels
};

// Reshape a (C,H,W) latent into non-overlapping p x p patch tokens and back.
// unpatchify(patchify(z)) == z exactly.
TokenSequence patchify(const Vec& latent, const DitConfig& cfg);
Vec unpatchify(const TokenSequence& tokens, const DitConfig& cfg);

// Gating prefactors rho(g) = (1-g)/(1+g), xi(g) = 1/(1+g).
std::pair<double, double> gating_functions(double g);

// Independent row-wise softmax per block: no cross-block normalization.
// Block order: {AA, AB, BA, BB}.
std::array<Matrix, 4> blockwise_softmax(const std::array<Matrix, 4>& logits);

// Per-head capture of the gated attention at one layer: logits, weights,
// values and the mixed outputs for both replicas.
struct GatedAttentionState {
  double g = 0.0;
  std::vector<Matrix> s_aa, s_ab, s_ba, s_bb;  // per-head logits, N x N
  std::vector<Matrix> a_aa, a_ab, a_ba, a_bb;  // per-head weights, rows sum to 1
  std::vector<Matrix> v_a, v_b;                // per-head values, N x d_h
  Matrix out_a, out_b;                         // attention outputs, N x d_model
};

struct CalibrationReport {
  double r2_train = 0.0;
  double r2_holdout = 0.0;
  double condition = 0.0;
  int n_train = 0, n_holdout = 0;
};

// Plain ridge regression W = (F^T F + lambda I)^{-1} F^T Y.
Matrix ridge_fit(const Matrix& features, const Matrix& targets, double lambda);

// Minimal diffusion transformer over patch tokens with adaLN conditioning,
// blockwise-normalized replica attention and a ridge-calibrated linear
// decoder. All weights are frozen random draws from cfg.rng_seed; only the
// decoder is fitted (training-free).
class DitModel {
 public:
  explicit DitModel(const DitConfig& cfg);

  const DitConfig& config() const { return cfg_; }

  // Noise prediction for a single trajectory.
  Vec predict_eps(const Vec& latent, int s, int cls,
                  std::vector<Vec>* layer_captures = nullptr) const;

  // Noise prediction for a replica pair coupled through gated attention.
  // Optional captures: per layer, flattened post-block hidden states (A, B).
  std::pair<Vec, Vec> predict_eps_pair(
      const Vec& zA, const Vec& zB, int s, int cls, double g,
      std::vector<std::pair<Vec, Vec>>* layer_captures = nullptr) const;

  // --- per-layer surfaces used by the linear-response verifier ---
  Matrix embed(const Vec& latent) const;  // patchify -> W_emb -> + pos
  Matrix adaln(int layer, int site, const Matrix& h, int s, int cls) const;
  std::vector<Matrix> value_heads(int layer, const Matrix& h, int s, int cls) const;
  std::vector<Matrix> logit_heads(int layer, const Matrix& hq, const Matrix& hk, int s,
                                  int cls) const;
  Matrix combine_heads(int layer, const std::vector<Matrix>& per_head) const;
  Matrix attn_single(int layer, const Matrix& h, int s, int cls) const;
  GatedAttentionState attention_state(int layer, const Matrix& ha, const Matrix& hb,
                                      int s, int cls, double g) const;
  // Gated attention over a concatenated 2N-token sequence (replica halves).
  Matrix gated_attention_concat(int layer, const Matrix& x2n, int s, int cls,
                                double g) const;
  Matrix mlp_branch(int layer, const Matrix& h, int s, int cls) const;  // beta gated
  Matrix block_forward_single(int layer, const Matrix& h, int s, int cls) const;
  std::pair<Matrix, Matrix> block_forward_pair(int layer, const Matrix& ha,
                                               const Matrix& hb, int s, int cls,
                                               double g) const;
  Matrix post_attention_state(int layer, const Matrix& h, int s, int cls) const;
  Matrix final_tokens(const Matrix& h) const;  // final layer norm

  const Vec& gate_alpha(int layer) const;
  const Vec& gate_beta(int layer) const;
  void set_uniform_gates(double alpha, double beta);

  // Fit the linear decoder by ridge regression from final-token features to
  // analytic noise targets of the mixture forward process.
  CalibrationReport calibrate_decoder(const NoiseSchedule& sched,
                                      const GaussianMixture& mix, int n_samples,
                                      double ridge_lambda, uint64_t rng_seed);

  nlohmann::json to_json() const;
  static DitModel from_json(const nlohmann::json& j);

 private:
  struct Layer {
    Matrix wq, wk, wv, wo;        // d_model x d_model
    Matrix mlp_w1, mlp_w2;        // d_model x d_mlp, d_mlp x d_model
    Vec mlp_b1, mlp_b2;
    Matrix ada_scale_w[2], ada_shift_w[2];  // d_cond x d_model per site
    Vec ada_scale_b[2], ada_shift_b[2];
    Vec alpha, beta;  // residual gates, d_model
  };

  Vec cond_embedding(int s, int cls) const;
  Matrix layer_norm(const Matrix& h) const;

  DitConfig cfg_;
  Matrix w_emb_;             // patch_dim x d_model
  Matrix pos_;               // N x d_model
  Matrix class_emb_;         // n_classes x d_cond
  std::vector<Layer> layers_;
  Matrix w_dec_;             // d_model x patch_dim
  Vec b_dec_;
};

}  // namespace syncgap

#endif  // SYNCGAP_DIT_HPP
