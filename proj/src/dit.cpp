#include "syncgap/dit.hpp"

#include <cmath>
#include <stdexcept>

#include "syncgap/rng.hpp"

namespace syncgap {

using nlohmann::json;

void DitConfig::validate() const {
  if (layers < 1) throw std::invalid_argument("DitConfig: layers must be >= 1");
  if (heads < 1 || d_model % heads != 0)
    throw std::invalid_argument("DitConfig: d_model must be divisible by heads");
  if (patch < 1 || latent_h % patch != 0 || latent_w % patch != 0)
    throw std::invalid_argument("DitConfig: patch must divide latent height and width");
  if (latent_c < 1 || d_mlp < 1 || d_cond < 2 || n_classes < 1)
    throw std::invalid_argument("DitConfig: invalid dimensions");
  if (ln_eps <= 0.0) throw std::invalid_argument("DitConfig: ln_eps must be positive");
}

TokenSequence patchify(const Vec& latent, const DitConfig& cfg) {
  cfg.validate();
  if (latent.size() != static_cast<std::size_t>(cfg.latent_dim()))
    throw std::invalid_argument("patchify: latent size mismatch");
  const int gh = cfg.latent_h / cfg.patch, gw = cfg.latent_w / cfg.patch;
  TokenSequence t;
  t.n_tokens = gh * gw;
  t.channels = cfg.patch_dim();
  t.values = Matrix(static_cast<std::size_t>(t.n_tokens), static_cast<std::size_t>(t.channels));
  for (int gy = 0; gy < gh; ++gy)
    for (int gx = 0; gx < gw; ++gx) {
      const int tok = gy * gw + gx;
      int ch = 0;
      for (int c = 0; c < cfg.latent_c; ++c)
        for (int py = 0; py < cfg.patch; ++py)
          for (int px = 0; px < cfg.patch; ++px, ++ch) {
            const int y = gy * cfg.patch + py, x = gx * cfg.patch + px;
            t.values(static_cast<std::size_t>(tok), static_cast<std::size_t>(ch)) =
                latent[static_cast<std::size_t>((c * cfg.latent_h + y) * cfg.latent_w + x)];
          }
    }
  return t;
}

Vec unpatchify(const TokenSequence& tokens, const DitConfig& cfg) {
  if (tokens.n_tokens != cfg.n_tokens() || tokens.channels != cfg.patch_dim())
    throw std::invalid_argument("unpatchify: token shape mismatch");
  const int gh = cfg.latent_h / cfg.patch, gw = cfg.latent_w / cfg.patch;
  Vec latent(static_cast<std::size_t>(cfg.latent_dim()));
  for (int gy = 0; gy < gh; ++gy)
    for (int gx = 0; gx < gw; ++gx) {
      const int tok = gy * gw + gx;
      int ch = 0;
      for (int c = 0; c < cfg.latent_c; ++c)
        for (int py = 0; py < cfg.patch; ++py)
          for (int px = 0; px < cfg.patch; ++px, ++ch) {
            const int y = gy * cfg.patch + py, x = gx * cfg.patch + px;
            latent[static_cast<std::size_t>((c * cfg.latent_h + y) * cfg.latent_w + x)] =
                tokens.values(static_cast<std::size_t>(tok), static_cast<std::size_t>(ch));
          }
    }
  return latent;
}

std::pair<double, double> gating_functions(double g) {
  if (g < 0.0 || g > 1.0)
    throw std::domain_error("gating_functions: g must lie in [0,1]");
  return {(1.0 - g) / (1.0 + g), 1.0 / (1.0 + g)};
}

std::array<Matrix, 4> blockwise_softmax(const std::array<Matrix, 4>& logits) {
  std::array<Matrix, 4> out;
  for (std::size_t b = 0; b < 4; ++b) out[b] = softmax_rows(logits[b]);
  return out;
}

Matrix ridge_fit(const Matrix& features, const Matrix& targets, double lambda) {
  if (features.rows() != targets.rows())
    throw std::invalid_argument("ridge_fit: row count mismatch");
  if (lambda < 0.0) throw std::invalid_argument("ridge_fit: lambda must be >= 0");
  const Matrix ft = transpose(features);
  Matrix g = matmul(ft, features);
  for (std::size_t i = 0; i < g.rows(); ++i) g(i, i) += lambda;
  const Matrix l = cholesky(g);
  return cholesky_solve_matrix(l, matmul(ft, targets));
}

namespace {

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

Matrix random_matrix(std::size_t rows, std::size_t cols, double scale_v, SplitRng rng) {
  Matrix m(rows, cols);
  for (auto& x : m.data()) x = rng.gaussian() * scale_v;
  return m;
}

Vec flatten(const Matrix& m) { return m.data(); }

}  // namespace

DitModel::DitModel(const DitConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  SplitRng root(cfg_.rng_seed);
  const auto dm = static_cast<std::size_t>(cfg_.d_model);
  const auto pd = static_cast<std::size_t>(cfg_.patch_dim());
  const auto dc = static_cast<std::size_t>(cfg_.d_cond);
  const auto n = static_cast<std::size_t>(cfg_.n_tokens());

  w_emb_ = random_matrix(pd, dm, 1.0 / std::sqrt(static_cast<double>(pd)), root.split(1));
  pos_ = random_matrix(n, dm, 0.3, root.split(2));
  class_emb_ = random_matrix(static_cast<std::size_t>(cfg_.n_classes), dc, 1.0, root.split(3));

  const double ws = 1.0 / std::sqrt(static_cast<double>(dm));
  layers_.resize(static_cast<std::size_t>(cfg_.layers));
  for (int l = 0; l < cfg_.layers; ++l) {
    SplitRng lr = root.split(100 + static_cast<uint64_t>(l));
    Layer& ly = layers_[static_cast<std::size_t>(l)];
    ly.wq = random_matrix(dm, dm, ws, lr.split(1));
    ly.wk = random_matrix(dm, dm, ws, lr.split(2));
    ly.wv = random_matrix(dm, dm, ws, lr.split(3));
    ly.wo = random_matrix(dm, dm, ws, lr.split(4));
    ly.mlp_w1 = random_matrix(dm, static_cast<std::size_t>(cfg_.d_mlp), ws, lr.split(5));
    ly.mlp_w2 = random_matrix(static_cast<std::size_t>(cfg_.d_mlp), dm,
                              1.0 / std::sqrt(static_cast<double>(cfg_.d_mlp)), lr.split(6));
    ly.mlp_b1 = Vec(static_cast<std::size_t>(cfg_.d_mlp), 0.0);
    ly.mlp_b2 = Vec(dm, 0.0);
    const double as = 0.05 / std::sqrt(static_cast<double>(dc));
    for (int site = 0; site < 2; ++site) {
      ly.ada_scale_w[site] = random_matrix(dc, dm, as, lr.split(7 + 2 * static_cast<uint64_t>(site)));
      ly.ada_shift_w[site] = random_matrix(dc, dm, as, lr.split(8 + 2 * static_cast<uint64_t>(site)));
      ly.ada_scale_b[site] = Vec(dm, 0.0);
      ly.ada_shift_b[site] = Vec(dm, 0.0);
    }
    ly.alpha = Vec(dm, cfg_.gate_alpha);
    ly.beta = Vec(dm, cfg_.gate_beta);
  }

  w_dec_ = Matrix(dm, pd, 0.0);
  b_dec_ = Vec(pd, 0.0);
}

const Vec& DitModel::gate_alpha(int layer) const {
  return layers_[static_cast<std::size_t>(layer)].alpha;
}
const Vec& DitModel::gate_beta(int layer) const {
  return layers_[static_cast<std::size_t>(layer)].beta;
}

void DitModel::set_uniform_gates(double alpha, double beta) {
  for (auto& ly : layers_) {
    ly.alpha.assign(ly.alpha.size(), alpha);
    ly.beta.assign(ly.beta.size(), beta);
  }
}

Vec DitModel::cond_embedding(int s, int cls) const {
  if (cls < 0 || cls >= cfg_.n_classes)
    throw std::invalid_argument("DitModel: class id out of range");
  const auto dc = static_cast<std::size_t>(cfg_.d_cond);
  Vec e(dc, 0.0);
  const std::size_t half = dc / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) /
                                 static_cast<double>(half));
    e[2 * i] = std::sin(s * freq);
    e[2 * i + 1] = std::cos(s * freq);
  }
  for (std::size_t i = 0; i < dc; ++i) e[i] += class_emb_(static_cast<std::size_t>(cls), i);
  return e;
}

Matrix DitModel::layer_norm(const Matrix& h) const {
  Matrix out(h.rows(), h.cols());
  const auto d = h.cols();
  for (std::size_t i = 0; i < h.rows(); ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += h(i, j);
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = h(i, j) - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + cfg_.ln_eps);
    for (std::size_t j = 0; j < d; ++j) out(i, j) = (h(i, j) - mu) * inv;
  }
  return out;
}

Matrix DitModel::adaln(int layer, int site, const Matrix& h, int s, int cls) const {
  if (site != 1 && site != 2) throw std::invalid_argument("adaln: site must be 1 or 2");
  const Layer& ly = layers_[static_cast<std::size_t>(layer)];
  const Vec e = cond_embedding(s, cls);
  const int k = site - 1;
  Vec scale_mod = matvec(transpose(ly.ada_scale_w[k]), e);
  Vec shift_mod = matvec(transpose(ly.ada_shift_w[k]), e);
  for (std::size_t j = 0; j < scale_mod.size(); ++j) {
    scale_mod[j] += ly.ada_scale_b[k][j];
    shift_mod[j] += ly.ada_shift_b[k][j];
  }
  Matrix out = layer_norm(h);
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j)
      out(i, j) = out(i, j) * (1.0 + scale_mod[j]) + shift_mod[j];
  return out;
}

std::vector<Matrix> DitModel::value_heads(int layer, const Matrix& h, int s, int cls) const {
  const Layer& ly = layers_[static_cast<std::size_t>(layer)];
  const Matrix x = adaln(layer, 1, h, s, cls);
  const Matrix v = matmul(x, ly.wv);
  const auto dh = static_cast<std::size_t>(cfg_.d_h());
  std::vector<Matrix> out;
  out.reserve(static_cast<std::size_t>(cfg_.heads));
  for (int head = 0; head < cfg_.heads; ++head) {
    Matrix m(v.rows(), dh);
    const std::size_t off = static_cast<std::size_t>(head) * dh;
    for (std::size_t i = 0; i < v.rows(); ++i)
      for (std::size_t j = 0; j < dh; ++j) m(i, j) = v(i, off + j);
    out.push_back(std::move(m));
  }
  return out;
}

std::vector<Matrix> DitModel::logit_heads(int layer, const Matrix& hq, const Matrix& hk,
                                          int s, int cls) const {
  const Layer& ly = layers_[static_cast<std::size_t>(layer)];
  const Matrix xq = adaln(layer, 1, hq, s, cls);
  const Matrix xk = adaln(layer, 1, hk, s, cls);
  const Matrix q = matmul(xq, ly.wq);
  const Matrix k = matmul(xk, ly.wk);
  const auto dh = static_cast<std::size_t>(cfg_.d_h());
  const double inv = 1.0 / std::sqrt(static_cast<double>(cfg_.d_h()));
  std::vector<Matrix> out;
  out.reserve(static_cast<std::size_t>(cfg_.heads));
  for (int head = 0; head < cfg_.heads; ++head) {
    const std::size_t off = static_cast<std::size_t>(head) * dh;
    Matrix sblk(q.rows(), k.rows());
    for (std::size_t i = 0; i < q.rows(); ++i)
      for (std::size_t j = 0; j < k.rows(); ++j) {
        double acc = 0.0;
        for (std::size_t c = 0; c < dh; ++c) acc += q(i, off + c) * k(j, off + c);
        sblk(i, j) = acc * inv;
      }
    out.push_back(std::move(sblk));
  }
  return out;
}

Matrix DitModel::combine_heads(int layer, const std::vector<Matrix>& per_head) const {
  const Layer& ly = layers_[static_cast<std::size_t>(layer)];
  const auto dh = static_cast<std::size_t>(cfg_.d_h());
  const std::size_t n = per_head.front().rows();
  Matrix concat(n, static_cast<std::size_t>(cfg_.d_model));
  for (int head = 0; head < cfg_.heads; ++head) {
    const std::size_t off = static_cast<std::size_t>(head) * dh;
    const Matrix& m = per_head[static_cast<std::size_t>(head)];
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < dh; ++j) concat(i, off + j) = m(i, j);
  }
  return matmul(concat, ly.wo);
}

Matrix DitModel::attn_single(int layer, const Matrix& h, int s, int cls) const {
  const std::vector<Matrix> v = value_heads(layer, h, s, cls);
  const std::vector<Matrix> sl = logit_heads(layer, h, h, s, cls);
  std::vector<Matrix> outs;
  outs.reserve(sl.size());
  for (std::size_t head = 0; head < sl.size(); ++head)
    outs.push_back(matmul(softmax_rows(sl[head]), v[head]));
  return combine_heads(layer, outs);
}

GatedAttentionState DitModel::attention_state(int layer, const Matrix& ha,
                                              const Matrix& hb, int s, int cls,
                                              double g) const {
  if (g < 0.0 || g > 1.0)
    throw std::invalid_argument("attention_state: g must lie in [0,1]");
  GatedAttentionState st;
  st.g = g;
  st.v_a = value_heads(layer, ha, s, cls);
  st.v_b = value_heads(layer, hb, s, cls);
  st.s_aa = logit_heads(layer, ha, ha, s, cls);
  st.s_ab = logit_heads(layer, ha, hb, s, cls);
  st.s_ba = logit_heads(layer, hb, ha, s, cls);
  st.s_bb = logit_heads(layer, hb, hb, s, cls);
  const double mix = 1.0 / (1.0 + g);
  std::vector<Matrix> outs_a, outs_b;
  for (int head = 0; head < cfg_.heads; ++head) {
    const auto hh = static_cast<std::size_t>(head);
    st.a_aa.push_back(softmax_rows(st.s_aa[hh]));
    st.a_ab.push_back(softmax_rows(st.s_ab[hh]));
    st.a_ba.push_back(softmax_rows(st.s_ba[hh]));
    st.a_bb.push_back(softmax_rows(st.s_bb[hh]));
    Matrix oa = matmul(st.a_aa[hh], st.v_a[hh]);
    const Matrix ca = matmul(st.a_ab[hh], st.v_b[hh]);
    Matrix ob = matmul(st.a_bb[hh], st.v_b[hh]);
    const Matrix cb = matmul(st.a_ba[hh], st.v_a[hh]);
    for (std::size_t i = 0; i < oa.size(); ++i) {
      oa.data()[i] = (oa.data()[i] + g * ca.data()[i]) * mix;
      ob.data()[i] = (ob.data()[i] + g * cb.data()[i]) * mix;
    }
    outs_a.push_back(std::move(oa));
    outs_b.push_back(std::move(ob));
  }
  st.out_a = combine_heads(layer, outs_a);
  st.out_b = combine_heads(layer, outs_b);
  return st;
}

Matrix DitModel::gated_attention_concat(int layer, const Matrix& x2n, int s, int cls,
                                        double g) const {
  const std::size_t n = static_cast<std::size_t>(cfg_.n_tokens());
  if (x2n.rows() != 2 * n || x2n.cols() != static_cast<std::size_t>(cfg_.d_model))
    throw std::invalid_argument("gated_attention_concat: expected 2N x d_model tokens");
  Matrix ha(n, x2n.cols()), hb(n, x2n.cols());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < x2n.cols(); ++j) {
      ha(i, j) = x2n(i, j);
      hb(i, j) = x2n(n + i, j);
    }
  const GatedAttentionState st = attention_state(layer, ha, hb, s, cls, g);
  Matrix out(2 * n, x2n.cols());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < x2n.cols(); ++j) {
      out(i, j) = st.out_a(i, j);
      out(n + i, j) = st.out_b(i, j);
    }
  return out;
}

Matrix DitModel::mlp_branch(int layer, const Matrix& h, int s, int cls) const {
  const Layer& ly = layers_[static_cast<std::size_t>(layer)];
  const Matrix x = adaln(layer, 2, h, s, cls);
  Matrix hidden = matmul(x, ly.mlp_w1);
  for (std::size_t i = 0; i < hidden.rows(); ++i)
    for (std::size_t j = 0; j < hidden.cols(); ++j)
      hidden(i, j) = gelu(hidden(i, j) + ly.mlp_b1[j]);
  Matrix out = matmul(hidden, ly.mlp_w2);
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j)
      out(i, j) = (out(i, j) + ly.mlp_b2[j]) * ly.beta[j];
  return out;
}

Matrix DitModel::post_attention_state(int layer, const Matrix& h, int s, int cls) const {
  const Layer& ly = layers_[static_cast<std::size_t>(layer)];
  Matrix attn = attn_single(layer, h, s, cls);
  Matrix out = h;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += ly.alpha[j] * attn(i, j);
  return out;
}

Matrix DitModel::block_forward_single(int layer, const Matrix& h, int s, int cls) const {
  Matrix tilde = post_attention_state(layer, h, s, cls);
  const Matrix mlp = mlp_branch(layer, tilde, s, cls);
  for (std::size_t i = 0; i < tilde.size(); ++i) tilde.data()[i] += mlp.data()[i];
  return tilde;
}

std::pair<Matrix, Matrix> DitModel::block_forward_pair(int layer, const Matrix& ha,
                                                       const Matrix& hb, int s, int cls,
                                                       double g) const {
  const Layer& ly = layers_[static_cast<std::size_t>(layer)];
  const GatedAttentionState st = attention_state(layer, ha, hb, s, cls, g);
  Matrix ta = ha, tb = hb;
  for (std::size_t i = 0; i < ta.rows(); ++i)
    for (std::size_t j = 0; j < ta.cols(); ++j) {
      ta(i, j) += ly.alpha[j] * st.out_a(i, j);
      tb(i, j) += ly.alpha[j] * st.out_b(i, j);
    }
  const Matrix ma = mlp_branch(layer, ta, s, cls);
  const Matrix mb = mlp_branch(layer, tb, s, cls);
  for (std::size_t i = 0; i < ta.size(); ++i) {
    ta.data()[i] += ma.data()[i];
    tb.data()[i] += mb.data()[i];
  }
  return {std::move(ta), std::move(tb)};
}

Matrix DitModel::final_tokens(const Matrix& h) const { return layer_norm(h); }

Matrix DitModel::embed(const Vec& latent) const {
  const TokenSequence t = patchify(latent, cfg_);
  Matrix x = matmul(t.values, w_emb_);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) x(i, j) += pos_(i, j);
  return x;
}

Vec DitModel::predict_eps(const Vec& latent, int s, int cls,
                          std::vector<Vec>* layer_captures) const {
  Matrix h = embed(latent);
  if (layer_captures) layer_captures->clear();
  for (int l = 0; l < cfg_.layers; ++l) {
    h = block_forward_single(l, h, s, cls);
    if (layer_captures) layer_captures->push_back(flatten(h));
  }
  const Matrix f = final_tokens(h);
  Matrix dec = matmul(f, w_dec_);
  for (std::size_t i = 0; i < dec.rows(); ++i)
    for (std::size_t j = 0; j < dec.cols(); ++j) dec(i, j) += b_dec_[j];
  TokenSequence t;
  t.n_tokens = cfg_.n_tokens();
  t.channels = cfg_.patch_dim();
  t.values = std::move(dec);
  return unpatchify(t, cfg_);
}

std::pair<Vec, Vec> DitModel::predict_eps_pair(
    const Vec& zA, const Vec& zB, int s, int cls, double g,
    std::vector<std::pair<Vec, Vec>>* layer_captures) const {
  Matrix ha = embed(zA);
  Matrix hb = embed(zB);
  if (layer_captures) layer_captures->clear();
  for (int l = 0; l < cfg_.layers; ++l) {
    auto [na, nb] = block_forward_pair(l, ha, hb, s, cls, g);
    ha = std::move(na);
    hb = std::move(nb);
    if (layer_captures) layer_captures->emplace_back(flatten(ha), flatten(hb));
  }
  auto decode = [&](const Matrix& h) {
    const Matrix f = final_tokens(h);
    Matrix dec = matmul(f, w_dec_);
    for (std::size_t i = 0; i < dec.rows(); ++i)
      for (std::size_t j = 0; j < dec.cols(); ++j) dec(i, j) += b_dec_[j];
    TokenSequence t;
    t.n_tokens = cfg_.n_tokens();
    t.channels = cfg_.patch_dim();
    t.values = std::move(dec);
    return unpatchify(t, cfg_);
  };
  return {decode(ha), decode(hb)};
}

CalibrationReport DitModel::calibrate_decoder(const NoiseSchedule& sched,
                                              const GaussianMixture& mix, int n_samples,
                                              double ridge_lambda, uint64_t rng_seed) {
  if (n_samples < 10 * cfg_.d_model)
    throw std::invalid_argument("calibrate_decoder: need at least 10 * d_model samples");
  if (mix.dim() != static_cast<std::size_t>(cfg_.latent_dim()))
    throw std::invalid_argument("calibrate_decoder: mixture dimension mismatch");

  const int n_holdout = n_samples / 4;
  const int n_train = n_samples - n_holdout;
  const auto n_tok = static_cast<std::size_t>(cfg_.n_tokens());
  const auto dm = static_cast<std::size_t>(cfg_.d_model);
  const auto pd = static_cast<std::size_t>(cfg_.patch_dim());

  Matrix f_train(static_cast<std::size_t>(n_train) * n_tok, dm + 1);
  Matrix y_train(static_cast<std::size_t>(n_train) * n_tok, pd);
  Matrix f_hold(static_cast<std::size_t>(n_holdout) * n_tok, dm + 1);
  Matrix y_hold(static_cast<std::size_t>(n_holdout) * n_tok, pd);

  SplitRng root(rng_seed);
  std::vector<std::unique_ptr<GaussianMixture>> diffused(
      static_cast<std::size_t>(sched.steps) + 1);
  for (int i = 0; i < n_samples; ++i) {
    SplitRng rng = root.split(static_cast<uint64_t>(i));
    const Vec z0 = mix.sample(rng);
    const int s = 1 + static_cast<int>(rng.below(static_cast<uint64_t>(sched.steps)));
    const auto si = static_cast<std::size_t>(s);
    const Vec eps = rng.gaussian_vec(z0.size());
    Vec zs(z0.size());
    for (std::size_t k = 0; k < z0.size(); ++k)
      zs[k] = sched.alpha[si] * z0[k] + sched.sigma(s) * eps[k];

    if (!diffused[si])
      diffused[si] = std::make_unique<GaussianMixture>(
          mix.diffused(sched.alpha[si], sched.sigma2[si]));
    // analytic posterior-mean noise target: -sigma_s * score_s(z_s)
    const Vec target = vscale(mixture_score(*diffused[si], zs), -sched.sigma(s));

    Matrix h = embed(zs);
    for (int l = 0; l < cfg_.layers; ++l) h = block_forward_single(l, h, s, 0);
    const Matrix feats = final_tokens(h);
    const TokenSequence ttok = patchify(target, cfg_);

    const bool hold = i >= n_train;
    Matrix& fm = hold ? f_hold : f_train;
    Matrix& ym = hold ? y_hold : y_train;
    const std::size_t base = (hold ? static_cast<std::size_t>(i - n_train)
                                   : static_cast<std::size_t>(i)) * n_tok;
    for (std::size_t tok = 0; tok < n_tok; ++tok) {
      for (std::size_t j = 0; j < dm; ++j) fm(base + tok, j) = feats(tok, j);
      fm(base + tok, dm) = 1.0;
      for (std::size_t j = 0; j < pd; ++j) ym(base + tok, j) = ttok.values(tok, j);
    }
  }

  Matrix g = matmul(transpose(f_train), f_train);
  for (std::size_t i = 0; i < g.rows(); ++i) g(i, i) += ridge_lambda;
  const auto ge = sym_eig(g);
  const double cond = ge.eigenvalues.front() / std::max(ge.eigenvalues.back(), 1e-300);
  if (!(cond < 1e12))
    throw std::runtime_error("calibrate_decoder: ill-conditioned design, condition " +
                             std::to_string(cond));
  const Matrix w = ridge_fit(f_train, y_train, ridge_lambda);

  for (std::size_t i = 0; i < dm; ++i)
    for (std::size_t j = 0; j < pd; ++j) w_dec_(i, j) = w(i, j);
  for (std::size_t j = 0; j < pd; ++j) b_dec_[j] = w(dm, j);

  auto r2 = [&](const Matrix& f, const Matrix& y) {
    const Matrix pred = matmul(f, w);
    double sse = 0.0, sst = 0.0, mu = 0.0;
    for (double v : y.data()) mu += v;
    mu /= static_cast<double>(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
      sse += (y.data()[i] - pred.data()[i]) * (y.data()[i] - pred.data()[i]);
      sst += (y.data()[i] - mu) * (y.data()[i] - mu);
    }
    return (sst > 0.0) ? 1.0 - sse / sst : 0.0;
  };

  CalibrationReport rep;
  rep.r2_train = r2(f_train, y_train);
  rep.r2_holdout = r2(f_hold, y_hold);
  rep.condition = cond;
  rep.n_train = n_train;
  rep.n_holdout = n_holdout;
  return rep;
}

namespace {

json matrix_to_json(const Matrix& m) {
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.data()}};
}

Matrix matrix_from_json(const json& j) {
  Matrix m(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>());
  const auto data = j.at("data").get<std::vector<double>>();
  if (data.size() != m.size()) throw std::invalid_argument("weight file: matrix size mismatch");
  m.data() = data;
  return m;
}

}  // namespace

json DitModel::to_json() const {
  json j;
  j["config"] = {{"layers", cfg_.layers},       {"heads", cfg_.heads},
                 {"d_model", cfg_.d_model},     {"patch", cfg_.patch},
                 {"latent_c", cfg_.latent_c},   {"latent_h", cfg_.latent_h},
                 {"latent_w", cfg_.latent_w},   {"d_mlp", cfg_.d_mlp},
                 {"d_cond", cfg_.d_cond},       {"n_classes", cfg_.n_classes},
                 {"gate_alpha", cfg_.gate_alpha}, {"gate_beta", cfg_.gate_beta},
                 {"ln_eps", cfg_.ln_eps},       {"rng_seed", cfg_.rng_seed}};
  j["embed"] = {{"W", matrix_to_json(w_emb_)}, {"pos", matrix_to_json(pos_)},
                {"class_emb", matrix_to_json(class_emb_)}};
  j["layers"] = json::array();
  for (const auto& ly : layers_) {
    json lj;
    lj["Wq"] = matrix_to_json(ly.wq);
    lj["Wk"] = matrix_to_json(ly.wk);
    lj["Wv"] = matrix_to_json(ly.wv);
    lj["Wo"] = matrix_to_json(ly.wo);
    lj["mlp"] = {{"W1", matrix_to_json(ly.mlp_w1)},
                 {"b1", ly.mlp_b1},
                 {"W2", matrix_to_json(ly.mlp_w2)},
                 {"b2", ly.mlp_b2}};
    lj["adaln"] = {{"scale1_W", matrix_to_json(ly.ada_scale_w[0])},
                   {"scale1_b", ly.ada_scale_b[0]},
                   {"shift1_W", matrix_to_json(ly.ada_shift_w[0])},
                   {"shift1_b", ly.ada_shift_b[0]},
                   {"scale2_W", matrix_to_json(ly.ada_scale_w[1])},
                   {"scale2_b", ly.ada_scale_b[1]},
                   {"shift2_W", matrix_to_json(ly.ada_shift_w[1])},
                   {"shift2_b", ly.ada_shift_b[1]},
                   {"alpha", ly.alpha},
                   {"beta", ly.beta}};
    j["layers"].push_back(std::move(lj));
  }
  j["decoder"] = {{"W", matrix_to_json(w_dec_)}, {"b", b_dec_}};
  return j;
}

DitModel DitModel::from_json(const json& j) {
  DitConfig cfg;
  const json& c = j.at("config");
  cfg.layers = c.at("layers").get<int>();
  cfg.heads = c.at("heads").get<int>();
  cfg.d_model = c.at("d_model").get<int>();
  cfg.patch = c.at("patch").get<int>();
  cfg.latent_c = c.at("latent_c").get<int>();
  cfg.latent_h = c.at("latent_h").get<int>();
  cfg.latent_w = c.at("latent_w").get<int>();
  cfg.d_mlp = c.at("d_mlp").get<int>();
  cfg.d_cond = c.at("d_cond").get<int>();
  cfg.n_classes = c.at("n_classes").get<int>();
  cfg.gate_alpha = c.at("gate_alpha").get<double>();
  cfg.gate_beta = c.at("gate_beta").get<double>();
  cfg.ln_eps = c.at("ln_eps").get<double>();
  cfg.rng_seed = c.at("rng_seed").get<uint64_t>();

  DitModel model(cfg);
  model.w_emb_ = matrix_from_json(j.at("embed").at("W"));
  model.pos_ = matrix_from_json(j.at("embed").at("pos"));
  model.class_emb_ = matrix_from_json(j.at("embed").at("class_emb"));
  const json& ls = j.at("layers");
  if (ls.size() != model.layers_.size())
    throw std::invalid_argument("weight file: layer count mismatch");
  for (std::size_t l = 0; l < model.layers_.size(); ++l) {
    Layer& ly = model.layers_[l];
    const json& lj = ls[l];
    ly.wq = matrix_from_json(lj.at("Wq"));
    ly.wk = matrix_from_json(lj.at("Wk"));
    ly.wv = matrix_from_json(lj.at("Wv"));
    ly.wo = matrix_from_json(lj.at("Wo"));
    ly.mlp_w1 = matrix_from_json(lj.at("mlp").at("W1"));
    ly.mlp_b1 = lj.at("mlp").at("b1").get<Vec>();
    ly.mlp_w2 = matrix_from_json(lj.at("mlp").at("W2"));
    ly.mlp_b2 = lj.at("mlp").at("b2").get<Vec>();
    ly.ada_scale_w[0] = matrix_from_json(lj.at("adaln").at("scale1_W"));
    ly.ada_scale_b[0] = lj.at("adaln").at("scale1_b").get<Vec>();
    ly.ada_shift_w[0] = matrix_from_json(lj.at("adaln").at("shift1_W"));
    ly.ada_shift_b[0] = lj.at("adaln").at("shift1_b").get<Vec>();
    ly.ada_scale_w[1] = matrix_from_json(lj.at("adaln").at("scale2_W"));
    ly.ada_scale_b[1] = lj.at("adaln").at("scale2_b").get<Vec>();
    ly.ada_shift_w[1] = matrix_from_json(lj.at("adaln").at("shift2_W"));
    ly.ada_shift_b[1] = lj.at("adaln").at("shift2_b").get<Vec>();
    ly.alpha = lj.at("adaln").at("alpha").get<Vec>();
    ly.beta = lj.at("adaln").at("beta").get<Vec>();
  }
  model.w_dec_ = matrix_from_json(j.at("decoder").at("W"));
  model.b_dec_ = j.at("decoder").at("b").get<Vec>();
  return model;
}

}  // namespace syncgap
