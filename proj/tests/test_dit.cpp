#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "syncgap/dit.hpp"
#include "syncgap/rng.hpp"

using namespace syncgap;

namespace {

Matrix random_tokens(const DitConfig& cfg, SplitRng& rng, double scale_v = 1.0) {
  Matrix h(static_cast<std::size_t>(cfg.n_tokens()), static_cast<std::size_t>(cfg.d_model));
  for (auto& x : h.data()) x = rng.gaussian() * scale_v;
  return h;
}

}  // namespace

TEST_CASE("patchify counting and round trip") {
  DitConfig tiny;
  tiny.latent_h = 2;
  tiny.latent_w = 2;
  tiny.patch = 2;
  CHECK(tiny.n_tokens() == 1);

  DitConfig cfg;  // 8x8, p=2
  CHECK(cfg.n_tokens() == 16);

  SplitRng rng(1);
  const Vec latent = rng.gaussian_vec(static_cast<std::size_t>(cfg.latent_dim()));
  const TokenSequence t = patchify(latent, cfg);
  CHECK(t.n_tokens == 16);
  CHECK(t.channels == 4);
  const Vec back = unpatchify(t, cfg);
  for (std::size_t i = 0; i < latent.size(); ++i) CHECK(back[i] == latent[i]);

  DitConfig bad;
  bad.patch = 3;  // does not divide 8
  CHECK_THROWS_AS(patchify(latent, bad), std::invalid_argument);
}

TEST_CASE("gating functions") {
  {
    const auto [rho, xi] = gating_functions(0.0);
    CHECK(rho == 1.0);
    CHECK(xi == 1.0);
  }
  {
    const auto [rho, xi] = gating_functions(1.0);
    CHECK(rho == 0.0);
    CHECK(xi == 0.5);
  }
  {
    const auto [rho, xi] = gating_functions(1.0 / 3.0);
    CHECK(rho == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(xi == doctest::Approx(0.75).epsilon(1e-12));
  }
  CHECK_THROWS_AS(gating_functions(-0.1), std::domain_error);
  CHECK_THROWS_AS(gating_functions(1.1), std::domain_error);
}

TEST_CASE("blockwise softmax normalizes each block independently") {
  const std::size_t n = 5;
  std::array<Matrix, 4> logits{Matrix(n, n), Matrix(n, n), Matrix(n, n), Matrix(n, n)};
  auto zero = blockwise_softmax(logits);
  for (const auto& blk : zero)
    for (double x : blk.data()) CHECK(x == doctest::Approx(1.0 / n).epsilon(1e-14));

  SplitRng rng(4);
  for (auto& blk : logits)
    for (auto& x : blk.data()) x = rng.gaussian() * 3.0;
  const auto w = blockwise_softmax(logits);
  for (const auto& blk : w)
    for (std::size_t i = 0; i < n; ++i) {
      double sum = 0.0;
      for (std::size_t j = 0; j < n; ++j) sum += blk(i, j);
      CHECK(std::fabs(sum - 1.0) <= 1e-12);
    }

  // adding a per-row constant to S_AB leaves A_AA untouched and A_AB invariant
  auto shifted = logits;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) shifted[1](i, j) += 7.5 * static_cast<double>(i + 1);
  const auto w2 = blockwise_softmax(shifted);
  for (std::size_t i = 0; i < w[0].size(); ++i) CHECK(w2[0].data()[i] == w[0].data()[i]);
  CHECK(max_abs(sub(w2[1], w[1])) <= 1e-12);
}

TEST_CASE("gated attention endpoints and symmetries") {
  DitConfig cfg;
  cfg.rng_seed = 11;
  DitModel model(cfg);
  SplitRng rng(2);
  const int s = 37, cls = 0;

  const Matrix ha = random_tokens(cfg, rng);
  const Matrix hb = random_tokens(cfg, rng);

  // g = 0: exact decoupling against the single-replica path
  const GatedAttentionState st0 = model.attention_state(0, ha, hb, s, cls, 0.0);
  const Matrix single_a = model.attn_single(0, ha, s, cls);
  const Matrix single_b = model.attn_single(0, hb, s, cls);
  CHECK(max_abs(sub(st0.out_a, single_a)) <= 1e-14);
  CHECK(max_abs(sub(st0.out_b, single_b)) <= 1e-14);

  // g = 1: output is the plain average of intra and inter parts
  const GatedAttentionState st1 = model.attention_state(0, ha, hb, s, cls, 1.0);
  std::vector<Matrix> mixed;
  for (int h = 0; h < cfg.heads; ++h) {
    const auto hh = static_cast<std::size_t>(h);
    Matrix m = matmul(st1.a_aa[hh], st1.v_a[hh]);
    const Matrix c = matmul(st1.a_ab[hh], st1.v_b[hh]);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = 0.5 * (m.data()[i] + c.data()[i]);
    mixed.push_back(std::move(m));
  }
  CHECK(max_abs(sub(model.combine_heads(0, mixed), st1.out_a)) <= 1e-13);

  // identical replicas: output independent of g
  const GatedAttentionState eq0 = model.attention_state(0, ha, ha, s, cls, 0.0);
  for (double g : {0.3, 0.7, 1.0}) {
    const GatedAttentionState eq = model.attention_state(0, ha, ha, s, cls, g);
    CHECK(max_abs(sub(eq.out_a, eq0.out_a)) <= 1e-12);
    CHECK(max_abs(sub(eq.out_a, eq.out_b)) <= 1e-14);
  }

  // replica swap exchanges outputs exactly
  for (double g : {0.0, 0.3, 0.7, 1.0}) {
    const GatedAttentionState fwd = model.attention_state(0, ha, hb, s, cls, g);
    const GatedAttentionState swp = model.attention_state(0, hb, ha, s, cls, g);
    CHECK(max_abs(sub(fwd.out_a, swp.out_b)) == 0.0);
    CHECK(max_abs(sub(fwd.out_b, swp.out_a)) == 0.0);
  }

  CHECK_THROWS_AS(model.attention_state(0, ha, hb, s, cls, 1.5), std::invalid_argument);

  // weight-block rows sum to 1 under blockwise normalization
  for (const auto& blocks : {st0.a_aa, st0.a_ab, st0.a_ba, st0.a_bb})
    for (const auto& blk : blocks)
      for (std::size_t i = 0; i < blk.rows(); ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < blk.cols(); ++j) sum += blk(i, j);
        CHECK(std::fabs(sum - 1.0) <= 1e-12);
      }

  // concatenated-sequence surface matches the pair surface
  const std::size_t n = static_cast<std::size_t>(cfg.n_tokens());
  Matrix x2n(2 * n, static_cast<std::size_t>(cfg.d_model));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < x2n.cols(); ++j) {
      x2n(i, j) = ha(i, j);
      x2n(n + i, j) = hb(i, j);
    }
  const Matrix cat = model.gated_attention_concat(0, x2n, s, cls, 0.7);
  const GatedAttentionState ref = model.attention_state(0, ha, hb, s, cls, 0.7);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < x2n.cols(); ++j) {
      CHECK(cat(i, j) == ref.out_a(i, j));
      CHECK(cat(n + i, j) == ref.out_b(i, j));
    }
}

TEST_CASE("dit block identity at zero gates and exchange symmetry") {
  DitConfig cfg;
  cfg.rng_seed = 5;
  DitModel model(cfg);
  model.set_uniform_gates(0.0, 0.0);
  SplitRng rng(3);
  const Matrix ha = random_tokens(cfg, rng);
  const Matrix hb = random_tokens(cfg, rng);
  const auto [oa, ob] = model.block_forward_pair(1, ha, hb, 21, 1, 0.4);
  CHECK(max_abs(sub(oa, ha)) == 0.0);  // gates zero: block is the identity
  CHECK(max_abs(sub(ob, hb)) == 0.0);

  DitModel m2(cfg);
  for (double g : {0.0, 0.3, 0.7, 1.0}) {
    for (int layer = 0; layer < cfg.layers; ++layer) {
      const auto [fa, fb] = m2.block_forward_pair(layer, ha, hb, 21, 1, g);
      const auto [sa, sb] = m2.block_forward_pair(layer, hb, ha, 21, 1, g);
      CHECK(max_abs(sub(fa, sb)) == 0.0);
      CHECK(max_abs(sub(fb, sa)) == 0.0);
    }
    // identical replicas stay identical through depth
    Matrix xa = ha, xb = ha;
    for (int layer = 0; layer < cfg.layers; ++layer) {
      auto [na, nb] = m2.block_forward_pair(layer, xa, xb, 21, 1, g);
      xa = std::move(na);
      xb = std::move(nb);
      CHECK(max_abs(sub(xa, xb)) == 0.0);
    }
  }
}

TEST_CASE("end-to-end g=0 decoupling of the pair forward") {
  DitConfig cfg;
  cfg.rng_seed = 23;
  DitModel model(cfg);
  SplitRng rng(9);
  for (int trial = 0; trial < 5; ++trial) {
    const Vec zA = rng.gaussian_vec(static_cast<std::size_t>(cfg.latent_dim()));
    const Vec zB = rng.gaussian_vec(static_cast<std::size_t>(cfg.latent_dim()));
    const auto [ea, eb] = model.predict_eps_pair(zA, zB, 50, 0, 0.0);
    const Vec sa = model.predict_eps(zA, 50, 0);
    const Vec sb = model.predict_eps(zB, 50, 0);
    for (std::size_t i = 0; i < sa.size(); ++i) {
      CHECK(std::fabs(ea[i] - sa[i]) <= 1e-12);
      CHECK(std::fabs(eb[i] - sb[i]) <= 1e-12);
    }
  }
}

TEST_CASE("blockwise normalization probe: A_AA blind to S_AB") {
  // perturbing the inter-replica state changes A_AB but never A_AA
  DitConfig cfg;
  cfg.rng_seed = 31;
  DitModel model(cfg);
  SplitRng rng(12);
  const Matrix ha = random_tokens(cfg, rng);
  const Matrix hb = random_tokens(cfg, rng);
  Matrix hb2 = hb;
  for (auto& x : hb2.data()) x += 0.37;
  const GatedAttentionState s1 = model.attention_state(2, ha, hb, 10, 0, 0.5);
  const GatedAttentionState s2 = model.attention_state(2, ha, hb2, 10, 0, 0.5);
  for (int h = 0; h < cfg.heads; ++h) {
    const auto hh = static_cast<std::size_t>(h);
    CHECK(max_abs(sub(s1.a_aa[hh], s2.a_aa[hh])) == 0.0);
    CHECK(max_abs(sub(s1.s_ab[hh], s2.s_ab[hh])) > 0.0);
  }
}

TEST_CASE("ridge fit closed-form behavior") {
  // features == targets, constant 1 column: weight = n / (n + lambda)
  const int n = 50;
  Matrix f(n, 1, 1.0), y(n, 1, 1.0);
  const double lambda = 10.0;
  const Matrix w = ridge_fit(f, y, lambda);
  CHECK(w(0, 0) == doctest::Approx(static_cast<double>(n) / (n + lambda)).epsilon(1e-12));

  // zero targets: zero weights
  Matrix y0(n, 1, 0.0);
  CHECK(std::fabs(ridge_fit(f, y0, 1.0)(0, 0)) <= 1e-14);

  // lambda -> infinity: weights -> 0
  CHECK(std::fabs(ridge_fit(f, y, 1e12)(0, 0)) <= 1e-9);
}

TEST_CASE("decoder calibration is deterministic and reported") {
  DitConfig cfg;
  cfg.rng_seed = 7;
  const NoiseSchedule sched = make_vp_schedule(20, 1e-3, 5e-2);
  SplitRng mr(55);
  Vec m(static_cast<std::size_t>(cfg.latent_dim()));
  for (auto& x : m) x = 0.1;
  const GaussianMixture mix = GaussianMixture::isotropic(m, 0.25);

  DitModel a(cfg), b(cfg);
  const CalibrationReport ra = a.calibrate_decoder(sched, mix, 400, 1.0, 99);
  const CalibrationReport rb = b.calibrate_decoder(sched, mix, 400, 1.0, 99);
  CHECK(ra.r2_train == rb.r2_train);
  CHECK(ra.r2_holdout == rb.r2_holdout);
  CHECK(ra.r2_train > 0.0);  // fits at least some target variance
  CHECK(ra.r2_train <= 1.0);
  CHECK(ra.condition > 0.0);

  const Vec z = mr.gaussian_vec(static_cast<std::size_t>(cfg.latent_dim()));
  const Vec pa = a.predict_eps(z, 10, 0);
  const Vec pb = b.predict_eps(z, 10, 0);
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i] == pb[i]);

  CHECK_THROWS_AS(a.calibrate_decoder(sched, mix, 100, 1.0, 1), std::invalid_argument);
}

TEST_CASE("weight serialization round trip") {
  DitConfig cfg;
  cfg.rng_seed = 77;
  DitModel model(cfg);
  const NoiseSchedule sched = make_vp_schedule(10, 1e-3, 5e-2);
  Vec m(static_cast<std::size_t>(cfg.latent_dim()), 0.2);
  const GaussianMixture mix = GaussianMixture::isotropic(m, 0.25);
  model.calibrate_decoder(sched, mix, 330, 2.0, 5);

  const nlohmann::json j = model.to_json();
  const DitModel back = DitModel::from_json(j);

  SplitRng rng(8);
  const Vec zA = rng.gaussian_vec(static_cast<std::size_t>(cfg.latent_dim()));
  const Vec zB = rng.gaussian_vec(static_cast<std::size_t>(cfg.latent_dim()));
  const auto [ea, eb] = model.predict_eps_pair(zA, zB, 5, 1, 0.6);
  const auto [fa, fb] = back.predict_eps_pair(zA, zB, 5, 1, 0.6);
  for (std::size_t i = 0; i < ea.size(); ++i) {
    CHECK(ea[i] == fa[i]);
    CHECK(eb[i] == fb[i]);
  }
}
