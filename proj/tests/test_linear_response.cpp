#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "syncgap/linear_response.hpp"
#include "syncgap/rng.hpp"

using namespace syncgap;

namespace {

Matrix random_tokens(const DitConfig& cfg, SplitRng& rng, double scale_v = 1.0) {
  Matrix h(static_cast<std::size_t>(cfg.n_tokens()), static_cast<std::size_t>(cfg.d_model));
  for (auto& x : h.data()) x = rng.gaussian() * scale_v;
  return h;
}

Perturbation random_direction(const DitConfig& cfg, SplitRng& rng, double sc) {
  Perturbation p;
  p.h = random_tokens(cfg, rng);
  const double n = frobenius_norm(p.h);
  for (auto& x : p.h.data()) x /= n;
  p.scale = sc;
  return p;
}

double fitted_slope(const std::vector<double>& xs, const std::vector<double>& ys) {
  const double mx = mean(xs), my = mean(ys);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
  }
  return sxy / sxx;
}

}  // namespace

TEST_CASE("softmax jacobian rows sum to zero and match finite differences") {
  SplitRng rng(1);
  const std::size_t n = 12;

  // shift invariance: constant dS gives zero response
  {
    Vec logits(n);
    for (auto& x : logits) x = rng.gaussian();
    const Vec a0 = softmax_row(logits);
    const Vec da = softmax_jacobian_apply(a0, Vec(n, 3.7));
    for (double x : da) CHECK(std::fabs(x) <= 1e-15);
  }

  // saturated one-hot row: zero response to any dS
  {
    Vec a0(n, 0.0);
    a0[4] = 1.0;
    Vec ds(n);
    for (auto& x : ds) x = rng.gaussian();
    const Vec da = softmax_jacobian_apply(a0, ds);
    for (double x : da) CHECK(std::fabs(x) <= 1e-15);
  }

  // finite-difference oracle on random rows
  for (int trial = 0; trial < 50; ++trial) {
    SplitRng r = rng.split(static_cast<uint64_t>(trial) + 100);
    Vec logits(n), ds(n);
    for (auto& x : logits) x = r.gaussian();
    for (auto& x : ds) x = r.gaussian();
    const Vec a0 = softmax_row(logits);
    const Vec da = softmax_jacobian_apply(a0, ds);

    const double eps = 1e-6;
    Vec lp = logits, lm = logits;
    for (std::size_t j = 0; j < n; ++j) {
      lp[j] += eps * ds[j];
      lm[j] -= eps * ds[j];
    }
    const Vec ap = softmax_row(lp);
    const Vec am = softmax_row(lm);
    double row_sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double fd = (ap[j] - am[j]) / (2.0 * eps);
      CHECK(std::fabs(da[j] - fd) <= 1e-6);
      row_sum += da[j];
    }
    CHECK(std::fabs(row_sum) <= 1e-14);
  }

  CHECK_THROWS_AS(softmax_jacobian_apply(Vec{0.3, 0.3}, Vec{1.0, 2.0}),
                  std::invalid_argument);
}

TEST_CASE("attention difference decomposition: exactness and zero perturbation") {
  DitConfig cfg;
  cfg.rng_seed = 3;
  DitModel model(cfg);
  SplitRng rng(4);
  const Matrix h0 = random_tokens(cfg, rng);

  // h = 0 direction: measured difference and residual vanish
  Perturbation none;
  none.h = Matrix(h0.rows(), h0.cols());
  none.scale = 1.0;
  const ResponseDecomposition d0 =
      measure_attention_difference(model, 0, h0, none, 30, 0, 0.4);
  CHECK(frobenius_norm(d0.measured) == 0.0);
  CHECK(frobenius_norm(d0.residual) == 0.0);

  // decomposition identity holds exactly by construction
  const Perturbation pert = random_direction(cfg, rng, 1e-2);
  for (double g : {0.0, 0.3, 0.7, 1.0}) {
    const ResponseDecomposition d =
        measure_attention_difference(model, 1, h0, pert, 30, 0, g);
    Matrix recon = d.residual;
    for (std::size_t i = 0; i < recon.size(); ++i)
      recon.data()[i] += d.rho * d.routing_term.data()[i] + d.xi * d.pattern_term.data()[i];
    CHECK(max_abs(sub(recon, d.measured)) == 0.0);
  }
}

TEST_CASE("residual scales quadratically in the perturbation") {
  DitConfig cfg;
  cfg.rng_seed = 8;
  DitModel model(cfg);
  SplitRng rng(5);
  const Matrix h0 = random_tokens(cfg, rng);
  const Perturbation dir = random_direction(cfg, rng, 1.0);

  for (double g : {0.0, 0.3, 0.7, 1.0}) {
    std::vector<double> lx, ly;
    for (double sc : {1e-1, 1e-2, 1e-3, 1e-4}) {
      Perturbation p = dir;
      p.scale = sc;
      const ResponseDecomposition d =
          measure_attention_difference(model, 2, h0, p, 40, 1, g);
      lx.push_back(std::log(sc));
      ly.push_back(std::log(frobenius_norm(d.residual)));
    }
    const double slope = fitted_slope(lx, ly);
    CHECK(slope >= 1.9);
    CHECK(slope <= 2.1);
  }
}

TEST_CASE("prefactor fits recover rho and xi to 1e-6 relative") {
  DitConfig cfg;
  cfg.rng_seed = 13;
  DitModel model(cfg);
  SplitRng rng(6);
  const Matrix h0 = random_tokens(cfg, rng);
  const Perturbation pert = random_direction(cfg, rng, 1e-5);

  for (int gi = 0; gi <= 10; ++gi) {
    const double g = gi / 10.0;
    const auto [rho, xi] = gating_functions(g);
    const ResponseDecomposition d =
        measure_attention_difference(model, 0, h0, pert, 25, 0, g);
    const PrefactorFit fit = fit_prefactors(d);
    CHECK(std::fabs(fit.xi_hat - xi) <= 1e-6 * xi);
    if (rho > 0.0)
      CHECK(std::fabs(fit.rho_hat - rho) <= 1e-6 * rho);
    else
      CHECK(std::fabs(fit.rho_hat) <= 1e-6);
  }
}

TEST_CASE("propagator: zero gates give the identity, J_MLP is tokenwise") {
  DitConfig cfg;
  cfg.rng_seed = 17;
  cfg.latent_h = 4;  // N=4 tokens, keeps the dense operators small
  cfg.latent_w = 4;
  DitModel model(cfg);
  SplitRng rng(7);
  const Matrix h0 = random_tokens(cfg, rng);

  {
    DitModel zero_gates(cfg);
    zero_gates.set_uniform_gates(0.0, 0.0);
    const PropagatorSpec spec = build_propagator(zero_gates, 0, h0, 20, 0, 0.5, 1e-5);
    CHECK(max_abs(sub(spec.k, Matrix::identity(spec.k.rows()))) <= 1e-10);
  }

  const PropagatorSpec spec = build_propagator(model, 1, h0, 20, 0, 0.5, 1e-5);
  // component sum is exact by construction
  const Matrix sum =
      add(add(spec.identity, spec.j_mlp), add(spec.rho_r, spec.xi_p));
  CHECK(max_abs(sub(spec.k, sum)) <= 1e-12);

  // cross-token blocks of J_MLP vanish
  const auto dm = static_cast<std::size_t>(cfg.d_model);
  double offdiag = 0.0;
  for (std::size_t i = 0; i < spec.j_mlp.rows(); ++i)
    for (std::size_t j = 0; j < spec.j_mlp.cols(); ++j)
      if (i / dm != j / dm) offdiag = std::max(offdiag, std::fabs(spec.j_mlp(i, j)));
  CHECK(offdiag <= 1e-10);

  CHECK_THROWS_AS(build_propagator(model, 1, h0, 20, 0, 0.5, 1e-2), std::invalid_argument);
}

TEST_CASE("one-block map agrees with the propagator to first order") {
  DitConfig cfg;
  cfg.rng_seed = 19;
  cfg.latent_h = 4;
  cfg.latent_w = 4;
  DitModel model(cfg);
  SplitRng rng(9);
  const Matrix h0 = random_tokens(cfg, rng);
  const double g = 0.3;
  const PropagatorSpec spec = build_propagator(model, 0, h0, 35, 0, g, 1e-5);

  // exact one-block linear map keeps the cross term the sum form drops
  const Matrix cross = matmul(spec.j_mlp, add(spec.rho_r, spec.xi_p));
  const Matrix k_exact = add(spec.k, cross);

  const Perturbation dir = random_direction(cfg, rng, 1.0);
  std::vector<double> lx, ly;
  for (double sc : {1e-1, 1e-2, 1e-3}) {
    Matrix ha = h0, hb = h0;
    const double amp = sc / std::sqrt(2.0);
    for (std::size_t i = 0; i < h0.size(); ++i) {
      ha.data()[i] += amp * dir.h.data()[i];
      hb.data()[i] -= amp * dir.h.data()[i];
    }
    const auto [oa, ob] = model.block_forward_pair(0, ha, hb, 35, 0, g);
    Vec v_out(h0.size());
    for (std::size_t i = 0; i < v_out.size(); ++i)
      v_out[i] = (oa.data()[i] - ob.data()[i]) / std::sqrt(2.0);

    Vec h_flat(dir.h.data());
    for (auto& x : h_flat) x *= sc;
    const Vec exact_out = matvec(k_exact, h_flat);
    double rn = 0.0;
    for (std::size_t i = 0; i < v_out.size(); ++i) {
      const double r = v_out[i] - exact_out[i];
      rn += r * r;
    }
    lx.push_back(std::log(sc));
    ly.push_back(0.5 * std::log(rn));

    // the sum-form mismatch is exactly the dropped cross term, to first order
    const Vec approx_out = matvec(spec.k, h_flat);
    const Vec cross_out = matvec(cross, h_flat);
    double mism = 0.0, pred = 0.0, diff = 0.0;
    for (std::size_t i = 0; i < v_out.size(); ++i) {
      mism += (v_out[i] - approx_out[i]) * (v_out[i] - approx_out[i]);
      pred += cross_out[i] * cross_out[i];
      diff += (v_out[i] - approx_out[i] - cross_out[i]) * (v_out[i] - approx_out[i] - cross_out[i]);
    }
    CHECK(std::sqrt(mism) <= spec.cross_term_norm * norm2(h_flat) * (1.0 + 1e-6) +
                                 10.0 * std::sqrt(rn));
    if (sc <= 1e-2) CHECK(std::sqrt(diff) <= 0.05 * std::sqrt(pred) + std::sqrt(rn));
  }
  // first-order agreement: the mismatch dies off at least quadratically
  CHECK(fitted_slope(lx, ly) >= 1.9);
}

TEST_CASE("cross term and branches scale linearly with the gates") {
  DitConfig cfg;
  cfg.rng_seed = 29;
  cfg.latent_h = 4;
  cfg.latent_w = 4;
  SplitRng rng(10);
  DitModel probe(cfg);
  const Matrix h0 = random_tokens(cfg, rng);

  std::vector<double> gate_scales = {0.05, 0.1, 0.2};
  std::vector<double> lx, l_attn, l_mlp, l_cross;
  for (double gs : gate_scales) {
    DitModel m(cfg);
    m.set_uniform_gates(gs, gs);
    const PropagatorSpec spec = build_propagator(m, 0, h0, 15, 0, 0.5, 1e-5);
    lx.push_back(std::log(gs));
    l_attn.push_back(std::log(frobenius_norm(add(spec.rho_r, spec.xi_p))));
    l_mlp.push_back(std::log(frobenius_norm(spec.j_mlp)));
    l_cross.push_back(std::log(spec.cross_term_norm));
    // submultiplicative bound on the dropped term
    CHECK(spec.cross_term_norm <=
          frobenius_norm(spec.j_mlp) * frobenius_norm(add(spec.rho_r, spec.xi_p)) *
              (1.0 + 1e-12));
  }
  CHECK(std::fabs(fitted_slope(lx, l_attn) - 1.0) <= 0.05);
  CHECK(std::fabs(fitted_slope(lx, l_mlp) - 1.0) <= 0.05);
  CHECK(std::fabs(fitted_slope(lx, l_cross) - 2.0) <= 0.1);  // product of two gates
}

TEST_CASE("repartitioned propagator") {
  SplitRng rng(12);
  const std::size_t d = 6;
  Matrix k(d, d);
  for (auto& x : k.data()) x = rng.gaussian() * 0.1;
  Vec m(d);
  for (auto& x : m) x = rng.gaussian();
  GaussianMixture mix = GaussianMixture::isotropic(m, 0.8);

  // gamma = 0: unchanged
  CHECK(max_abs(sub(repartition_propagator(k, mix, 0.0), k)) == 0.0);

  // m = 0: K~ = K - gamma C^{-1}
  GaussianMixture mix0 = GaussianMixture::isotropic(Vec(d, 0.0), 0.8);
  const Matrix kt = repartition_propagator(k, mix0, 0.7);
  Matrix want = k;
  for (std::size_t i = 0; i < d; ++i) want(i, i) -= 0.7 / 0.8;
  CHECK(max_abs(sub(kt, want)) <= 1e-12);
}

TEST_CASE("projector identities on random stochastic matrices") {
  SplitRng rng(14);
  for (int trial = 0; trial < 20; ++trial) {
    SplitRng r = rng.split(static_cast<uint64_t>(trial));
    const std::size_t n = 4 + r.below(12);
    Matrix logits(n, n);
    for (auto& x : logits.data()) x = r.gaussian() * 2.0;
    const Matrix a0 = softmax_rows(logits);
    const ProjectorReport rep = check_projector_identities(a0, 500, r.next_u64());
    CHECK(rep.ok);
    CHECK(rep.max_abs_delta_row_sum <= 1e-14);
    CHECK(rep.max_a0p0_dev <= 1e-12);
  }

  // uniform A0 annihilates mean-free signals through the routing channel
  const std::size_t n = 8;
  Matrix uniform(n, n, 1.0 / n);
  SplitRng r2(99);
  Matrix meanfree(n, 3);
  for (std::size_t j = 0; j < 3; ++j) {
    double mu = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      meanfree(i, j) = r2.gaussian();
      mu += meanfree(i, j);
    }
    mu /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) meanfree(i, j) -= mu;
  }
  CHECK(frobenius_norm(matmul(uniform, meanfree)) <= 1e-13);
}

TEST_CASE("effective attention width endpoints") {
  const std::size_t n = 16;
  Matrix onehot(1, n);
  onehot(0, 3) = 1.0;
  CHECK(effective_attention_width(onehot)[0] == 1.0);

  Matrix uniform(1, n, 1.0 / n);
  CHECK(effective_attention_width(uniform)[0] == static_cast<double>(n));

  Matrix half(1, 4);
  half(0, 0) = 0.5;
  half(0, 1) = 0.5;
  CHECK(effective_attention_width(half)[0] == doctest::Approx(2.0).epsilon(1e-14));
}

TEST_CASE("routing dominance bound") {
  SplitRng rng(31);
  const std::size_t n = 16, d = 8;

  // constant V0: pattern response vanishes, bound trivially holds
  {
    Matrix logits(n, n);
    for (auto& x : logits.data()) x = rng.gaussian();
    const Matrix a0 = softmax_rows(logits);
    Matrix v0(n, d);
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t i = 0; i < n; ++i) v0(i, j) = 1.0 + static_cast<double>(j);
    Matrix ds(n, n);
    for (auto& x : ds.data()) x = rng.gaussian() * 0.1;
    Matrix dv(n, d);
    for (std::size_t i = 0; i < dv.size(); ++i) dv.data()[i] = 1.0;
    const RoutingBound rb = routing_dominance_bound(a0, v0, ds, dv);
    CHECK(rb.in_regime);
    CHECK(rb.lhs <= 1e-13);
    CHECK(rb.holds);
  }

  // constant dV saturates the routing lower bound: ||A0 dV|| = ||P0 dV||
  {
    Matrix logits(n, n);
    for (auto& x : logits.data()) x = rng.gaussian();
    const Matrix a0 = softmax_rows(logits);
    Matrix dv(n, d);
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t i = 0; i < n; ++i) dv(i, j) = 0.3 * static_cast<double>(j + 1);
    const double routed = frobenius_norm(matmul(a0, dv));
    CHECK(routed == doctest::Approx(frobenius_norm(dv)).epsilon(1e-12));
  }

  // Monte Carlo: uniform-ish attention, coherent dV -> bound holds with slack
  int in_regime = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    SplitRng r = rng.split(static_cast<uint64_t>(trial) + 1000);
    Matrix logits(n, n);
    for (auto& x : logits.data()) x = r.gaussian() * 0.5;
    const Matrix a0 = softmax_rows(logits);
    Matrix v0(n, d), ds(n, n), dv(n, d);
    for (auto& x : v0.data()) x = r.gaussian();
    for (auto& x : ds.data()) x = r.gaussian() * 0.2;
    Vec base(d);
    for (auto& x : base) x = r.gaussian() + 0.5;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) dv(i, j) = base[j] + 0.05 * r.gaussian();
    const RoutingBound rb = routing_dominance_bound(a0, v0, ds, dv);
    if (!rb.in_regime) continue;
    ++in_regime;
    CHECK(rb.holds);
    CHECK(rb.rhs / std::max(rb.lhs, 1e-300) >= 1.0);
  }
  CHECK(in_regime > 900);  // coherent construction keeps almost all draws in regime
}
