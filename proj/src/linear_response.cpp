#include "syncgap/linear_response.hpp"

#include <cmath>
#include <stdexcept>

#include "syncgap/rng.hpp"

namespace syncgap {

using nlohmann::json;

namespace {

Matrix gate_rows(const Matrix& m, const Vec& gate) {
  Matrix out = m;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) *= gate[j];
  return out;
}

double dot_flat(const Matrix& a, const Matrix& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a.data()[i] * b.data()[i];
  return acc;
}

// Spectral norm of A0 Pperp by power iteration on the normal operator.
double operator_norm_a0_perp(const Matrix& a0, int iters = 50, double tol = 1e-10) {
  const std::size_t n = a0.rows();
  auto apply_pperp = [n](Vec v) {
    double mu = 0.0;
    for (double x : v) mu += x;
    mu /= static_cast<double>(n);
    for (auto& x : v) x -= mu;
    return v;
  };
  Vec v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = 1.0 + 0.01 * static_cast<double>(i % 7);
  double lam = 0.0;
  for (int it = 0; it < iters; ++it) {
    Vec w = matvec(a0, apply_pperp(v));
    // normal operator step: (A0 Pperp)^T (A0 Pperp) v
    Vec u = apply_pperp(matvec(transpose(a0), w));
    const double nn = norm2(u);
    if (nn == 0.0) return 0.0;
    for (auto& x : u) x /= nn;
    const double next = std::sqrt(nn);
    if (std::fabs(next - lam) <= tol * std::max(1.0, next)) {
      lam = next;
      break;
    }
    lam = next;
    v = std::move(u);
  }
  return lam;
}

}  // namespace

ResponseDecomposition measure_attention_difference(const DitModel& model, int layer,
                                                   const Matrix& h0,
                                                   const Perturbation& pert, int s,
                                                   int cls, double g) {
  if (!(pert.scale > 0.0))
    throw std::invalid_argument("measure_attention_difference: scale must be positive");
  const auto [rho, xi] = gating_functions(g);
  const double amp = pert.scale / std::sqrt(2.0);

  Matrix ha = h0, hb = h0;
  for (std::size_t i = 0; i < h0.size(); ++i) {
    ha.data()[i] += amp * pert.h.data()[i];
    hb.data()[i] -= amp * pert.h.data()[i];
  }

  const GatedAttentionState st = model.attention_state(layer, ha, hb, s, cls, g);
  const std::vector<Matrix> v0 = model.value_heads(layer, h0, s, cls);
  const std::vector<Matrix> s0 = model.logit_heads(layer, h0, h0, s, cls);

  const int heads = model.config().heads;
  std::vector<Matrix> routing_h, pattern_h, routing_odd_h, pattern_odd_h;
  for (int head = 0; head < heads; ++head) {
    const auto hh = static_cast<std::size_t>(head);
    const Matrix a0 = softmax_rows(s0[hh]);

    // replica-A increments (contain the even orders -> quadratic remainder)
    const Matrix dv = sub(st.v_a[hh], v0[hh]);
    const Matrix dap = sub(st.a_aa[hh], a0);
    const Matrix dam = sub(st.a_ab[hh], a0);
    routing_h.push_back(scale(matmul(a0, dv), 2.0));
    pattern_h.push_back(scale(matmul(add(dap, scale(dam, g)), v0[hh]), 2.0));

    // antisymmetrized increments (exactly odd -> precision prefactor fits)
    const Matrix dv_o = scale(sub(st.v_a[hh], st.v_b[hh]), 0.5);
    const Matrix dap_o = scale(sub(st.a_aa[hh], st.a_bb[hh]), 0.5);
    const Matrix dam_o = scale(sub(st.a_ab[hh], st.a_ba[hh]), 0.5);
    routing_odd_h.push_back(scale(matmul(a0, dv_o), 2.0));
    pattern_odd_h.push_back(scale(matmul(add(dap_o, scale(dam_o, g)), v0[hh]), 2.0));
  }

  ResponseDecomposition out;
  out.g = g;
  out.rho = rho;
  out.xi = xi;
  out.measured = sub(st.out_a, st.out_b);
  out.routing_term = model.combine_heads(layer, routing_h);
  out.pattern_term = model.combine_heads(layer, pattern_h);
  out.routing_odd = model.combine_heads(layer, routing_odd_h);
  out.pattern_odd = model.combine_heads(layer, pattern_odd_h);
  out.residual = out.measured;
  for (std::size_t i = 0; i < out.residual.size(); ++i)
    out.residual.data()[i] -=
        rho * out.routing_term.data()[i] + xi * out.pattern_term.data()[i];
  return out;
}

PrefactorFit fit_prefactors(const ResponseDecomposition& d) {
  const double rr = dot_flat(d.routing_odd, d.routing_odd);
  const double pp = dot_flat(d.pattern_odd, d.pattern_odd);
  const double rp = dot_flat(d.routing_odd, d.pattern_odd);
  const double mr = dot_flat(d.measured, d.routing_odd);
  const double mp = dot_flat(d.measured, d.pattern_odd);
  const double det = rr * pp - rp * rp;
  if (!(std::fabs(det) > 1e-30 * std::max(1.0, rr * pp)))
    throw std::runtime_error("fit_prefactors: degenerate term basis");
  PrefactorFit fit;
  fit.rho_hat = (pp * mr - rp * mp) / det;
  fit.xi_hat = (rr * mp - rp * mr) / det;
  return fit;
}

PropagatorSpec build_propagator(const DitModel& model, int layer, const Matrix& h0,
                                int s, int cls, double g, double fd_eps) {
  if (fd_eps < 1e-7 || fd_eps > 1e-3)
    throw std::invalid_argument("build_propagator: fd_eps must lie in [1e-7, 1e-3]");
  const auto [rho, xi] = gating_functions(g);
  const std::size_t n = h0.rows(), dm = h0.cols();
  const std::size_t dim = n * dm;
  const int heads = model.config().heads;
  const Vec& alpha = model.gate_alpha(layer);

  std::vector<Matrix> a0(static_cast<std::size_t>(heads));
  const std::vector<Matrix> s0 = model.logit_heads(layer, h0, h0, s, cls);
  const std::vector<Matrix> v0 = model.value_heads(layer, h0, s, cls);
  for (int head = 0; head < heads; ++head)
    a0[static_cast<std::size_t>(head)] = softmax_rows(s0[static_cast<std::size_t>(head)]);
  const Matrix tilde0 = model.post_attention_state(layer, h0, s, cls);

  PropagatorSpec spec;
  spec.g = g;
  spec.rho = rho;
  spec.xi = xi;
  spec.identity = Matrix::identity(dim);
  spec.r = Matrix(dim, dim);
  spec.p = Matrix(dim, dim);
  spec.j_mlp = Matrix(dim, dim);

  Matrix hp = h0, hm = h0;
  for (std::size_t col = 0; col < dim; ++col) {
    hp.data()[col] += fd_eps;
    hm.data()[col] -= fd_eps;

    // routing column: alpha . combine_heads(A0 dV)
    {
      const std::vector<Matrix> vp = model.value_heads(layer, hp, s, cls);
      const std::vector<Matrix> vm = model.value_heads(layer, hm, s, cls);
      std::vector<Matrix> per_head;
      for (int head = 0; head < heads; ++head) {
        const auto hh = static_cast<std::size_t>(head);
        Matrix dv = sub(vp[hh], vm[hh]);
        for (auto& x : dv.data()) x /= (2.0 * fd_eps);
        per_head.push_back(matmul(a0[hh], dv));
      }
      const Matrix colm = gate_rows(model.combine_heads(layer, per_head), alpha);
      for (std::size_t i = 0; i < dim; ++i) spec.r(i, col) = colm.data()[i];
    }

    // pattern column: alpha . combine_heads((dA+ + g dA-) V0)
    {
      const std::vector<Matrix> spp = model.logit_heads(layer, hp, hp, s, cls);
      const std::vector<Matrix> smm = model.logit_heads(layer, hm, hm, s, cls);
      const std::vector<Matrix> spm = model.logit_heads(layer, hp, hm, s, cls);
      const std::vector<Matrix> smp = model.logit_heads(layer, hm, hp, s, cls);
      std::vector<Matrix> per_head;
      for (int head = 0; head < heads; ++head) {
        const auto hh = static_cast<std::size_t>(head);
        Matrix dap = sub(softmax_rows(spp[hh]), softmax_rows(smm[hh]));
        Matrix dam = sub(softmax_rows(spm[hh]), softmax_rows(smp[hh]));
        for (std::size_t i = 0; i < dap.size(); ++i) {
          dap.data()[i] /= (2.0 * fd_eps);
          dam.data()[i] /= (2.0 * fd_eps);
        }
        per_head.push_back(matmul(add(dap, scale(dam, g)), v0[hh]));
      }
      const Matrix colm = gate_rows(model.combine_heads(layer, per_head), alpha);
      for (std::size_t i = 0; i < dim; ++i) spec.p(i, col) = colm.data()[i];
    }

    hp.data()[col] = h0.data()[col];
    hm.data()[col] = h0.data()[col];
  }

  // tokenwise MLP-branch Jacobian at the post-attention symmetric state
  Matrix tp = tilde0, tm = tilde0;
  for (std::size_t col = 0; col < dim; ++col) {
    tp.data()[col] += fd_eps;
    tm.data()[col] -= fd_eps;
    const Matrix bp = model.mlp_branch(layer, tp, s, cls);
    const Matrix bm = model.mlp_branch(layer, tm, s, cls);
    for (std::size_t i = 0; i < dim; ++i)
      spec.j_mlp(i, col) = (bp.data()[i] - bm.data()[i]) / (2.0 * fd_eps);
    tp.data()[col] = tilde0.data()[col];
    tm.data()[col] = tilde0.data()[col];
  }

  spec.rho_r = scale(spec.r, rho);
  spec.xi_p = scale(spec.p, xi);
  spec.k = add(add(spec.identity, spec.j_mlp), add(spec.rho_r, spec.xi_p));
  spec.cross_term_norm = frobenius_norm(matmul(spec.j_mlp, add(spec.rho_r, spec.xi_p)));
  return spec;
}

Matrix repartition_propagator(const Matrix& k, const GaussianMixture& mix, double gamma) {
  if (k.rows() != mix.dim() || k.cols() != mix.dim())
    throw std::invalid_argument("repartition_propagator: dimension mismatch");
  return sub(k, scale(effective_precision(mix), gamma));
}

Vec softmax_jacobian_apply(const Vec& a0_row, const Vec& ds_row) {
  if (a0_row.size() != ds_row.size())
    throw std::invalid_argument("softmax_jacobian_apply: dimension mismatch");
  double sum = 0.0, inner = 0.0;
  for (std::size_t j = 0; j < a0_row.size(); ++j) {
    if (a0_row[j] < 0.0)
      throw std::invalid_argument("softmax_jacobian_apply: negative attention weight");
    sum += a0_row[j];
    inner += a0_row[j] * ds_row[j];
  }
  if (std::fabs(sum - 1.0) > 1e-8)
    throw std::invalid_argument("softmax_jacobian_apply: row is not stochastic");
  Vec out(a0_row.size());
  for (std::size_t j = 0; j < a0_row.size(); ++j)
    out[j] = a0_row[j] * (ds_row[j] - inner);
  return out;
}

ProjectorReport check_projector_identities(const Matrix& a0, int trials,
                                           uint64_t rng_seed) {
  const std::size_t n = a0.rows();
  if (a0.cols() != n)
    throw std::invalid_argument("check_projector_identities: A0 must be square");
  ProjectorReport rep;
  rep.trials = trials;

  // A0 P0 = P0: every row of A0 averages the constant token component intact
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += a0(i, j);
    const double dev = std::fabs(s - 1.0);  // (A0 P0)_ij = rowsum / n
    if (dev > rep.max_a0p0_dev) {
      rep.max_a0p0_dev = dev;
      rep.worst_row = static_cast<int>(i);
    }
  }

  SplitRng root(rng_seed);
  for (int t = 0; t < trials; ++t) {
    SplitRng rng = root.split(static_cast<uint64_t>(t));
    const std::size_t i = rng.below(n);
    Vec ds(n);
    for (auto& x : ds) x = rng.gaussian();
    const Vec da = softmax_jacobian_apply(a0.row(i), ds);
    double rs = 0.0;
    for (double x : da) rs += x;
    if (std::fabs(rs) > rep.max_abs_delta_row_sum) {
      rep.max_abs_delta_row_sum = std::fabs(rs);
      rep.worst_row = static_cast<int>(i);
    }

    // dA V0 = dA Pperp V0 for a random value column
    Vec v0col(n);
    for (auto& x : v0col) x = rng.gaussian();
    double mu = 0.0;
    for (double x : v0col) mu += x;
    mu /= static_cast<double>(n);
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      lhs += da[j] * v0col[j];
      rhs += da[j] * (v0col[j] - mu);
    }
    rep.max_pattern_subspace_dev =
        std::max(rep.max_pattern_subspace_dev, std::fabs(lhs - rhs));
  }
  rep.ok = rep.max_abs_delta_row_sum <= 1e-14 && rep.max_a0p0_dev <= 1e-12 &&
           rep.max_pattern_subspace_dev <= 1e-12;
  return rep;
}

Vec effective_attention_width(const Matrix& a0) {
  Vec out(a0.rows());
  for (std::size_t i = 0; i < a0.rows(); ++i) {
    double s2 = 0.0;
    for (std::size_t j = 0; j < a0.cols(); ++j) s2 += a0(i, j) * a0(i, j);
    out[i] = 1.0 / s2;
  }
  return out;
}

RoutingBound routing_dominance_bound(const Matrix& a0, const Matrix& v0,
                                     const Matrix& ds, const Matrix& dv) {
  const std::size_t n = a0.rows();
  if (a0.cols() != n || v0.rows() != n || ds.rows() != n || ds.cols() != n ||
      dv.rows() != n || dv.cols() != v0.cols())
    throw std::invalid_argument("routing_dominance_bound: shape mismatch");

  RoutingBound rb;

  // first-order pattern response from the analytic softmax Jacobian
  Matrix da(n, n);
  for (std::size_t i = 0; i < n; ++i) da.set_row(i, softmax_jacobian_apply(a0.row(i), ds.row(i)));
  rb.lhs = frobenius_norm(matmul(da, v0));
  const double routing_norm = frobenius_norm(matmul(a0, dv));

  auto split_norms = [n](const Matrix& x) {
    // (||P0 x||_F, ||Pperp x||_F)
    double c0 = 0.0, cp = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) {
      double mu = 0.0;
      for (std::size_t i = 0; i < n; ++i) mu += x(i, j);
      mu /= static_cast<double>(n);
      c0 += static_cast<double>(n) * mu * mu;
      for (std::size_t i = 0; i < n; ++i) {
        const double r = x(i, j) - mu;
        cp += r * r;
      }
    }
    return std::pair<double, double>{std::sqrt(c0), std::sqrt(cp)};
  };

  const auto [v0_const, v0_perp] = split_norms(v0);
  const auto [dv_const, dv_perp] = split_norms(dv);
  rb.eps_v0 = (v0_const > 0.0) ? v0_perp / v0_const : 0.0;
  rb.eps_dv = (dv_const > 0.0) ? dv_perp / dv_const : 0.0;
  rb.lambda_perp = operator_norm_a0_perp(a0);
  const Vec neff = effective_attention_width(a0);
  rb.neff_min = neff[0];
  for (double x : neff) rb.neff_min = std::min(rb.neff_min, x);
  rb.ds_max = max_abs(ds);

  const double denom_guard = 1.0 - rb.lambda_perp * rb.eps_dv;
  rb.in_regime = denom_guard > 0.0 && v0_const > 0.0 && dv_const > 0.0;
  if (!rb.in_regime) return rb;  // out of regime, reported rather than failed

  rb.rhs = (2.0 * std::sqrt(static_cast<double>(n)) * rb.ds_max * rb.eps_v0 * v0_const) /
           (std::sqrt(rb.neff_min) * denom_guard * dv_const);
  rb.lhs = (routing_norm > 0.0) ? rb.lhs / routing_norm : 0.0;
  // absolute floor guards exact-zero right-hand sides against rounding dust
  rb.holds = rb.lhs <= rb.rhs * (1.0 + 1e-12) + 1e-13;
  return rb;
}

json linearization_report(const DitModel& model, const LinearizationReportConfig& cfg) {
  json rep;
  rep["g_grid"] = cfg.g_grid;
  rep["fit_scale"] = cfg.fit_scale;
  rep["slope_scales"] = cfg.slope_scales;
  rep["layers"] = json::array();

  SplitRng root(cfg.rng_seed);
  const DitConfig& mc = model.config();
  const std::size_t n = static_cast<std::size_t>(mc.n_tokens());
  const std::size_t dm = static_cast<std::size_t>(mc.d_model);

  for (int layer = 0; layer < mc.layers; ++layer) {
    SplitRng lr = root.split(static_cast<uint64_t>(layer));
    Matrix h0(n, dm);
    for (auto& x : h0.data()) x = lr.gaussian();
    Perturbation pert;
    pert.h = Matrix(n, dm);
    for (auto& x : pert.h.data()) x = lr.gaussian();
    const double hn = frobenius_norm(pert.h);
    for (auto& x : pert.h.data()) x /= hn;

    json lj;
    lj["layer"] = layer;
    lj["prefactors"] = json::array();
    for (double g : cfg.g_grid) {
      pert.scale = cfg.fit_scale;
      const ResponseDecomposition d =
          measure_attention_difference(model, layer, h0, pert, cfg.s, cfg.cls, g);
      const PrefactorFit fit = fit_prefactors(d);

      std::vector<double> lr_x, lr_y;
      for (double sc : cfg.slope_scales) {
        Perturbation ps = pert;
        ps.scale = sc;
        const ResponseDecomposition ds =
            measure_attention_difference(model, layer, h0, ps, cfg.s, cfg.cls, g);
        lr_x.push_back(std::log(sc));
        lr_y.push_back(std::log(frobenius_norm(ds.residual)));
      }
      const double mx = mean(lr_x), my = mean(lr_y);
      double sxx = 0.0, sxy = 0.0;
      for (std::size_t i = 0; i < lr_x.size(); ++i) {
        sxx += (lr_x[i] - mx) * (lr_x[i] - mx);
        sxy += (lr_x[i] - mx) * (lr_y[i] - my);
      }
      const double slope = sxy / sxx;

      lj["prefactors"].push_back(
          {{"g", g},
           {"rho", d.rho},
           {"xi", d.xi},
           {"rho_hat", fit.rho_hat},
           {"xi_hat", fit.xi_hat},
           {"rho_err", std::fabs(fit.rho_hat - d.rho)},
           {"xi_err", std::fabs(fit.xi_hat - d.xi)},
           {"residual_slope", slope}});
    }

    // identity checks on the layer's own head-0 attention pattern
    const std::vector<Matrix> s0 = model.logit_heads(layer, h0, h0, cfg.s, cfg.cls);
    const Matrix a0 = softmax_rows(s0[0]);
    const ProjectorReport pr = check_projector_identities(a0, cfg.identity_trials,
                                                          lr.next_u64());
    const Vec neff = effective_attention_width(a0);
    double neff_min = neff[0], neff_max = neff[0];
    for (double x : neff) {
      neff_min = std::min(neff_min, x);
      neff_max = std::max(neff_max, x);
    }
    lj["identities"] = {{"max_abs_delta_row_sum", pr.max_abs_delta_row_sum},
                        {"max_a0p0_dev", pr.max_a0p0_dev},
                        {"max_pattern_subspace_dev", pr.max_pattern_subspace_dev},
                        {"ok", pr.ok},
                        {"neff_min", neff_min},
                        {"neff_max", neff_max}};

    // routing-dominance slack over random coherent perturbations
    int holds = 0, in_regime = 0;
    double min_slack = 0.0, sum_slack = 0.0;
    const std::vector<Matrix> v0h = model.value_heads(layer, h0, cfg.s, cfg.cls);
    for (int t = 0; t < cfg.bound_trials; ++t) {
      SplitRng br = lr.split(9000 + static_cast<uint64_t>(t));
      Matrix ds(n, n);
      for (auto& x : ds.data()) x = br.gaussian() * 0.1;
      Matrix dv(n, v0h[0].cols());
      Vec base(dv.cols());
      for (auto& x : base) x = br.gaussian();
      for (std::size_t i = 0; i < dv.rows(); ++i)
        for (std::size_t j = 0; j < dv.cols(); ++j)
          dv(i, j) = base[j] + 0.05 * br.gaussian();  // token-coherent signal
      const RoutingBound rb = routing_dominance_bound(a0, v0h[0], ds, dv);
      if (!rb.in_regime) continue;
      ++in_regime;
      if (rb.holds) ++holds;
      const double slack = (rb.lhs > 0.0) ? rb.rhs / rb.lhs : 1e300;
      min_slack = (in_regime == 1) ? slack : std::min(min_slack, slack);
      sum_slack += std::min(slack, 1e6);
    }
    lj["routing_bound"] = {{"in_regime", in_regime},
                           {"holds", holds},
                           {"violations", in_regime - holds},
                           {"min_slack", min_slack},
                           {"mean_slack_capped", in_regime ? sum_slack / in_regime : 0.0}};

    // propagator assembly and the dropped cross term
    const PropagatorSpec spec =
        build_propagator(model, layer, h0, cfg.s, cfg.cls, 0.5, cfg.fd_eps);
    double offdiag = 0.0;
    for (std::size_t i = 0; i < spec.j_mlp.rows(); ++i)
      for (std::size_t j = 0; j < spec.j_mlp.cols(); ++j)
        if (i / dm != j / dm) offdiag = std::max(offdiag, std::fabs(spec.j_mlp(i, j)));
    lj["propagator"] = {{"g", 0.5},
                        {"cross_term_norm", spec.cross_term_norm},
                        {"jmlp_norm", frobenius_norm(spec.j_mlp)},
                        {"attn_norm", frobenius_norm(add(spec.rho_r, spec.xi_p))},
                        {"jmlp_cross_token_max", offdiag}};

    rep["layers"].push_back(std::move(lj));
  }
  return rep;
}

}  // namespace syncgap
