#include "syncgap/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "syncgap/rng.hpp"

namespace syncgap {

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: dimension mismatch");
  Matrix out(a.rows(), b.cols());
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  for (std::size_t i = 0; i < n; ++i) {
    double* outi = &out.data()[i * m];
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a(i, p);
      if (aip == 0.0) continue;
      const double* bp = &b.data()[p * m];
      for (std::size_t j = 0; j < m; ++j) outi[j] += aip * bp[j];
    }
  }
  return out;
}

Matrix transpose(const Matrix& m) {
  Matrix out(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out(j, i) = m(i, j);
  return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("add: dimension mismatch");
  Matrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += b.data()[i];
  return out;
}

Matrix sub(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("sub: dimension mismatch");
  Matrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] -= b.data()[i];
  return out;
}

Matrix scale(const Matrix& m, double s) {
  Matrix out = m;
  for (auto& x : out.data()) x *= s;
  return out;
}

Vec matvec(const Matrix& m, const Vec& v) {
  if (m.cols() != v.size()) throw std::invalid_argument("matvec: dimension mismatch");
  Vec out(m.rows(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double acc = 0.0;
    const double* row = &m.data()[i * m.cols()];
    for (std::size_t j = 0; j < m.cols(); ++j) acc += row[j] * v[j];
    out[i] = acc;
  }
  return out;
}

double frobenius_norm(const Matrix& m) {
  double acc = 0.0;
  for (double x : m.data()) acc += x * x;
  return std::sqrt(acc);
}

double max_abs(const Matrix& m) {
  double acc = 0.0;
  for (double x : m.data()) acc = std::max(acc, std::fabs(x));
  return acc;
}

bool all_finite(const Matrix& m) {
  for (double x : m.data())
    if (!std::isfinite(x)) return false;
  return true;
}

double dot(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) throw std::invalid_argument("dot: dimension mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double norm2(const Vec& v) { return std::sqrt(dot(v, v)); }

Vec vadd(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) throw std::invalid_argument("vadd: dimension mismatch");
  Vec out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

Vec vsub(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) throw std::invalid_argument("vsub: dimension mismatch");
  Vec out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
  return out;
}

Vec vscale(const Vec& v, double s) {
  Vec out = v;
  for (auto& x : out) x *= s;
  return out;
}

EigenDecomposition sym_eig(const Matrix& m) {
  const std::size_t n = m.rows();
  if (n == 0 || m.cols() != n) throw std::invalid_argument("sym_eig: matrix must be square");
  if (!all_finite(m)) throw std::invalid_argument("sym_eig: non-finite entries");
  const double amax = max_abs(m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (std::fabs(m(i, j) - m(j, i)) > 1e-10 * std::max(1.0, amax))
        throw std::invalid_argument("sym_eig: matrix is not symmetric");

  Matrix a = m;
  Matrix v = Matrix::identity(n);
  double* ad = a.data().data();
  double* vd = v.data().data();

  const double norm = std::max(frobenius_norm(a), 1e-300);
  const double stop = 1e-15 * norm;
  const int max_sweeps = 64;

  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p + 1 < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += 2.0 * ad[p * n + q] * ad[p * n + q];
    if (std::sqrt(off) <= stop) break;

    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = ad[p * n + q];
        if (std::fabs(apq) <= 1e-300) continue;
        const double app = ad[p * n + p];
        const double aqq = ad[q * n + q];
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;

        ad[p * n + p] = app - t * apq;
        ad[q * n + q] = aqq + t * apq;
        ad[p * n + q] = 0.0;
        ad[q * n + p] = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
          if (r != p && r != q) {
            const double arp = ad[r * n + p];
            const double arq = ad[r * n + q];
            ad[r * n + p] = c * arp - s * arq;
            ad[p * n + r] = ad[r * n + p];
            ad[r * n + q] = s * arp + c * arq;
            ad[q * n + r] = ad[r * n + q];
          }
          const double vrp = vd[r * n + p];
          const double vrq = vd[r * n + q];
          vd[r * n + p] = c * vrp - s * vrq;
          vd[r * n + q] = s * vrp + c * vrq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t i, std::size_t j) { return ad[i * n + i] > ad[j * n + j]; });

  EigenDecomposition out;
  out.eigenvalues.resize(n);
  out.eigenvectors = Matrix(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    out.eigenvalues[k] = ad[order[k] * n + order[k]];
    for (std::size_t r = 0; r < n; ++r) out.eigenvectors(r, k) = vd[r * n + order[k]];
  }
  return out;
}

Vec softmax_row(const Vec& logits) {
  Vec out(logits.size());
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : logits) {
    if (std::isnan(x)) throw std::invalid_argument("softmax: NaN logit");
    mx = std::max(mx, x);
  }
  double sum = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    out[j] = std::exp(logits[j] - mx);
    sum += out[j];
  }
  for (auto& x : out) x /= sum;
  return out;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const Vec r = softmax_row(logits.row(i));
    out.set_row(i, r);
  }
  return out;
}

double bisect_root(const std::function<double(double)>& f, double lo, double hi,
                   double tol) {
  if (!(tol > 0.0)) throw std::invalid_argument("bisect_root: tol must be positive");
  if (!(lo < hi)) throw std::invalid_argument("bisect_root: lo must be < hi");
  double flo = f(lo);
  double fhi = f(hi);
  if (flo == 0.0) return lo;
  if (fhi == 0.0) return hi;
  if (flo * fhi > 0.0)
    throw std::invalid_argument("bisect_root: no sign change on bracket");
  for (int it = 0; it < 1000 && (hi - lo) > tol; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double fm = f(mid);
    if (fm == 0.0) return mid;
    if (flo * fm < 0.0) {
      hi = mid;
      fhi = fm;
    } else {
      lo = mid;
      flo = fm;
    }
  }
  (void)fhi;
  return 0.5 * (lo + hi);
}

namespace {

struct LogisticLsq {
  double a = 0.0, b = 0.0, sse = std::numeric_limits<double>::infinity();
};

// Closed-form least squares for (a, b) given (tau, w).
LogisticLsq logistic_ab(const std::vector<double>& xs, const std::vector<double>& ys,
                        double tau, double w) {
  const std::size_t n = xs.size();
  double sf = 0.0, sff = 0.0, sy = 0.0, sfy = 0.0;
  std::vector<double> f(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double z = (xs[i] - tau) / w;
    f[i] = 1.0 / (1.0 + std::exp(-z));
    sf += f[i];
    sff += f[i] * f[i];
    sy += ys[i];
    sfy += f[i] * ys[i];
  }
  const double nn = static_cast<double>(n);
  const double det = nn * sff - sf * sf;
  LogisticLsq out;
  if (std::fabs(det) < 1e-14 * std::max(1.0, nn * sff)) return out;  // f ~ constant
  out.a = (sff * sy - sf * sfy) / det;
  out.b = (nn * sfy - sf * sy) / det;
  double sse = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = ys[i] - (out.a + out.b * f[i]);
    sse += r * r;
  }
  out.sse = sse;
  return out;
}

}  // namespace

LogisticFit fit_logistic(const std::vector<double>& xs, const std::vector<double>& ys) {
  const std::size_t n = xs.size();
  if (n < 6 || ys.size() != n)
    throw std::invalid_argument("fit_logistic: need at least 6 (x, y) points");
  for (std::size_t i = 1; i < n; ++i)
    if (!(xs[i] > xs[i - 1]))
      throw std::invalid_argument("fit_logistic: xs must be strictly increasing");
  const auto [ymin, ymax] = std::minmax_element(ys.begin(), ys.end());
  if (*ymax - *ymin < 1e-12)
    throw std::domain_error("fit_logistic: flat data, degenerate fit");

  const double range = xs.back() - xs.front();
  double dx = range;
  for (std::size_t i = 1; i < n; ++i) dx = std::min(dx, xs[i] - xs[i - 1]);

  // Coarse grid: tau at the data's step resolution, w logarithmic (32 values).
  double best_sse = std::numeric_limits<double>::infinity();
  double best_tau = xs.front(), best_w = dx, best_a = 0.0, best_b = 0.0;
  const std::size_t tau_count =
      std::min<std::size_t>(4096, static_cast<std::size_t>(range / dx) + 1);
  const int w_count = 32;
  for (std::size_t ti = 0; ti < tau_count; ++ti) {
    const double tau = xs.front() + range * (tau_count == 1 ? 0.0 : static_cast<double>(ti) / (tau_count - 1));
    for (int wi = 0; wi < w_count; ++wi) {
      const double w = dx * std::pow(range / dx, static_cast<double>(wi) / (w_count - 1));
      const LogisticLsq ls = logistic_ab(xs, ys, tau, w);
      if (ls.sse < best_sse) {
        best_sse = ls.sse;
        best_tau = tau;
        best_w = w;
        best_a = ls.a;
        best_b = ls.b;
      }
    }
  }

  // Nelder-Mead refinement on (tau, log w) with closed-form (a, b) inside,
  // kept local: candidates outside the data range or the width grid span are
  // rejected, so a degenerate plateau cannot pull the midpoint off the data.
  const double lw_lo = std::log(dx) - 1.5, lw_hi = std::log(range) + 1.5;
  auto obj = [&](double tau, double lw) {
    if (tau < xs.front() || tau > xs.back() || lw < lw_lo || lw > lw_hi)
      return std::numeric_limits<double>::infinity();
    return logistic_ab(xs, ys, tau, std::exp(lw)).sse;
  };
  struct Pt {
    double tau, lw, f;
  };
  std::vector<Pt> simplex = {
      {best_tau, std::log(best_w), 0.0},
      {best_tau + 0.5 * dx, std::log(best_w), 0.0},
      {best_tau, std::log(best_w) + 0.25, 0.0},
  };
  for (auto& p : simplex) p.f = obj(p.tau, p.lw);
  for (int it = 0; it < 200; ++it) {
    std::sort(simplex.begin(), simplex.end(),
              [](const Pt& l, const Pt& r) { return l.f < r.f; });
    if (simplex[2].f - simplex[0].f < 1e-15 * (1.0 + simplex[0].f)) break;
    const double ctau = 0.5 * (simplex[0].tau + simplex[1].tau);
    const double clw = 0.5 * (simplex[0].lw + simplex[1].lw);
    Pt refl{ctau + (ctau - simplex[2].tau), clw + (clw - simplex[2].lw), 0.0};
    refl.f = obj(refl.tau, refl.lw);
    if (refl.f < simplex[0].f) {
      Pt exp_{ctau + 2.0 * (ctau - simplex[2].tau), clw + 2.0 * (clw - simplex[2].lw), 0.0};
      exp_.f = obj(exp_.tau, exp_.lw);
      simplex[2] = (exp_.f < refl.f) ? exp_ : refl;
    } else if (refl.f < simplex[1].f) {
      simplex[2] = refl;
    } else {
      Pt con{ctau + 0.5 * (simplex[2].tau - ctau), clw + 0.5 * (simplex[2].lw - clw), 0.0};
      con.f = obj(con.tau, con.lw);
      if (con.f < simplex[2].f) {
        simplex[2] = con;
      } else {
        for (int k = 1; k < 3; ++k) {
          simplex[k].tau = 0.5 * (simplex[k].tau + simplex[0].tau);
          simplex[k].lw = 0.5 * (simplex[k].lw + simplex[0].lw);
          simplex[k].f = obj(simplex[k].tau, simplex[k].lw);
        }
      }
    }
  }
  std::sort(simplex.begin(), simplex.end(),
            [](const Pt& l, const Pt& r) { return l.f < r.f; });
  const double tau = simplex[0].tau;
  const double w = std::exp(simplex[0].lw);
  const LogisticLsq ls = logistic_ab(xs, ys, tau, w);

  LogisticFit fit;
  if (ls.sse <= best_sse) {
    fit.floor_a = ls.a;
    fit.amplitude_b = ls.b;
    fit.midpoint_tau = tau;
    fit.width_w = w;
    fit.residual = std::sqrt(ls.sse / static_cast<double>(n));
  } else {
    fit.floor_a = best_a;
    fit.amplitude_b = best_b;
    fit.midpoint_tau = best_tau;
    fit.width_w = best_w;
    fit.residual = std::sqrt(best_sse / static_cast<double>(n));
  }
  return fit;
}

std::pair<double, double> bootstrap_ci(
    const std::vector<double>& samples,
    const std::function<double(const std::vector<double>&)>& statistic, int B,
    double level, uint64_t rng_seed) {
  const std::size_t n = samples.size();
  if (n < 2) throw std::invalid_argument("bootstrap_ci: need at least 2 samples");
  if (B < 100) throw std::invalid_argument("bootstrap_ci: B must be >= 100");
  if (!(level > 0.0 && level < 1.0))
    throw std::invalid_argument("bootstrap_ci: level must be in (0,1)");

  SplitRng root(rng_seed);
  std::vector<double> stats(static_cast<std::size_t>(B));
  std::vector<double> resample(n);
  for (int b = 0; b < B; ++b) {
    SplitRng rng = root.split(static_cast<uint64_t>(b));
    for (std::size_t i = 0; i < n; ++i) resample[i] = samples[rng.below(n)];
    stats[static_cast<std::size_t>(b)] = statistic(resample);
  }
  const double qlo = 0.5 * (1.0 - level);
  return {percentile(stats, qlo), percentile(stats, 1.0 - qlo)};
}

Matrix cholesky(const Matrix& a) {
  const std::size_t n = a.rows();
  if (a.cols() != n) throw std::invalid_argument("cholesky: matrix must be square");
  Matrix l(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double acc = a(i, j);
      for (std::size_t k = 0; k < j; ++k) acc -= l(i, k) * l(j, k);
      if (i == j) {
        if (acc <= 0.0 || !std::isfinite(acc))
          throw std::runtime_error("cholesky: matrix not positive definite");
        l(i, i) = std::sqrt(acc);
      } else {
        l(i, j) = acc / l(j, j);
      }
    }
  }
  return l;
}

Vec cholesky_solve(const Matrix& l, const Vec& rhs) {
  const std::size_t n = l.rows();
  if (rhs.size() != n) throw std::invalid_argument("cholesky_solve: dimension mismatch");
  Vec y(n);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = rhs[i];
    for (std::size_t k = 0; k < i; ++k) acc -= l(i, k) * y[k];
    y[i] = acc / l(i, i);
  }
  Vec x(n);
  for (std::size_t ii = n; ii-- > 0;) {
    double acc = y[ii];
    for (std::size_t k = ii + 1; k < n; ++k) acc -= l(k, ii) * x[k];
    x[ii] = acc / l(ii, ii);
  }
  return x;
}

Matrix cholesky_solve_matrix(const Matrix& l, const Matrix& rhs) {
  Matrix out(rhs.rows(), rhs.cols());
  Vec col(rhs.rows());
  for (std::size_t j = 0; j < rhs.cols(); ++j) {
    for (std::size_t i = 0; i < rhs.rows(); ++i) col[i] = rhs(i, j);
    const Vec x = cholesky_solve(l, col);
    for (std::size_t i = 0; i < rhs.rows(); ++i) out(i, j) = x[i];
  }
  return out;
}

Matrix cholesky_inverse(const Matrix& l) {
  return cholesky_solve_matrix(l, Matrix::identity(l.rows()));
}

double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median: empty input");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return (n % 2 == 1) ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double mean(const Vec& v) {
  if (v.empty()) throw std::invalid_argument("mean: empty input");
  double acc = 0.0;
  for (double x : v) acc += x;
  return acc / static_cast<double>(v.size());
}

double sample_std(const Vec& v) {
  if (v.size() < 2) return 0.0;
  const double mu = mean(v);
  double acc = 0.0;
  for (double x : v) acc += (x - mu) * (x - mu);
  return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

double percentile(std::vector<double> v, double q) {
  if (v.empty()) throw std::invalid_argument("percentile: empty input");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return v[lo] * (1.0 - frac) + v[hi] * frac;
}

}  // namespace syncgap
