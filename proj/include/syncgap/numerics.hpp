#ifndef SYNCGAP_NUMERICS_HPP
#define SYNCGAP_NUMERICS_HPP

#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace syncgap {

using Vec = std::vector<double>;

// Dense row-major matrix of doubles. All numerics in this project are
// desk-scale (dimensions up to ~1024), so there is no blocking or BLAS.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  Vec& data() { return data_; }
  const Vec& data() const { return data_; }

  Vec row(std::size_t i) const {
    return Vec(data_.begin() + static_cast<long>(i * cols_),
               data_.begin() + static_cast<long>((i + 1) * cols_));
  }
  void set_row(std::size_t i, const Vec& r) {
    for (std::size_t j = 0; j < cols_; ++j) (*this)(i, j) = r[j];
  }

 private:
  std::size_t rows_ = 0, cols_ = 0;
  Vec data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);
Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& m, double s);
Vec matvec(const Matrix& m, const Vec& v);
double frobenius_norm(const Matrix& m);
double max_abs(const Matrix& m);
bool all_finite(const Matrix& m);

double dot(const Vec& a, const Vec& b);
double norm2(const Vec& v);
Vec vadd(const Vec& a, const Vec& b);
Vec vsub(const Vec& a, const Vec& b);
Vec vscale(const Vec& v, double s);

// Eigendecomposition of a real symmetric matrix by cyclic Jacobi rotations.
// Eigenvalues sorted descending, eigenvectors orthonormal columns of V.
struct EigenDecomposition {
  std::vector<double> eigenvalues;
  Matrix eigenvectors;  // column k pairs with eigenvalues[k]
};
EigenDecomposition sym_eig(const Matrix& m);

// Row-wise softmax with max-subtraction stabilization. Rows sum to 1.
Matrix softmax_rows(const Matrix& logits);
Vec softmax_row(const Vec& logits);

// Bisection on [lo, hi]; requires a sign change. Returns a root bracketed by
// an interval of width <= tol.
double bisect_root(const std::function<double(double)>& f, double lo, double hi,
                   double tol);

// Four-parameter logistic a + b / (1 + exp(-(x - tau)/w)) fitted by a coarse
// (tau, w) grid with closed-form least squares for (a, b), followed by
// Nelder-Mead refinement of (tau, log w). Deterministic for fixed input.
struct LogisticFit {
  double floor_a = 0.0;
  double amplitude_b = 0.0;
  double midpoint_tau = 0.0;
  double width_w = 1.0;
  double residual = 0.0;  // root-mean-square residual of the fit
};
LogisticFit fit_logistic(const std::vector<double>& xs, const std::vector<double>& ys);

// Percentile bootstrap confidence interval of `statistic` over B resamples of
// `samples` (resampling unit: one entry per seed). Deterministic per rng_seed.
std::pair<double, double> bootstrap_ci(
    const std::vector<double>& samples,
    const std::function<double(const std::vector<double>&)>& statistic, int B,
    double level, uint64_t rng_seed);

// Cholesky factorization A = L L^T of a symmetric positive-definite matrix.
// Throws if the matrix is not positive definite.
Matrix cholesky(const Matrix& a);
Vec cholesky_solve(const Matrix& chol_lower, const Vec& rhs);
Matrix cholesky_solve_matrix(const Matrix& chol_lower, const Matrix& rhs);
Matrix cholesky_inverse(const Matrix& chol_lower);

double median(std::vector<double> v);
double mean(const Vec& v);
double sample_std(const Vec& v);
double percentile(std::vector<double> v, double q);  // q in [0,1], interpolated

}  // namespace syncgap

#endif  // SYNCGAP_NUMERICS_HPP
