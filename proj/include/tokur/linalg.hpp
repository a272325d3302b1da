#pragma once

/**
 * Dense double-precision linear algebra: row-major matrices, a deterministic
 * compact SVD, and keyed Gaussian matrix sampling. Everything downstream
 * (posterior caches, perturbation deltas, the tiny transformer) is built on
 * these types.
 *
 * The SVD is a one-sided Jacobi implemented in-repo so that results are
 * bit-reproducible: fixed sweep order, a documented sign convention (the
 * largest-magnitude entry of each left singular vector is nonnegative,
 * lowest index on ties), and descending singular values with a stable
 * tie-break.
 */

#include <cstdint>
#include <string>
#include <vector>

#include "tokur/errors.hpp"
#include "tokur/rng.hpp"

namespace tokur::linalg {

struct DenseMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;  // row-major

  DenseMatrix() = default;
  DenseMatrix(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {
    if (r < 0 || c < 0) throw_invalid("DenseMatrix: negative dimension");
  }
  DenseMatrix(int r, int c, std::vector<double> d) : rows(r), cols(c), data(std::move(d)) {
    if (r < 0 || c < 0) throw_invalid("DenseMatrix: negative dimension");
    if (data.size() != static_cast<size_t>(r) * c)
      throw_invalid("DenseMatrix: data length does not match rows*cols");
  }

  double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

  bool same_shape(const DenseMatrix& o) const { return rows == o.rows && cols == o.cols; }
  bool empty() const { return rows == 0 || cols == 0; }
};

DenseMatrix identity(int n);
DenseMatrix transpose(const DenseMatrix& a);
DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix add(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix subtract(const DenseMatrix& a, const DenseMatrix& b);
double frobenius_norm(const DenseMatrix& a);
double max_abs(const DenseMatrix& a);
bool all_finite(const DenseMatrix& a);

struct SvdFactors {
  DenseMatrix u;          // m x r, orthonormal columns
  std::vector<double> d;  // r singular values, positive, non-increasing
  DenseMatrix v;          // n x r, orthonormal columns

  int rank() const { return static_cast<int>(d.size()); }
};

// Compact SVD with the deterministic conventions described above. Singular
// values <= rank_tolerance * sigma_max are dropped; the zero matrix yields an
// empty factorization (rank 0). Non-finite input is an invalid-input error.
SvdFactors compact_svd(const DenseMatrix& w, double rank_tolerance = 1e-12);

// u * diag(d) * v^T. Empty factors reconstruct the zero matrix.
DenseMatrix reconstruct(const SvdFactors& f);

// rows x cols matrix with i.i.d. N(0, sigma^2) entries, fully determined by
// the key. sigma == 0 yields the exact zero matrix.
DenseMatrix sample_gaussian_matrix(int rows, int cols, double sigma, const RngKey& key);

// --- serialization ---------------------------------------------------------
// Binary format: little-endian header {magic "TKMX", version u32, rows u32,
// cols u32, dtype u32 (1 = f64)} followed by the row-major payload.

void save_matrix(const DenseMatrix& m, const std::string& path);
DenseMatrix load_matrix(const std::string& path);

std::string matrix_to_json(const DenseMatrix& m);       // {rows, cols, data:[...]}
DenseMatrix matrix_from_json(const std::string& text);

}  // namespace tokur::linalg
