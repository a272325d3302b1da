#include "tokur/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace tokur::linalg {

DenseMatrix identity(int n) {
  DenseMatrix m(n, n);
  for (int i = 0; i < n; ++i) m.at(i, i) = 1.0;
  return m;
}

DenseMatrix transpose(const DenseMatrix& a) {
  DenseMatrix t(a.cols, a.rows);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < a.cols; ++j) t.at(j, i) = a.at(i, j);
  return t;
}

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols != b.rows) throw_invalid("matmul: inner dimensions disagree");
  DenseMatrix c(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i) {
    for (int k = 0; k < a.cols; ++k) {
      const double aik = a.at(i, k);
      if (aik == 0.0) continue;
      for (int j = 0; j < b.cols; ++j) c.at(i, j) += aik * b.at(k, j);
    }
  }
  return c;
}

DenseMatrix add(const DenseMatrix& a, const DenseMatrix& b) {
  if (!a.same_shape(b)) throw_invalid("add: shape mismatch");
  DenseMatrix c = a;
  for (size_t i = 0; i < c.data.size(); ++i) c.data[i] += b.data[i];
  return c;
}

DenseMatrix subtract(const DenseMatrix& a, const DenseMatrix& b) {
  if (!a.same_shape(b)) throw_invalid("subtract: shape mismatch");
  DenseMatrix c = a;
  for (size_t i = 0; i < c.data.size(); ++i) c.data[i] -= b.data[i];
  return c;
}

double frobenius_norm(const DenseMatrix& a) {
  double s = 0.0;
  for (double x : a.data) s += x * x;
  return std::sqrt(s);
}

double max_abs(const DenseMatrix& a) {
  double m = 0.0;
  for (double x : a.data) m = std::max(m, std::abs(x));
  return m;
}

bool all_finite(const DenseMatrix& a) {
  return std::all_of(a.data.begin(), a.data.end(),
                     [](double x) { return std::isfinite(x); });
}

// ============================================================================
// Compact SVD (one-sided Jacobi)
// ============================================================================

namespace {

// One-sided Jacobi on a tall matrix (rows >= cols). Orthogonalizes the
// columns of `a` in place while accumulating the rotations into `v`.
// Cyclic pair order, scale-free convergence test on the off-diagonal mass.
void jacobi_orthogonalize(DenseMatrix& a, DenseMatrix& v) {
  const int n = a.cols;
  const int m = a.rows;
  constexpr double kTol = 1e-12;
  constexpr int kMaxSweeps = 100;

  auto col_dot = [&](int p, int q) {
    double s = 0.0;
    for (int i = 0; i < m; ++i) s += a.at(i, p) * a.at(i, q);
    return s;
  };

  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double alpha = col_dot(p, p);
        const double beta = col_dot(q, q);
        const double gamma = col_dot(p, q);
        if (alpha == 0.0 || beta == 0.0) continue;
        if (std::abs(gamma) <= kTol * std::sqrt(alpha * beta)) continue;

        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (int i = 0; i < m; ++i) {
          const double ap = a.at(i, p), aq = a.at(i, q);
          a.at(i, p) = c * ap - s * aq;
          a.at(i, q) = s * ap + c * aq;
        }
        for (int i = 0; i < n; ++i) {
          const double vp = v.at(i, p), vq = v.at(i, q);
          v.at(i, p) = c * vp - s * vq;
          v.at(i, q) = s * vp + c * vq;
        }
        rotated = true;
      }
    }
    if (!rotated) return;
  }
  throw Error(ErrorKind::internal, "compact_svd: Jacobi sweep limit reached");
}

// Largest-magnitude entry of each left singular vector made nonnegative
// (lowest index on ties); the matching right vector is flipped with it.
void apply_sign_convention(DenseMatrix& u, DenseMatrix& v) {
  for (int k = 0; k < u.cols; ++k) {
    int imax = 0;
    double best = std::abs(u.at(0, k));
    for (int i = 1; i < u.rows; ++i) {
      const double mag = std::abs(u.at(i, k));
      if (mag > best) {
        best = mag;
        imax = i;
      }
    }
    if (u.at(imax, k) < 0.0) {
      for (int i = 0; i < u.rows; ++i) u.at(i, k) = -u.at(i, k);
      for (int i = 0; i < v.rows; ++i) v.at(i, k) = -v.at(i, k);
    }
  }
}

}  // namespace

SvdFactors compact_svd(const DenseMatrix& w, double rank_tolerance) {
  if (!all_finite(w)) throw_invalid("compact_svd: input has non-finite entries");
  if (rank_tolerance < 0.0) throw_invalid("compact_svd: rank_tolerance must be >= 0");
  if (w.empty()) return SvdFactors{DenseMatrix(w.rows, 0), {}, DenseMatrix(w.cols, 0)};

  const bool transposed = w.rows < w.cols;
  DenseMatrix a = transposed ? transpose(w) : w;
  DenseMatrix v = identity(a.cols);
  jacobi_orthogonalize(a, v);

  const int n = a.cols;
  std::vector<double> norms(n);
  for (int j = 0; j < n; ++j) {
    double s = 0.0;
    for (int i = 0; i < a.rows; ++i) s += a.at(i, j) * a.at(i, j);
    norms[j] = std::sqrt(s);
  }

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int i, int j) { return norms[i] > norms[j]; });

  const double sigma_max = norms[order[0]];
  int rank = 0;
  while (rank < n && norms[order[rank]] > rank_tolerance * sigma_max &&
         norms[order[rank]] > 0.0)
    ++rank;

  SvdFactors f;
  f.u = DenseMatrix(a.rows, rank);
  f.v = DenseMatrix(n, rank);
  f.d.resize(rank);
  for (int k = 0; k < rank; ++k) {
    const int j = order[k];
    f.d[k] = norms[j];
    for (int i = 0; i < a.rows; ++i) f.u.at(i, k) = a.at(i, j) / norms[j];
    for (int i = 0; i < n; ++i) f.v.at(i, k) = v.at(i, j);
  }
  if (transposed) std::swap(f.u, f.v);
  apply_sign_convention(f.u, f.v);
  return f;
}

DenseMatrix reconstruct(const SvdFactors& f) {
  DenseMatrix out(f.u.rows, f.v.rows);
  for (int k = 0; k < f.rank(); ++k) {
    for (int i = 0; i < out.rows; ++i) {
      const double uik = f.u.at(i, k) * f.d[k];
      for (int j = 0; j < out.cols; ++j) out.at(i, j) += uik * f.v.at(j, k);
    }
  }
  return out;
}

DenseMatrix sample_gaussian_matrix(int rows, int cols, double sigma, const RngKey& key) {
  if (rows <= 0 || cols <= 0) throw_invalid("sample_gaussian_matrix: dimensions must be positive");
  if (sigma < 0.0) throw_invalid("sample_gaussian_matrix: sigma must be >= 0");
  DenseMatrix m(rows, cols);
  if (sigma == 0.0) return m;
  KeyedStream stream(key);
  for (double& x : m.data) x = sigma * stream.next_gaussian();
  return m;
}

// ============================================================================
// Serialization
// ============================================================================

namespace {

constexpr char kMagic[4] = {'T', 'K', 'M', 'X'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kDtypeF64 = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is, const std::string& what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw_data_format("matrix file truncated while reading " + what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f64(std::ostream& os, double x) {
  std::uint64_t v;
  std::memcpy(&v, &x, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

double get_f64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8))
    throw_data_format("matrix file truncated in payload");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double x;
  std::memcpy(&x, &v, 8);
  return x;
}

}  // namespace

void save_matrix(const DenseMatrix& m, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw_data_format("cannot open for writing: " + path);
  os.write(kMagic, 4);
  put_u32(os, kVersion);
  put_u32(os, static_cast<std::uint32_t>(m.rows));
  put_u32(os, static_cast<std::uint32_t>(m.cols));
  put_u32(os, kDtypeF64);
  for (double x : m.data) put_f64(os, x);
  if (!os) throw_data_format("write failed: " + path);
}

DenseMatrix load_matrix(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw_data_format("cannot open matrix file: " + path);
  char magic[4];
  if (!is.read(magic, 4)) throw_data_format("matrix file truncated in header: " + path);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw_data_format("bad matrix magic in " + path);
  const std::uint32_t version = get_u32(is, "version");
  if (version != kVersion)
    throw_data_format("unsupported matrix format version " + std::to_string(version) +
                      " in " + path);
  const std::uint32_t rows = get_u32(is, "rows");
  const std::uint32_t cols = get_u32(is, "cols");
  const std::uint32_t dtype = get_u32(is, "dtype");
  if (dtype != kDtypeF64)
    throw_data_format("unsupported dtype tag " + std::to_string(dtype) + " in " + path);
  DenseMatrix m(static_cast<int>(rows), static_cast<int>(cols));
  for (double& x : m.data) x = get_f64(is);
  // Anything left over means rows/cols disagree with the payload.
  char extra;
  if (is.read(&extra, 1))
    throw_data_format("matrix payload longer than rows*cols in " + path);
  return m;
}

std::string matrix_to_json(const DenseMatrix& m) {
  nlohmann::ordered_json j;
  j["rows"] = m.rows;
  j["cols"] = m.cols;
  j["data"] = m.data;
  return j.dump();
}

DenseMatrix matrix_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw_data_format(std::string("matrix json parse error: ") + e.what());
  }
  if (!j.contains("rows") || !j.contains("cols") || !j.contains("data"))
    throw_data_format("matrix json missing rows/cols/data");
  return DenseMatrix(j["rows"].get<int>(), j["cols"].get<int>(),
                     j["data"].get<std::vector<double>>());
}

}  // namespace tokur::linalg
