#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "muse/error.hpp"

namespace muse {

// Row-major dense matrix of doubles. Sizes here are tiny (attention
// projections, tower layers); no BLAS needed.
struct Mat {
  size_t rows = 0;
  size_t cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(size_t r, size_t c, double fill = 0.0) : rows(r), cols(c), a(r * c, fill) {}

  double &at(size_t r, size_t c) { return a[r * cols + c]; }
  double at(size_t r, size_t c) const { return a[r * cols + c]; }
  std::span<double> row(size_t r) { return {a.data() + r * cols, cols}; }
  std::span<const double> row(size_t r) const { return {a.data() + r * cols, cols}; }
  size_t size() const { return a.size(); }

  void zero() { std::fill(a.begin(), a.end(), 0.0); }

  bool same_shape(const Mat &o) const { return rows == o.rows && cols == o.cols; }
};

inline double dot(std::span<const double> x, std::span<const double> y) {
  double s = 0.0;
  for (size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  return s;
}

// out = x * M  (x is a row vector of length M.rows, out has length M.cols)
inline void vecmat(std::span<const double> x, const Mat &m, std::span<double> out) {
  if (x.size() != m.rows || out.size() != m.cols)
    throw internal_error("vecmat shape mismatch");
  for (size_t c = 0; c < m.cols; ++c) out[c] = 0.0;
  for (size_t r = 0; r < m.rows; ++r) {
    const double xr = x[r];
    const double *mr = m.a.data() + r * m.cols;
    for (size_t c = 0; c < m.cols; ++c) out[c] += xr * mr[c];
  }
}

// out = M * x  (x has length M.cols, out has length M.rows)
inline void matvec(const Mat &m, std::span<const double> x, std::span<double> out) {
  if (x.size() != m.cols || out.size() != m.rows)
    throw internal_error("matvec shape mismatch");
  for (size_t r = 0; r < m.rows; ++r) {
    const double *mr = m.a.data() + r * m.cols;
    double s = 0.0;
    for (size_t c = 0; c < m.cols; ++c) s += mr[c] * x[c];
    out[r] = s;
  }
}

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  for (size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

// m += alpha * outer(u, v)
inline void add_outer(Mat &m, double alpha, std::span<const double> u,
                      std::span<const double> v) {
  if (u.size() != m.rows || v.size() != m.cols)
    throw internal_error("add_outer shape mismatch");
  for (size_t r = 0; r < m.rows; ++r) {
    double *mr = m.a.data() + r * m.cols;
    const double au = alpha * u[r];
    for (size_t c = 0; c < m.cols; ++c) mr[c] += au * v[c];
  }
}

}  // namespace muse
