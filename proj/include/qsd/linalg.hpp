#pragma once

// Thin LAPACK wrappers for the symmetric tridiagonal and bidiagonal problems
// behind the generator eigensolves.

#include <lapacke.h>

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "qsd/errors.hpp"

namespace qsd::linalg {

/// Singular values of an n×n bidiagonal matrix, descending.
///
/// `diag` has n entries and `off` n-1; `lower` selects sub- vs super-diagonal.
/// Values are computed without vectors, which LAPACK does to high relative
/// accuracy even for strongly graded matrices.
inline std::vector<double> bidiagonal_singular_values(std::vector<double> diag,
                                                      std::vector<double> off, bool lower) {
  const auto n = static_cast<lapack_int>(diag.size());
  if (n == 0) return {};
  if (off.size() + 1 != diag.size()) throw Error("bidiagonal: off-diagonal length must be n-1");
  off.resize(std::max<std::size_t>(diag.size(), 1));
  double dummy = 0.0;
  const lapack_int info = LAPACKE_dbdsqr(LAPACK_COL_MAJOR, lower ? 'L' : 'U', n, 0, 0, 0,
                                         diag.data(), off.data(), &dummy, 1, &dummy, 1, &dummy, 1);
  if (info != 0) throw Error("dbdsqr failed, info=" + std::to_string(info));
  return diag;
}

struct TridiagonalEigen {
  std::vector<double> values;  // ascending
  Eigen::MatrixXd vectors;     // column j pairs with values[j]
};

/// Eigenpairs il..iu (1-based, ascending) of a symmetric tridiagonal matrix
/// by MRRR (dstemr).
inline TridiagonalEigen symmetric_tridiagonal_eigen(std::span<const double> diag,
                                                    std::span<const double> off, int il, int iu,
                                                    bool want_vectors = true) {
  const auto n = static_cast<lapack_int>(diag.size());
  if (n == 0) return {};
  if (off.size() + 1 != diag.size()) throw Error("tridiagonal: off-diagonal length must be n-1");
  if (il < 1 || iu > n || il > iu) throw Error("tridiagonal: bad eigenvalue index range");
  std::vector<double> d(diag.begin(), diag.end());
  std::vector<double> e(off.begin(), off.end());
  e.push_back(0.0);
  const lapack_int count = iu - il + 1;
  std::vector<double> w(static_cast<std::size_t>(n));
  TridiagonalEigen out;
  if (want_vectors) out.vectors.resize(n, count);
  std::vector<lapack_int> isuppz(2 * static_cast<std::size_t>(std::max<lapack_int>(count, 1)));
  lapack_int m = 0;
  lapack_logical tryrac = 1;
  double dummy = 0.0;
  const lapack_int info = LAPACKE_dstemr(
      LAPACK_COL_MAJOR, want_vectors ? 'V' : 'N', 'I', n, d.data(), e.data(), 0.0, 0.0, il, iu, &m,
      w.data(), want_vectors ? out.vectors.data() : &dummy, want_vectors ? n : 1, count,
      isuppz.data(), &tryrac);
  if (info != 0) throw Error("dstemr failed, info=" + std::to_string(info));
  if (m != count) throw Error("dstemr returned an unexpected number of eigenpairs");
  out.values.assign(w.begin(), w.begin() + m);
  return out;
}

}  // namespace qsd::linalg
