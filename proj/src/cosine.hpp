#pragma once

#include "sgec/core.hpp"

namespace sgec {

// Rows scaled to unit length. Zero rows stay zero, so their cosine with
// anything is 0.
struct RowNormalized {
  Matrix unit;
  Vector norm;
};

inline RowNormalized normalize_rows(const Matrix& x) {
  RowNormalized out{Matrix::Zero(x.rows(), x.cols()), x.rowwise().norm()};
  for (Index r = 0; r < x.rows(); ++r) {
    if (out.norm[r] > 0.0) out.unit.row(r) = x.row(r) / out.norm[r];
  }
  return out;
}

// Pulls a gradient w.r.t. the unit rows back to the raw rows.
inline Matrix normalize_rows_backward(const Matrix& d_unit, const RowNormalized& n) {
  Matrix dx = Matrix::Zero(d_unit.rows(), d_unit.cols());
  for (Index r = 0; r < d_unit.rows(); ++r) {
    if (n.norm[r] <= 0.0) continue;
    const double radial = d_unit.row(r).dot(n.unit.row(r));
    dx.row(r) = (d_unit.row(r) - radial * n.unit.row(r)) / n.norm[r];
  }
  return dx;
}

}  // namespace sgec
