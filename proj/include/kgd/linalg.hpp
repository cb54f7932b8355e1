#pragma once

#include <span>

#include "kgd/error.hpp"
#include "kgd/matrix.hpp"

namespace kgd {

/// Bandwidth used when every pairwise squared distance is identical.
inline constexpr double kBandwidthFloor = 1e-12;

/// Row-wise softmax with max subtraction. Throws EmptyInput on an empty matrix.
Matrix row_softmax(const Matrix& m);

enum class Diagonal { Zero, One };

/// Gaussian affinity between rows of `h`:
///   A_ij = exp(-|h_i - h_j|^2 / var),  var = population variance of the
/// off-diagonal squared distances (self-distances excluded). The diagonal is
/// set to 0 or 1 per `diag`. A zero variance falls back to kBandwidthFloor and
/// raises DegenerateBandwidth.
Matrix affinity(const Matrix& h, Diagonal diag, Diagnostics* diagnostics = nullptr);

/// D^{-1/2} A D^{-1/2} with D_ii = sum_j A_ij. Throws IsolatedNode on a zero degree.
Matrix sym_normalize(const Matrix& a);

/// Solves a·x = b by Gaussian elimination with partial pivoting.
Matrix solve(const Matrix& a, const Matrix& b);

/// (I - alpha·L)^{-1}, computed by a dense direct solve. alpha must be in (0,1).
Matrix smoothing_solve(const Matrix& l, double alpha);

/// Cosine similarity; throws ZeroVector if either input has zero norm.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

}  // namespace kgd
