#pragma once

#include "hsid/linalg.hpp"

#include <span>
#include <vector>

namespace hsid {

/// Number of monomials of total degree 1..degree in `dim` variables.
int monomial_count(int dim, int degree);

/// Monomials of `v` with total degree 1..degree in graded-lexicographic
/// order, e.g. (a, b, a^2, ab, b^2) for dim 2, degree 2. The constant term
/// is not included.
Vec monomials(const Vec& v, int degree);

/// Exponent tuples in the same order as monomials(); one row per monomial.
std::vector<std::vector<int>> monomial_exponents(int dim, int degree);

/// Dimension of the controller feature vector for the given shape.
int controller_feature_dim(int dx, int du, int lag, int poly_degree);

/// Controller features: monomials of x up to poly_degree followed by the
/// past controls u_{t-lag} .. u_{t-1} in chronological order.
Vec controller_features(const Vec& x, std::span<const Vec> past_us, int lag, int poly_degree);

/// Controller features at step t of a recorded control sequence (columns of
/// `us`); controls before the start of the sequence are zero.
Vec controller_features_at(const Vec& x, const Mat& us, Eigen::Index t, int lag, int poly_degree);

}  // namespace hsid
