#include "hsid/features.hpp"

#include <stdexcept>

namespace hsid {
namespace {

// Appends all exponent tuples of total degree `remaining` over variables
// [first, dim) to `out`, in lexicographic order (higher powers of earlier
// variables first).
void enumerate(int dim, int first, int remaining, std::vector<int>& current,
               std::vector<std::vector<int>>& out) {
  if (remaining == 0) {
    out.push_back(current);
    return;
  }
  if (first == dim) return;
  for (int p = remaining; p >= 0; --p) {
    current[first] = p;
    enumerate(dim, first + 1, remaining - p, current, out);
  }
  current[first] = 0;
}

}  // namespace

std::vector<std::vector<int>> monomial_exponents(int dim, int degree) {
  if (dim < 0 || degree < 1) {
    throw std::invalid_argument("monomial_exponents: need dim >= 0 and degree >= 1");
  }
  std::vector<std::vector<int>> out;
  std::vector<int> current(static_cast<std::size_t>(dim), 0);
  for (int d = 1; d <= degree; ++d) enumerate(dim, 0, d, current, out);
  return out;
}

int monomial_count(int dim, int degree) {
  // sum_{d=1}^{degree} C(dim + d - 1, d)
  long long total = 0;
  long long term = 1;
  for (int d = 1; d <= degree; ++d) {
    term = term * (dim + d - 1) / d;
    total += term;
  }
  return static_cast<int>(total);
}

Vec monomials(const Vec& v, int degree) {
  const int dim = static_cast<int>(v.size());
  if (degree == 1) return v;
  const auto exps = monomial_exponents(dim, degree);
  Vec out(static_cast<Eigen::Index>(exps.size()));
  for (std::size_t m = 0; m < exps.size(); ++m) {
    double prod = 1.0;
    for (int i = 0; i < dim; ++i) {
      for (int p = 0; p < exps[m][static_cast<std::size_t>(i)]; ++p) prod *= v[i];
    }
    out[static_cast<Eigen::Index>(m)] = prod;
  }
  return out;
}

int controller_feature_dim(int dx, int du, int lag, int poly_degree) {
  return monomial_count(dx, poly_degree) + lag * du;
}

Vec controller_features(const Vec& x, std::span<const Vec> past_us, int lag, int poly_degree) {
  if (lag < 0 || static_cast<int>(past_us.size()) != lag) {
    throw std::invalid_argument("controller_features: expected " + std::to_string(lag) +
                                " past controls, got " + std::to_string(past_us.size()));
  }
  const Vec poly = monomials(x, poly_degree);
  const Eigen::Index du = lag > 0 ? past_us[0].size() : 0;
  Vec phi(poly.size() + lag * du);
  phi.head(poly.size()) = poly;
  for (int l = 0; l < lag; ++l) {
    if (past_us[static_cast<std::size_t>(l)].size() != du) {
      throw std::invalid_argument("controller_features: inconsistent control dimension");
    }
    phi.segment(poly.size() + l * du, du) = past_us[static_cast<std::size_t>(l)];
  }
  return phi;
}

Vec controller_features_at(const Vec& x, const Mat& us, Eigen::Index t, int lag, int poly_degree) {
  const Vec poly = monomials(x, poly_degree);
  const Eigen::Index du = us.rows();
  Vec phi = Vec::Zero(poly.size() + lag * du);
  phi.head(poly.size()) = poly;
  for (int l = 0; l < lag; ++l) {
    const Eigen::Index src = t - lag + l;
    if (src >= 0) phi.segment(poly.size() + l * du, du) = us.col(src);
  }
  return phi;
}

}  // namespace hsid
