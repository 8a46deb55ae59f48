#pragma once

// Test-only reference computations. Nothing here calls into the library's
// numerical paths; each routine is the slow, obvious version of a quantity
// the library computes some other way.

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

namespace oracle {

/// Plane-stress bilinear quad stiffness on [0,1]^2 by 2x2 Gauss quadrature,
/// local nodes counterclockwise from the lower-left corner.
inline std::array<double, 64> quad_stiffness(double nu, double young) {
  const double g = 1.0 / std::sqrt(3.0);
  const double xi_n[4] = {-1, 1, 1, -1};
  const double eta_n[4] = {-1, -1, 1, 1};
  const double f = young / (1 - nu * nu);
  const double d[3][3] = {{f, f * nu, 0}, {f * nu, f, 0}, {0, 0, f * (1 - nu) / 2}};
  std::array<double, 64> k{};
  for (double xi : {-g, g}) {
    for (double eta : {-g, g}) {
      // element maps [-1,1]^2 onto a unit square: dx/dxi = 1/2, det J = 1/4
      double b[3][8] = {};
      for (int a = 0; a < 4; ++a) {
        const double dn_dxi = 0.25 * xi_n[a] * (1 + eta * eta_n[a]);
        const double dn_deta = 0.25 * eta_n[a] * (1 + xi * xi_n[a]);
        const double dn_dx = dn_dxi * 2.0;
        const double dn_dy = dn_deta * 2.0;
        b[0][2 * a] = dn_dx;
        b[1][2 * a + 1] = dn_dy;
        b[2][2 * a] = dn_dy;
        b[2][2 * a + 1] = dn_dx;
      }
      for (int r = 0; r < 8; ++r) {
        for (int c = 0; c < 8; ++c) {
          double s = 0;
          for (int p = 0; p < 3; ++p)
            for (int q = 0; q < 3; ++q) s += b[p][r] * d[p][q] * b[q][c];
          k[r * 8 + c] += s * 0.25;  // weight 1 * det J
        }
      }
    }
  }
  return k;
}

/// Gaussian elimination with partial pivoting on a dense copy.
inline std::vector<double> dense_solve(std::vector<std::vector<double>> a, std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
    if (std::abs(a[pivot][col]) < 1e-300) throw std::runtime_error("oracle: singular");
    std::swap(a[col], a[pivot]);
    std::swap(b[col], b[pivot]);
    for (std::size_t r = col + 1; r < n; ++r) {
      const double m = a[r][col] / a[col][col];
      if (m == 0) continue;
      for (std::size_t c = col; c < n; ++c) a[r][c] -= m * a[col][c];
      b[r] -= m * b[col];
    }
  }
  std::vector<double> x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t c = i + 1; c < n; ++c) s -= a[i][c] * x[c];
    x[i] = s / a[i][i];
  }
  return x;
}

struct DenseSystem {
  std::vector<std::vector<double>> k;  // full, unreduced
  std::vector<double> f;
};

/// Dense global assembly with the same node numbering the library documents:
/// node (col i, row j from top) = i*(nely+1)+j, element rows from the top.
inline DenseSystem dense_assemble(int nelx, int nely, const std::vector<double>& density,
                                  double penal, double nu, double young,
                                  const std::vector<std::pair<int, double>>& loads) {
  const auto ke = quad_stiffness(nu, young);
  const int ndof = 2 * (nelx + 1) * (nely + 1);
  DenseSystem sys{std::vector<std::vector<double>>(ndof, std::vector<double>(ndof, 0.0)),
                  std::vector<double>(ndof, 0.0)};
  for (int row = 0; row < nely; ++row) {
    for (int col = 0; col < nelx; ++col) {
      const int nodes[4] = {col * (nely + 1) + row + 1, (col + 1) * (nely + 1) + row + 1,
                            (col + 1) * (nely + 1) + row, col * (nely + 1) + row};
      int dofs[8];
      for (int a = 0; a < 4; ++a) {
        dofs[2 * a] = 2 * nodes[a];
        dofs[2 * a + 1] = 2 * nodes[a] + 1;
      }
      const double s = std::pow(density[row * nelx + col], penal);
      for (int a = 0; a < 8; ++a)
        for (int b = 0; b < 8; ++b) sys.k[dofs[a]][dofs[b]] += s * ke[a * 8 + b];
    }
  }
  for (const auto& [d, v] : loads) sys.f[d] += v;
  return sys;
}

/// Solves the dense system with the given DOFs removed; returns full U.
inline std::vector<double> dense_displacement(const DenseSystem& sys, const std::vector<int>& fixed) {
  const std::size_t n = sys.f.size();
  std::vector<bool> is_fixed(n, false);
  for (int d : fixed) is_fixed[d] = true;
  std::vector<std::size_t> free;
  for (std::size_t d = 0; d < n; ++d)
    if (!is_fixed[d]) free.push_back(d);
  std::vector<std::vector<double>> a(free.size(), std::vector<double>(free.size()));
  std::vector<double> b(free.size());
  for (std::size_t i = 0; i < free.size(); ++i) {
    b[i] = sys.f[free[i]];
    for (std::size_t j = 0; j < free.size(); ++j) a[i][j] = sys.k[free[i]][free[j]];
  }
  const auto x = dense_solve(a, b);
  std::vector<double> u(n, 0.0);
  for (std::size_t i = 0; i < free.size(); ++i) u[free[i]] = x[i];
  return u;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// O(N^2) sensitivity filter over all element pairs.
inline std::vector<double> brute_filter(int nelx, int nely, const std::vector<double>& x,
                                        const std::vector<double>& dc, double rmin) {
  const int n = nelx * nely;
  std::vector<double> out(n);
  for (int e = 0; e < n; ++e) {
    double num = 0, den = 0;
    for (int i = 0; i < n; ++i) {
      const double dr = e / nelx - i / nelx;
      const double dcol = e % nelx - i % nelx;
      const double h = std::max(0.0, rmin - std::sqrt(dr * dr + dcol * dcol));
      num += h * x[i] * dc[i];
      den += h;
    }
    out[e] = num / (x[e] * den);
  }
  return out;
}

/// Direct (non-separable) 5x5 Gaussian, sigma 1, half-sample symmetric borders.
inline std::vector<double> gaussian5_direct(const std::vector<double>& img, int w, int h) {
  double kernel[5][5];
  double total = 0;
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) {
      kernel[i][j] = std::exp(-((i - 2) * (i - 2) + (j - 2) * (j - 2)) / 2.0);
      total += kernel[i][j];
    }
  auto reflect = [](int i, int n) {
    while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
    return i;
  };
  std::vector<double> out(img.size(), 0.0);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      double s = 0;
      for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j)
          s += kernel[i][j] / total * img[reflect(r + i - 2, h) * w + reflect(c + j - 2, w)];
      out[r * w + c] = s;
    }
  return out;
}


/// Minibatch discrimination by triple loops: M_i = f_i T,
/// o(i)_b = sum_{j != i} exp(-|M_ib - M_jb|_1). f is n x a, T is a x (b*c).
struct Minibatch {
  int n, a, b, c;
  std::vector<double> m;  // n x b x c

  Minibatch(std::span<const double> f, std::span<const double> t, int n_, int a_, int b_, int c_)
      : n(n_), a(a_), b(b_), c(c_), m(static_cast<std::size_t>(n) * b * c, 0.0) {
    for (int i = 0; i < n; ++i)
      for (int q = 0; q < b * c; ++q)
        for (int r = 0; r < a; ++r) m[i * b * c + q] += f[i * a + r] * t[r * b * c + q];
  }

  double dist(int i, int j, int k) const {
    double d = 0;
    for (int q = 0; q < c; ++q) d += std::abs(m[(i * b + k) * c + q] - m[(j * b + k) * c + q]);
    return d;
  }

  std::vector<double> value() const {
    std::vector<double> o(static_cast<std::size_t>(n) * b, 0.0);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (j != i)
          for (int k = 0; k < b; ++k) o[i * b + k] += std::exp(-dist(i, j, k));
    return o;
  }

  /// Gradient of sum_ib w_ib o(i)_b with respect to f and T.
  std::pair<std::vector<double>, std::vector<double>> gradient(std::span<const double> f,
                                                               std::span<const double> t,
                                                               const std::vector<double>& w) const {
    std::vector<double> gm(m.size(), 0.0);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        if (j == i) continue;
        for (int k = 0; k < b; ++k) {
          const double e = std::exp(-dist(i, j, k));
          for (int q = 0; q < c; ++q) {
            const double diff = m[(i * b + k) * c + q] - m[(j * b + k) * c + q];
            const double sgn = diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0);
            // o(i) and o(j) both contain the (i, j) pair
            gm[(i * b + k) * c + q] -= (w[i * b + k] + w[j * b + k]) * e * sgn;
          }
        }
      }
    std::vector<double> gf(f.size(), 0.0), gt(t.size(), 0.0);
    for (int i = 0; i < n; ++i)
      for (int r = 0; r < a; ++r)
        for (int q = 0; q < b * c; ++q) {
          gf[i * a + r] += gm[i * b * c + q] * t[r * b * c + q];
          gt[r * b * c + q] += gm[i * b * c + q] * f[i * a + r];
        }
    return {gf, gt};
  }
};

}  // namespace oracle
