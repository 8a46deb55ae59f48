#include "topogan/fem.hpp"

#include <Eigen/Dense>
#include <Eigen/IterativeLinearSolvers>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "topogan/error.hpp"

namespace topogan::fem {

namespace {

constexpr double kSolveTolerance = 1e-8;

double element_energy(const ElementMatrix& ke, const std::array<double, 8>& ue) {
  double energy = 0.0;
  for (int r = 0; r < 8; ++r) {
    double row = 0.0;
    for (int c = 0; c < 8; ++c) row += ke[r * 8 + c] * ue[c];
    energy += ue[r] * row;
  }
  return energy;
}

std::array<double, 8> gather(const std::vector<double>& u, const std::array<int, 8>& dofs) {
  std::array<double, 8> ue{};
  for (int k = 0; k < 8; ++k) ue[k] = u[dofs[k]];
  return ue;
}

void check_shapes(const DensityField& density, const std::vector<double>& u,
                  const MeshSpec& mesh) {
  if (density.nelx != mesh.nelx || density.nely != mesh.nely ||
      density.values.size() != mesh.element_count()) {
    throw DimensionError("density field does not match mesh " + std::to_string(mesh.nelx) +
                         "x" + std::to_string(mesh.nely));
  }
  if (u.size() != mesh.dof_count()) {
    throw DimensionError("displacement has " + std::to_string(u.size()) + " entries, mesh has " +
                         std::to_string(mesh.dof_count()) + " DOFs");
  }
}

// The free mesh is connected and fully integrated, so its only zero-energy
// modes are the three rigid motions. The reduced system is singular exactly
// when some rigid motion leaves every fixed DOF at rest.
void check_rigid_modes(const MeshSpec& mesh, const std::vector<int>& fixed) {
  if (fixed.empty()) throw SingularSystemError("no fixed DOFs: reduced system is singular");
  Eigen::MatrixXd modes(static_cast<Eigen::Index>(fixed.size()), 3);
  for (std::size_t k = 0; k < fixed.size(); ++k) {
    const int node = fixed[k] / 2;
    const double x = node / (mesh.nely + 1);
    const double y = -static_cast<double>(node % (mesh.nely + 1));
    const auto r = static_cast<Eigen::Index>(k);
    if (fixed[k] % 2 == 0) {
      modes.row(r) << 1.0, 0.0, -y;
    } else {
      modes.row(r) << 0.0, 1.0, x;
    }
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(modes);
  lu.setThreshold(1e-10);
  if (lu.rank() < 3) {
    throw SingularSystemError("fixed DOFs do not suppress all rigid-body modes");
  }
}

}  // namespace

std::size_t MeshSpec::element_count() const {
  return static_cast<std::size_t>(nelx) * static_cast<std::size_t>(nely);
}

std::size_t MeshSpec::node_count() const {
  return static_cast<std::size_t>(nelx + 1) * static_cast<std::size_t>(nely + 1);
}

std::size_t MeshSpec::dof_count() const { return 2 * node_count(); }

void MeshSpec::validate() const {
  if (nelx < 1 || nely < 1) {
    throw DimensionError("mesh needs at least one element per axis, got " +
                         std::to_string(nelx) + "x" + std::to_string(nely));
  }
  if (!(young_modulus > 0.0)) throw ParameterError("Young's modulus must be positive");
  if (!(poisson_ratio >= 0.0 && poisson_ratio < 0.5)) {
    throw ParameterError("Poisson ratio must lie in [0, 0.5)");
  }
}

void SimpParams::validate() const {
  if (!(x_min > 0.0 && x_min <= volfrac && volfrac <= 1.0)) {
    throw ParameterError("need 0 < x_min <= volfrac <= 1");
  }
  if (!(penal >= 1.0)) throw ParameterError("penalization power must be >= 1");
  if (!(rmin > 0.0)) throw ParameterError("filter radius must be positive");
  if (!(move > 0.0)) throw ParameterError("move limit must be positive");
  if (!(change_tol > 0.0)) throw ParameterError("convergence tolerance must be positive");
  if (max_iters < 1) throw ParameterError("max_iters must be >= 1");
}

DensityField DensityField::uniform(const MeshSpec& mesh, double value) {
  return DensityField{mesh.nelx, mesh.nely, std::vector<double>(mesh.element_count(), value)};
}

double DensityField::mean() const {
  if (values.empty()) return 0.0;
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

int node_id(const MeshSpec& mesh, int col, int row) { return col * (mesh.nely + 1) + row; }

std::array<int, 8> element_dofs(const MeshSpec& mesh, int row, int col) {
  const int ll = node_id(mesh, col, row + 1);
  const int lr = node_id(mesh, col + 1, row + 1);
  const int ur = node_id(mesh, col + 1, row);
  const int ul = node_id(mesh, col, row);
  return {2 * ll, 2 * ll + 1, 2 * lr, 2 * lr + 1, 2 * ur, 2 * ur + 1, 2 * ul, 2 * ul + 1};
}

BoundaryConditions BoundaryConditions::cantilever(const MeshSpec& mesh, double magnitude) {
  mesh.validate();
  BoundaryConditions bc;
  for (int row = 0; row <= mesh.nely; ++row) {
    const int n = node_id(mesh, 0, row);
    bc.fixed_dofs.push_back(2 * n);
    bc.fixed_dofs.push_back(2 * n + 1);
  }
  // floor((nely + 1) / 2) counted from the bottom edge
  const int row_from_top = mesh.nely - (mesh.nely + 1) / 2;
  bc.loads.emplace_back(2 * node_id(mesh, mesh.nelx, row_from_top) + 1, magnitude);
  return bc;
}

void BoundaryConditions::validate(const MeshSpec& mesh) const {
  const int ndof = static_cast<int>(mesh.dof_count());
  if (fixed_dofs.empty()) throw ParameterError("boundary conditions fix no DOFs");
  for (int d : fixed_dofs) {
    if (d < 0 || d >= ndof) throw DimensionError("fixed DOF " + std::to_string(d) + " out of range");
  }
  for (const auto& [d, value] : loads) {
    if (d < 0 || d >= ndof) throw DimensionError("load DOF " + std::to_string(d) + " out of range");
    if (std::find(fixed_dofs.begin(), fixed_dofs.end(), d) != fixed_dofs.end()) {
      throw ParameterError("load applied at fixed DOF " + std::to_string(d));
    }
    if (!std::isfinite(value)) throw ParameterError("non-finite load value");
  }
}

ElementMatrix element_stiffness(double poisson_ratio, double young_modulus) {
  const double nu = poisson_ratio;
  if (!(nu >= 0.0 && nu < 0.5)) throw ParameterError("Poisson ratio must lie in [0, 0.5)");
  if (!(young_modulus > 0.0)) throw ParameterError("Young's modulus must be positive");

  const std::array<double, 8> k = {
      0.5 - nu / 6.0,          0.125 + nu / 8.0,  -0.25 - nu / 12.0, -0.125 + 3.0 * nu / 8.0,
      -0.25 + nu / 12.0,       -0.125 - nu / 8.0, nu / 6.0,          0.125 - 3.0 * nu / 8.0};
  // Index pattern of the closed-form unit-square element.
  static constexpr int kPattern[8][8] = {
      {0, 1, 2, 3, 4, 5, 6, 7}, {1, 0, 7, 6, 5, 4, 3, 2}, {2, 7, 0, 5, 6, 3, 4, 1},
      {3, 6, 5, 0, 7, 2, 1, 4}, {4, 5, 6, 7, 0, 1, 2, 3}, {5, 4, 3, 2, 1, 0, 7, 6},
      {6, 3, 4, 1, 2, 7, 0, 5}, {7, 2, 1, 4, 3, 6, 5, 0}};
  const double scale = young_modulus / (1.0 - nu * nu);
  ElementMatrix ke{};
  for (int r = 0; r < 8; ++r) {
    for (int c = 0; c < 8; ++c) ke[r * 8 + c] = scale * k[kPattern[r][c]];
  }
  return ke;
}

std::vector<double> assemble_and_solve(const DensityField& density, double penal,
                                       const MeshSpec& mesh, const BoundaryConditions& bc) {
  mesh.validate();
  bc.validate(mesh);
  const std::vector<double> zero(mesh.dof_count(), 0.0);
  check_shapes(density, zero, mesh);
  check_rigid_modes(mesh, bc.fixed_dofs);

  const int ndof = static_cast<int>(mesh.dof_count());
  std::vector<int> reduced_index(ndof, 0);
  for (int d : bc.fixed_dofs) reduced_index[d] = -1;
  int nfree = 0;
  for (int d = 0; d < ndof; ++d) {
    if (reduced_index[d] == 0) reduced_index[d] = nfree++;
  }

  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(nfree);
  for (const auto& [d, value] : bc.loads) rhs[reduced_index[d]] += value;
  std::vector<double> u(ndof, 0.0);
  const double rhs_norm = rhs.norm();
  if (rhs_norm == 0.0) return u;

  const ElementMatrix ke = element_stiffness(mesh.poisson_ratio, mesh.young_modulus);
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(mesh.element_count() * 64);
  for (int row = 0; row < mesh.nely; ++row) {
    for (int col = 0; col < mesh.nelx; ++col) {
      const double stiffness = std::pow(density.at(row, col), penal);
      const auto dofs = element_dofs(mesh, row, col);
      for (int a = 0; a < 8; ++a) {
        const int ra = reduced_index[dofs[a]];
        if (ra < 0) continue;
        for (int b = 0; b < 8; ++b) {
          const int rb = reduced_index[dofs[b]];
          if (rb < 0) continue;
          triplets.emplace_back(ra, rb, stiffness * ke[a * 8 + b]);
        }
      }
    }
  }
  Eigen::SparseMatrix<double> k(nfree, nfree);
  k.setFromTriplets(triplets.begin(), triplets.end());

  Eigen::ConjugateGradient<Eigen::SparseMatrix<double>, Eigen::Lower | Eigen::Upper,
                           Eigen::DiagonalPreconditioner<double>>
      cg;
  cg.setTolerance(kSolveTolerance * 1e-2);
  cg.setMaxIterations(std::max(2000, 20 * nfree));
  cg.compute(k);
  Eigen::VectorXd solution = cg.solve(rhs);
  double residual = (k * solution - rhs).norm() / rhs_norm;
  if (!solution.allFinite() || residual > kSolveTolerance) {
    // direct fallback, accepted on normwise backward error
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(k);
    if (ldlt.info() == Eigen::Success) {
      solution = ldlt.solve(rhs);
      double k_norm = 0.0;
      for (int c = 0; c < k.outerSize(); ++c) {
        double col = 0.0;
        for (Eigen::SparseMatrix<double>::InnerIterator it(k, c); it; ++it) col += std::abs(it.value());
        k_norm = std::max(k_norm, col);
      }
      residual = (k * solution - rhs).lpNorm<Eigen::Infinity>() /
                 (k_norm * solution.lpNorm<Eigen::Infinity>() + rhs.lpNorm<Eigen::Infinity>());
    }
  }
  if (!solution.allFinite() || residual > kSolveTolerance) {
    throw SolverError("linear solve did not reach relative residual 1e-8 (got " +
                          std::to_string(residual) + ")",
                      residual);
  }
  for (int d = 0; d < ndof; ++d) {
    if (reduced_index[d] >= 0) u[d] = solution[reduced_index[d]];
  }
  return u;
}

double compliance(const DensityField& density, const std::vector<double>& displacement,
                  double penal, const MeshSpec& mesh) {
  check_shapes(density, displacement, mesh);
  const ElementMatrix ke = element_stiffness(mesh.poisson_ratio, mesh.young_modulus);
  double c = 0.0;
  for (int row = 0; row < mesh.nely; ++row) {
    for (int col = 0; col < mesh.nelx; ++col) {
      const auto ue = gather(displacement, element_dofs(mesh, row, col));
      c += std::pow(density.at(row, col), penal) * element_energy(ke, ue);
    }
  }
  return std::max(c, 0.0);
}

std::vector<double> sensitivities(const DensityField& density,
                                  const std::vector<double>& displacement, double penal,
                                  const MeshSpec& mesh) {
  check_shapes(density, displacement, mesh);
  const ElementMatrix ke = element_stiffness(mesh.poisson_ratio, mesh.young_modulus);
  std::vector<double> dc(mesh.element_count(), 0.0);
  for (int row = 0; row < mesh.nely; ++row) {
    for (int col = 0; col < mesh.nelx; ++col) {
      const auto ue = gather(displacement, element_dofs(mesh, row, col));
      // k_0 is PSD; clip round-off so dc never turns positive
      const double energy = std::max(element_energy(ke, ue), 0.0);
      dc[static_cast<std::size_t>(row) * mesh.nelx + col] =
          -penal * std::pow(density.at(row, col), penal - 1.0) * energy;
    }
  }
  return dc;
}

std::vector<double> filter_sensitivities(const DensityField& density,
                                         const std::vector<double>& dc, double rmin,
                                         const MeshSpec& mesh) {
  if (!(rmin > 0.0)) throw ParameterError("filter radius must be positive");
  if (dc.size() != mesh.element_count() || density.values.size() != mesh.element_count()) {
    throw DimensionError("sensitivity vector does not match mesh");
  }
  const int reach = static_cast<int>(std::ceil(rmin)) - 1;
  std::vector<double> filtered(dc.size(), 0.0);
  for (int row = 0; row < mesh.nely; ++row) {
    for (int col = 0; col < mesh.nelx; ++col) {
      double weight_sum = 0.0;
      double acc = 0.0;
      for (int r = std::max(row - reach, 0); r <= std::min(row + reach, mesh.nely - 1); ++r) {
        for (int c = std::max(col - reach, 0); c <= std::min(col + reach, mesh.nelx - 1); ++c) {
          const double dist = std::hypot(static_cast<double>(r - row), static_cast<double>(c - col));
          const double h = std::max(0.0, rmin - dist);
          weight_sum += h;
          acc += h * density.at(r, c) * dc[static_cast<std::size_t>(r) * mesh.nelx + c];
        }
      }
      filtered[static_cast<std::size_t>(row) * mesh.nelx + col] =
          acc / (density.at(row, col) * weight_sum);
    }
  }
  return filtered;
}

DensityField oc_update(const DensityField& density, const std::vector<double>& dc,
                       const SimpParams& params) {
  params.validate();
  if (dc.size() != density.values.size()) throw DimensionError("sensitivity size mismatch");
  for (double g : dc) {
    if (!(g <= 0.0)) throw ParameterError("OC update requires non-positive sensitivities");
  }

  const std::size_t n = density.values.size();
  const double target = params.volfrac * static_cast<double>(n);
  DensityField next = density;

  auto apply = [&](double lambda) {
    double total = 0.0;
    for (std::size_t e = 0; e < n; ++e) {
      const double x = density.values[e];
      const double lower = std::max(params.x_min, x - params.move);
      const double upper = std::min(1.0, x + params.move);
      const double candidate = x * std::sqrt(-dc[e] / lambda);
      next.values[e] = std::clamp(candidate, lower, upper);
      total += next.values[e];
    }
    return total;
  };

  double lo = 1e-9;
  double hi = 1e9;
  // Volume is non-increasing in lambda; the bracket must straddle the target.
  const double slack = 1e-12 * static_cast<double>(n);
  if (apply(lo) < target - slack || apply(hi) > target + slack) {
    throw ConstraintError("volume fraction " + std::to_string(params.volfrac) +
                          " is not reachable within the move limit");
  }
  while ((hi - lo) / hi > 1e-6) {
    const double mid = std::sqrt(lo * hi);
    if (apply(mid) > target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  apply(lo);
  return next;
}

SolveResult run_simp(const MeshSpec& mesh, const SimpParams& params,
                     const BoundaryConditions& bc) {
  mesh.validate();
  params.validate();
  bc.validate(mesh);

  SolveResult result;
  result.density = DensityField::uniform(mesh, params.volfrac);
  for (int iter = 1; iter <= params.max_iters; ++iter) {
    const auto u = assemble_and_solve(result.density, params.penal, mesh, bc);
    result.compliance_history.push_back(compliance(result.density, u, params.penal, mesh));
    const auto dc = sensitivities(result.density, u, params.penal, mesh);
    const auto filtered = filter_sensitivities(result.density, dc, params.rmin, mesh);
    DensityField next = oc_update(result.density, filtered, params);

    double change = 0.0;
    for (std::size_t e = 0; e < next.values.size(); ++e) {
      change = std::max(change, std::abs(next.values[e] - result.density.values[e]));
    }
    result.density = std::move(next);
    result.iterations = iter;
    if (change < params.change_tol) {
      result.converged = true;
      break;
    }
  }
  return result;
}

}  // namespace topogan::fem
