#pragma once

// Plane-stress finite elements on a regular grid of unit square bilinear
// quadrilaterals, and SIMP compliance minimization driven by optimality
// criteria updates.
//
// Conventions used throughout:
//  - elements are stored row-major with row 0 at the top of the domain,
//    element e = row * nelx + col;
//  - node (col i, row j) has id i * (nely + 1) + j, rows counted from the top;
//  - node id n owns DOFs 2n (x) and 2n + 1 (y, positive upward);
//  - local element node order is counterclockwise from the lower-left corner.

#include <array>
#include <cstddef>
#include <utility>
#include <vector>

namespace topogan::fem {

using ElementMatrix = std::array<double, 64>;  // 8x8, row-major

struct MeshSpec {
  int nelx = 0;
  int nely = 0;
  double young_modulus = 1.0;
  double poisson_ratio = 0.3;

  std::size_t element_count() const;
  std::size_t node_count() const;
  std::size_t dof_count() const;
  /// Throws DimensionError / ParameterError when the mesh is unusable.
  void validate() const;
};

struct SimpParams {
  double volfrac = 0.5;
  double penal = 3.0;
  double rmin = 1.5;
  double x_min = 1e-3;
  double move = 0.2;
  double change_tol = 0.01;
  int max_iters = 200;

  void validate() const;
};

struct DensityField {
  int nelx = 0;
  int nely = 0;
  std::vector<double> values;

  static DensityField uniform(const MeshSpec& mesh, double value);
  double& at(int row, int col) { return values[static_cast<std::size_t>(row) * nelx + col]; }
  double at(int row, int col) const { return values[static_cast<std::size_t>(row) * nelx + col]; }
  double mean() const;
};

struct BoundaryConditions {
  std::vector<int> fixed_dofs;
  std::vector<std::pair<int, double>> loads;

  /// Left edge clamped, unit downward load at the middle node of the right
  /// edge. For odd nely the upper of the two middle nodes is loaded.
  static BoundaryConditions cantilever(const MeshSpec& mesh, double magnitude = -1.0);
  void validate(const MeshSpec& mesh) const;
};

struct SolveResult {
  DensityField density;
  std::vector<double> compliance_history;
  int iterations = 0;
  bool converged = false;
};

/// Global DOF indices of element (row, col) in local node order.
std::array<int, 8> element_dofs(const MeshSpec& mesh, int row, int col);

/// Node id of (col, row-from-top).
int node_id(const MeshSpec& mesh, int col, int row);

/// Closed-form stiffness of the unit bilinear plane-stress quad.
ElementMatrix element_stiffness(double poisson_ratio, double young_modulus);

/// Solves K(x) U = F with element stiffness scaled by x_e^p. Returned U has
/// zeros at the fixed DOFs.
std::vector<double> assemble_and_solve(const DensityField& density, double penal,
                                       const MeshSpec& mesh, const BoundaryConditions& bc);

double compliance(const DensityField& density, const std::vector<double>& displacement,
                  double penal, const MeshSpec& mesh);

/// dc/dx_e = -p x_e^(p-1) u_e^T k_0 u_e.
std::vector<double> sensitivities(const DensityField& density,
                                  const std::vector<double>& displacement, double penal,
                                  const MeshSpec& mesh);

/// Mesh-independency filter: weighted average of x_i dc_i over the
/// rmin-neighborhood, divided by x_e.
std::vector<double> filter_sensitivities(const DensityField& density,
                                         const std::vector<double>& dc, double rmin,
                                         const MeshSpec& mesh);

/// Optimality-criteria update with bisection on the volume multiplier.
DensityField oc_update(const DensityField& density, const std::vector<double>& dc,
                       const SimpParams& params);

SolveResult run_simp(const MeshSpec& mesh, const SimpParams& params,
                     const BoundaryConditions& bc);

}  // namespace topogan::fem
