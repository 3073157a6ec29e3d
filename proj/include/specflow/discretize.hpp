#ifndef SPECFLOW_DISCRETIZE_HPP
#define SPECFLOW_DISCRETIZE_HPP

#include <functional>

#include "specflow/flow.hpp"
#include "specflow/spectral.hpp"
#include "specflow/symplectic.hpp"

namespace specflow {

/// Boundary condition for the first-order operator -J x' - B(t) x on [0, T],
/// always a Lagrangian of the doubled space for the endpoint pair
/// (x(0), x(T)).
struct BoundaryCondition {
    enum class Kind { Graph, Separated, General };
    Kind kind = Kind::Graph;
    Matrix S;            // Graph: x(0) = S x(T), S symplectic
    Matrix V0, V1;       // Separated: orthonormal Lagrangian frames, 2n x n
    Matrix frame;        // General: orthonormal 4n x 2n frame of the Lagrangian

    static BoundaryCondition graph(const Matrix& S);
    static BoundaryCondition separated(const LagrangianFrame& left, const LagrangianFrame& right);
    static BoundaryCondition general(const LagrangianFrame& lambda);

    /// The condition as a Lagrangian frame of the doubled space.
    LagrangianFrame lagrangian(int n) const;
};

/// Sturm-Liouville operator -(G(t) u')' + R(t) u on [0, T], u(t) in C^n,
/// with G(t) Hermitian invertible (definiteness not required) and R(t)
/// Hermitian.
struct SturmLiouvilleSystem {
    int n = 0;
    double T = 0.0;
    std::function<Matrix(double)> G, R;
};

struct SLBoundary {
    enum class Kind { Twisted, Dirichlet };
    Kind kind = Kind::Twisted;
    Complex omega = Complex(1.0, 0.0);  // unit modulus
    Matrix P;                           // invertible; u(0) = omega P u(T)

    static SLBoundary twisted(Complex omega, const Matrix& P);
    static SLBoundary dirichlet();
};

/// One assembled pencil on the boundary-constrained nodal space, together
/// with the layout metadata that symmetry constructions act through.
///
/// Unknown layouts (dense ordering = chain blocks then border block):
///   Wrapped:        nodes 1..M-1, then node 0; node M = wrap * node 0.
///   SeparatedEnds:  left coefficients (n), nodes 1..M-1, right coefficients.
///   Corner:         nodes 1..M-1, then the 2n coefficients c of the corner
///                   frame, (x_0, x_M) = frame * c.
///   DirichletEnds:  nodes 1..M-1 only.
struct DiscretizedOperator {
    enum class Layout { Wrapped, SeparatedEnds, Corner, DirichletEnds };
    enum class Source { Hamiltonian, SturmLiouville };

    int M = 0;            // grid intervals
    int node_dim = 0;     // unknowns per interior node
    double T = 0.0;
    Layout layout = Layout::Wrapped;
    Source source = Source::Hamiltonian;
    Matrix wrap;          // Wrapped: node M = wrap * node 0
    Matrix left_frame, right_frame;  // SeparatedEnds
    Matrix corner_frame;             // Corner: 2*node_dim x node_dim columns
    StructuredPencil pencil;
    /// Suggested kernel tolerance: large enough so that the discrete images
    /// of true kernel eigenvalues classify as kernel on this grid.
    double recommended_ktol = 0.0;

    /// Exact pure-gauge directions of the pencil (in the kernel of both the
    /// stiffness and the mass matrix): node-alternating modes that the
    /// midpoint test space cannot see.  They never influence inertia counts;
    /// dense eigensolves must restrict to reduction_basis() when
    /// gauge_dim > 0.
    int gauge_dim = 0;
    Matrix gauge;  // dim() x gauge_dim, orthonormal (empty when none)

    int dim() const { return pencil.dim(); }
    Matrix stiffness() const { return pencil.dense_stiffness(); }
    Matrix mass() const { return pencil.dense_mass(); }

    /// Orthonormal complement of the gauge, dim() x (dim() - gauge_dim).
    /// Materialized on demand: it is dense and only the dense eigenvalue
    /// route needs it, the structured count route skips the gauge by rank.
    Matrix reduction_basis() const;

    /// Offset/size of grid node j in the dense ordering; size 0 for nodes
    /// eliminated by the boundary condition.
    int node_offset(int j) const;
    int node_size(int j) const;
};

/// Discretization of -J x' - B(t) x: continuous piecewise-linear trial
/// functions on M+1 uniform nodes, tested at element midpoints (box scheme),
/// boundary imposed by elimination.  The midpoint test space gives the
/// monotone symbol 2 tan(kh/2)/h, so no spurious branch folds back into the
/// physical window; the alternating modes it cannot test become exact
/// (stiffness, mass) gauge pairs, reported through gauge/reduction.
/// The stiffness is Hermitized on the constrained space (exact: the
/// anti-Hermitian defect is the boundary symplectic pairing, which vanishes
/// on a Lagrangian).
DiscretizedOperator discretize_hamiltonian(const HamiltonianSystem& sys,
                                           const BoundaryCondition& bc, int M);

/// Flux-form discretization of -(G u')' + R u: G sampled at half-nodes,
/// R at nodes, lumped mass.  Twisted wrap requires G(T) = P^* G(0) P so the
/// constrained operator represents a self-adjoint problem.
DiscretizedOperator discretize_sturm_liouville(const SturmLiouvilleSystem& sys,
                                               const SLBoundary& bc, int M);

/// One-parameter families of the discretizations above, as structured or
/// dense Hermitian paths (the mass matrix depends only on the grid, never on
/// the parameter).
struct HamiltonianFamily {
    double s0 = 0.0, s1 = 1.0;
    std::function<HamiltonianSystem(double)> system;
};

struct SturmLiouvilleFamily {
    double s0 = 0.0, s1 = 1.0;
    std::function<SturmLiouvilleSystem(double)> system;
};

StructuredPath structured_path(const HamiltonianFamily& fam, const BoundaryCondition& bc, int M);
StructuredPath structured_path(const SturmLiouvilleFamily& fam, const SLBoundary& bc, int M);
HermitianPath dense_path(const HamiltonianFamily& fam, const BoundaryCondition& bc, int M);
HermitianPath dense_path(const SturmLiouvilleFamily& fam, const SLBoundary& bc, int M);

}

#endif
