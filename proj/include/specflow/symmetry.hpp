#ifndef SPECFLOW_SYMMETRY_HPP
#define SPECFLOW_SYMMETRY_HPP

#include <vector>

#include "specflow/discretize.hpp"
#include "specflow/spectral.hpp"
#include "specflow/symplectic.hpp"

namespace specflow {

/// One of the supported operator symmetries, described by its coefficient
/// matrices.  The wrap matrix of a shifted or reflected boundary condition is
/// never stored here: it already lives in the discretized operator, and a
/// second copy could only disagree with it.
struct SymmetrySpec {
    enum class Case {
        PointwiseP,         // (g x)(t) = P x(t)
        ZkShift,            // (g x)(t) = P x(t + T/k), wrapped through the boundary
        Brake,              // (g x)(t) = N x(T - t)
        HeteroclinicBrake,  // same reflection, interval centered at 0
    };

    Case kind = Case::PointwiseP;
    Matrix P;                  // PointwiseP / ZkShift factor
    Matrix N;                  // Brake reflection factor
    int k = 1;                 // ZkShift order
    Complex omega{1.0, 0.0};   // twist carried along for iteration checks

    static SymmetrySpec pointwise(const Matrix& P);
    static SymmetrySpec shift(const Matrix& P, int k);
    static SymmetrySpec brake(const Matrix& N);
};

/// Matrix realization of a symmetry on the boundary-constrained nodal space
/// of one discretization.  `nodal` acts on the full constrained space;
/// `matrix` acts in the coordinates of the dense Hermitian path, which is the
/// gauge-reduced space whenever the operator carries gauge directions (the
/// symmetry is certified to preserve them, so it descends).
struct DiscreteSymmetry {
    SymmetrySpec::Case kind = SymmetrySpec::Case::PointwiseP;
    Matrix matrix;
    Matrix nodal;
    int M = 0;
    int node_dim = 0;
    DiscretizedOperator::Layout layout = DiscretizedOperator::Layout::Wrapped;

    Matrix adjoint() const { return matrix.adjoint(); }
    int dim() const { return static_cast<int>(matrix.rows()); }
};

/// Builds the nodal realization of the symmetry and certifies that it
/// preserves the constrained space: the pointwise factor must commute with
/// the wrap (or fix the boundary subspaces), the shift needs k | M, the
/// reflection needs an even M and compatible boundary data.  First-order
/// Hamiltonian operators additionally require P symplectic / N
/// anti-symplectic, which is what makes the derivative term equivariant.
DiscreteSymmetry build_symmetry(const SymmetrySpec& spec, const DiscretizedOperator& disc,
                                double tol = 1e-8);

struct EquivarianceReport {
    bool passed = false;
    double max_residual = 0.0;
    double tol = 0.0;
};

/// Certifies g^* A(s) g = A(s) on Chebyshev samples of the parameter range.
/// Only the stiffness is constrained: in the discrete inner product the mass
/// cancels out of the adjoint, so equivariance of the assembled form is the
/// whole condition.
EquivarianceReport check_equivariance(const DiscreteSymmetry& g, const HermitianPath& path,
                                      int samples = 9, double tol = 1e-8);

/// Compression s -> U^* A(s) U onto an orthonormal column basis.  A mass
/// matrix is compressed alongside, which keeps generalized pencils
/// generalized.
HermitianPath compress(const HermitianPath& path, const Matrix& U);

/// Pairing report between the generalized eigenspaces of an equivariance
/// matrix: blocks U_i^* A U_j must vanish whenever lambda_i * conj(lambda_j)
/// is away from 1, and the kernel of A must split across the eigenspaces.
struct OrthogonalityReport {
    double max_pairing_residual = 0.0;   // worst ||U_i^* A U_j|| / ||A||
    int pairs_checked = 0;               // non-exempt ordered pairs
    bool pairing_ok = false;
    int kernel_dim = 0;
    std::vector<int> kernel_split;       // dim(ker A  intersect  H_i), per space
    bool kernel_decomposes = false;      // split sums to kernel_dim
    bool passed = false;
};

OrthogonalityReport a_orthogonality_check(const Matrix& A, const MatrixLikeDecomposition& dec,
                                          double tol = 1e-8);

/// One term of the symmetry decomposition of a spectral flow: either a
/// unit-circle eigenvalue group with its own flow, or a hyperbolic pair
/// group whose flow reduces to half the kernel-dimension change.
struct BlockFlow {
    bool on_circle = false;
    std::vector<Complex> eigenvalues;    // cluster centroids in the group
    int dim = 0;
    int sf = 0;
    int kernel_start = 0, kernel_end = 0;
    SfReport detail;                     // populated for circle blocks
};

struct DecompositionReport {
    std::vector<BlockFlow> blocks;
    int hat_dim = 0;                     // union of all hyperbolic groups
    int hat_kernel_start = 0, hat_kernel_end = 0;
    int hat_term = 0;                    // (end - start) / 2
    int total = 0;                       // circle flows + hat term
    SfReport direct;                     // flow of the uncompressed path
    int residual = 0;                    // total - direct.sf, 0 when the identity holds
};

struct DecomposeOptions {
    SfOptions sf;                        // forwarded to every flow evaluation
    int samples = 9;                     // equivariance certification samples
    double tol = 1e-8;                   // equivariance tolerance
    double cluster_tol = 1e-8;           // eigenvalue clustering of g
    double circle_tol = 1e-8;            // |.|=1 classification band
    double pairing_tol = 1e-6;           // lambda <-> 1/conj(lambda) matching
};

/// Splits the flow of an equivariant path across the spectral groups of the
/// symmetry: full flow = sum of unit-circle block flows + half the kernel
/// change on the union of hyperbolic groups.  Equivariance is re-certified
/// on entry; an odd kernel change on the hyperbolic union means a broken
/// precondition and raises IdentityError.  The identity residual itself is
/// reported, not thrown: callers assert it.
DecompositionReport decompose_spectral_flow(const HermitianPath& path, const DiscreteSymmetry& g,
                                            const DecomposeOptions& opts = {});

}

#endif
