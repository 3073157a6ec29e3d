#ifndef SPECFLOW_SYMPLECTIC_HPP
#define SPECFLOW_SYMPLECTIC_HPP

#include <functional>
#include <vector>

#include "specflow/types.hpp"
#include "specflow/errors.hpp"

namespace specflow {

/// Complex symplectic vector space with a fixed structure matrix.
///
/// Convention used throughout: the inner product (u, v) = v^* u is linear in
/// the first argument, and the symplectic form is omega(x, y) = (J x, y),
/// i.e. omega(x, y) = y^* J x.  The structure matrix satisfies J^* = -J and
/// J^2 = -I.
class SymplecticForm {
public:
    /// Standard form on C^{2n}: J = [[0, -I_n], [I_n, 0]].
    static SymplecticForm standard(int n);

    /// Product form (-omega) x (omega) on C^{2n} + C^{2n}, the natural home
    /// of graph Lagrangians of symplectic maps.  Structure matrix
    /// diag(-J_{2n}, J_{2n}).
    static SymplecticForm doubled(int n);

    int dim() const { return static_cast<int>(J_.rows()); }
    /// Dimension of a Lagrangian subspace (= dim / 2).
    int lagrangian_dim() const { return dim() / 2; }
    const Matrix& J() const { return J_; }

    Complex omega(const Vector& x, const Vector& y) const { return y.dot(J_ * x); }

private:
    explicit SymplecticForm(Matrix J) : J_(std::move(J)) {}
    Matrix J_;
};

/// Standard structure matrix [[0, -I_n], [I_n, 0]] on C^{2n}.
Matrix standard_J(int n);

/// Frobenius-normalized residual of M^* J M - J.
double symplectic_residual(const SymplecticForm& form, const Matrix& M);
/// Frobenius-normalized residual of M^* J M + J.
double anti_symplectic_residual(const SymplecticForm& form, const Matrix& M);

bool is_symplectic(const SymplecticForm& form, const Matrix& M, double tol = 1e-10);
bool is_anti_symplectic(const SymplecticForm& form, const Matrix& M, double tol = 1e-10);

/// Convenience overloads for the standard form of matching size.
bool is_symplectic(const Matrix& M, double tol = 1e-10);
bool is_anti_symplectic(const Matrix& M, double tol = 1e-10);

/// Subspace of C^d held as an orthonormal column basis (possibly 0-dimensional).
class Subspace {
public:
    Subspace() = default;

    /// Span of the given columns; the numerical rank is decided by the
    /// relative singular-value cutoff.
    static Subspace from_columns(const Matrix& cols, double rank_tol = 1e-12);

    /// Span of the given columns, which must be numerically independent.
    static Subspace span(const Matrix& cols, double rank_tol = 1e-10);

    int ambient_dim() const { return static_cast<int>(U_.rows()); }
    int dim() const { return static_cast<int>(U_.cols()); }
    const Matrix& basis() const { return U_; }
    Matrix projector() const { return U_ * U_.adjoint(); }

private:
    Matrix U_;
};

/// Orthonormalized basis of a Lagrangian subspace with respect to a given
/// symplectic form.  Construction fails unless the columns have full rank n
/// and satisfy the isotropy condition U^* J U = 0 up to tolerance.
class LagrangianFrame {
public:
    LagrangianFrame(const SymplecticForm& form, const Matrix& columns, double tol = 1e-8);

    int ambient_dim() const { return static_cast<int>(U_.rows()); }
    int dim() const { return static_cast<int>(U_.cols()); }
    const Matrix& basis() const { return U_; }
    Matrix projector() const { return U_ * U_.adjoint(); }
    Subspace subspace() const { return Subspace::span(U_); }
    /// Frobenius norm of U^* J U after orthonormalization.
    double isotropy_residual() const { return isotropy_; }

private:
    Matrix U_;
    double isotropy_ = 0.0;
};

/// Lagrangian {(v, P v)} of the doubled form, the graph of a symplectic map.
LagrangianFrame graph_lagrangian(const SymplecticForm& doubled, const Matrix& P, double tol = 1e-8);

/// Lagrangian of the doubled form encoding the boundary condition
/// x(0) = S x(T), i.e. the set {(S w, w)}.
LagrangianFrame boundary_graph(const SymplecticForm& doubled, const Matrix& S, double tol = 1e-8);

/// Lagrangian of the doubled form encoding separated boundary conditions
/// x(0) in V0, x(T) in V1 for Lagrangians V0, V1 of the single space.
LagrangianFrame boundary_separated(const SymplecticForm& doubled,
                                   const LagrangianFrame& V0,
                                   const LagrangianFrame& V1,
                                   double tol = 1e-8);

/// Eigenspace ker(N - sign*I) of an anti-symplectic involution, certified
/// Lagrangian.  sign must be +1 or -1.
LagrangianFrame reflection_eigenspace(const SymplecticForm& form, const Matrix& N,
                                      int sign, double tol = 1e-8);

/// dim(span(U1) cap span(U2)) counted through principal angles: the number of
/// singular values of U1^* U2 within tol of 1.
int intersection_dimension(const Subspace& a, const Subspace& b, double tol = 1e-8);
int intersection_dimension(const LagrangianFrame& a, const LagrangianFrame& b, double tol = 1e-8);

/// Gap metric ||P_a - P_b|| in the spectral norm.
double gap_distance(const Subspace& a, const Subspace& b);
double gap_distance(const LagrangianFrame& a, const LagrangianFrame& b);

/// One generalized eigenspace of a matrix: a cluster of eigenvalues together
/// with an orthonormal basis of the associated invariant subspace.
struct GeneralizedEigenspace {
    Complex lambda;                      // cluster centroid
    std::vector<Complex> eigenvalues;    // cluster members from the Schur diagonal
    Matrix basis;                        // orthonormal columns
    int algebraic_multiplicity() const { return static_cast<int>(eigenvalues.size()); }
};

/// Full decomposition of C^d into generalized eigenspaces of one matrix.
struct MatrixLikeDecomposition {
    std::vector<GeneralizedEigenspace> spaces;
    double cluster_radius = 0.0;   // absolute radius used for clustering
    int dim = 0;
};

/// Generalized eigenspaces via complex Schur form with eigenvalue-cluster
/// reordering.  Eigenvalues closer than cluster_tol * ||g|| are merged
/// transitively into one cluster; a surviving inter-cluster gap below four
/// times the merge radius raises ToleranceError.
MatrixLikeDecomposition generalized_eigenspaces(const Matrix& g, double cluster_tol = 1e-8);

/// Orthonormal basis of the invariant subspace of g spanned by the
/// generalized eigenspaces whose eigenvalue satisfies the predicate.
Matrix invariant_subspace(const Matrix& g, const std::function<bool(Complex)>& select,
                          double cluster_tol = 1e-8);

/// One group of the spectral pairing of an equivariance matrix: either a
/// single cluster on the unit circle, or the union of a cluster at lambda
/// with its partner cluster at 1/conj(lambda).
struct SpectralGroup {
    bool on_circle = false;
    std::vector<int> members;   // indices into MatrixLikeDecomposition::spaces
    Matrix basis;               // orthonormal basis of the group span
};

struct SpectralGrouping {
    std::vector<SpectralGroup> groups;
    Matrix off_circle_basis;    // orthonormal basis of the span of all off-circle groups
};

/// Groups the clusters of a decomposition by the pairing lambda <-> 1/conj(lambda).
/// Clusters within circle_tol of the unit circle stand alone; every other
/// cluster must find its partner within pairing_tol or ToleranceError is
/// raised.  Clusters in the ambiguity band around the circle raise
/// ToleranceError as well.
SpectralGrouping group_spectral_pairs(const MatrixLikeDecomposition& dec,
                                      double circle_tol = 1e-8,
                                      double pairing_tol = 1e-6);

struct EigenvaluePairing {
    Complex lambda;
    Complex partner;            // nearest cluster to -1/conj(lambda)
    int algebraic = 0, partner_algebraic = 0;
    int geometric = 0, partner_geometric = 0;
};

/// Spectral symmetry report for an anti-symplectic matrix: each eigenvalue
/// lambda paired with -1/conj(lambda) with matching multiplicities, and
/// J-orthogonality (J x, y) = 0 between generalized eigenspaces at lambda,
/// mu with lambda * conj(mu) != -1.
struct AntiSymplecticSpectrumReport {
    bool spectrum_paired = false;
    double max_j_orthogonality = 0.0;   // worst normalized residual over exempt pairs
    std::vector<EigenvaluePairing> pairs;
};

AntiSymplecticSpectrumReport anti_symplectic_spectrum_check(const Matrix& N, double tol = 1e-8);

}

#endif
