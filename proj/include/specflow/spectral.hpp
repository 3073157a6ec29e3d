#ifndef SPECFLOW_SPECTRAL_HPP
#define SPECFLOW_SPECTRAL_HPP

#include <functional>
#include <vector>

#include "specflow/types.hpp"
#include "specflow/errors.hpp"

namespace specflow {

/// Continuous path s -> A(s) of Hermitian d x d matrices on [s0, s1],
/// optionally generalized against a fixed Hermitian positive definite mass
/// matrix (eigenvalue problem A(s) x = lambda * mass * x).
struct HermitianPath {
    double s0 = 0.0, s1 = 1.0;
    int dim = 0;
    std::function<Matrix(double)> A;
    Matrix mass;                        // empty => identity
    bool has_mass() const { return mass.size() != 0; }
};

struct SfOptions {
    /// Eigenvalues within ktol of zero at an endpoint count as kernel.
    /// Negative => 1e-8 times the endpoint spectral scale.
    double ktol = -1.0;
    /// When > 1, certification: no endpoint eigenvalue magnitude may fall in
    /// (ktol, guard_factor * ktol], otherwise the kernel classification is
    /// declared untrustworthy (ToleranceError).
    double guard_factor = 0.0;
    /// When > 0, the report carries a diagnostic sweep of negative-eigenvalue
    /// counts at this many uniform parameter samples.
    int trace_samples = 0;
};

struct SfSample {
    double s = 0.0;
    int negatives = 0;                  // eigenvalues below -epsilon
};

/// Result of a spectral-flow evaluation.  The flow is realized through
/// endpoint counting: with epsilon below every nonzero endpoint eigenvalue
/// magnitude, every eigenvalue curve that crosses zero on the half-open
/// parameter interval also crosses the -epsilon line, and the net number of
/// such crossings telescopes to the difference of endpoint counts.
struct SfReport {
    int sf = 0;
    int count_start = 0, count_end = 0;      // eigenvalues < -epsilon
    int kernel_start = 0, kernel_end = 0;    // |eigenvalue| <= ktol
    double epsilon = 0.0;
    double ktol = 0.0;
    double min_nonkernel = 0.0;              // smallest endpoint |eig| above ktol
    std::vector<SfSample> trace;
};

/// Spectral flow sf = N_{<-eps}(A(s0)) - N_{<-eps}(A(s1)) with
/// eps = half the smallest endpoint eigenvalue magnitude exceeding ktol.
/// Kernel eigenvalues (|. | <= ktol) are never counted below -eps.
/// Raises ToleranceError when eps <= ktol (no trustworthy window) and,
/// with guard_factor set, when an eigenvalue lands in the guard band.
SfReport spectral_flow(const HermitianPath& path, const SfOptions& opts = {});

/// Index of A relative to A - B: minus the spectral flow of s -> A - s B
/// over [0, 1].  Equals the Morse index of A - B when A is positive definite.
int relative_morse_index(const Matrix& A, const Matrix& B, const SfOptions& opts = {});

/// Same relative index for a generalized pencil: the path is measured against
/// the fixed mass matrix (empty => identity).
int relative_morse_index(const Matrix& A, const Matrix& B, const Matrix& mass,
                         const SfOptions& opts = {});

/// Number of eigenvalues below -ktol (negative => 1e-8 * ||A||).
int morse_index(const Matrix& A, double ktol = -1.0);

/// Hermitian pencil (K, mass) with block tridiagonal chain structure plus an
/// optional border block coupled to arbitrary chain positions.  This is the
/// shape produced by one-dimensional discretizations: separated boundary
/// conditions give a pure chain, wrapped (graph/twisted) conditions give a
/// chain plus one border block carrying the corner couplings.
struct StructuredPencil {
    std::vector<Matrix> Kdiag, Mdiag;   // chain diagonal blocks
    std::vector<Matrix> Ksub, Msub;     // block (j+1, j); size chain-1
    Matrix Kborder, Mborder;            // border diagonal block (empty => none)
    std::vector<Matrix> Kbcol, Mbcol;   // block (chain j, border); empty where absent

    /// Dimension of the common kernel of K and mass (directions that are
    /// exact zeros of K - t * mass for every t).  After a successful
    /// elimination their inertia contribution sits in the final pivot block,
    /// so count_below discards that many smallest-magnitude eigenvalues of
    /// the final block by rank instead of trusting a magnitude threshold,
    /// which rounding noise can exceed near pencil eigenvalues.
    int gauge_dim = 0;

    bool has_border() const { return Kborder.size() != 0; }
    int chain_size() const { return static_cast<int>(Kdiag.size()); }
    int dim() const;

    /// Rough magnitude of the largest pencil eigenvalue, ||K||_F / ||mass||_F.
    double eigenvalue_scale() const;

    double stiffness_norm() const;  // Frobenius norm of K
    double mass_norm() const;       // Frobenius norm of mass

    Matrix dense_stiffness() const;
    Matrix dense_mass() const;

    /// K * X (resp. mass * X) using the block structure; empty blocks act as
    /// zero.  Cost O(chain * block^2 * cols), no dense matrix is formed.
    Matrix apply_stiffness(const Matrix& X) const;
    Matrix apply_mass(const Matrix& X) const;

    /// Number of pencil eigenvalues below t, computed as the negative inertia
    /// of K - t * mass by block elimination along the chain with the border
    /// block eliminated last (Schur complement).  Cost O(chain * block^3).
    /// Ties within ~1e-9 relative of t may be resolved to either side.
    int count_below(double t) const;
};

/// Path of structured pencils sharing one layout, for spectral flow of large
/// discretized families without dense eigensolves.
struct StructuredPath {
    double s0 = 0.0, s1 = 1.0;
    std::function<StructuredPencil(double)> at;
};

/// Same semantics as the dense overload; all endpoint counts and the
/// epsilon-window search are performed through inertia bisection.
SfReport spectral_flow(const StructuredPath& path, const SfOptions& opts = {});

}

#endif
