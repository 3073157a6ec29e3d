#ifndef SPECFLOW_ITERATION_HPP
#define SPECFLOW_ITERATION_HPP

#include <string>
#include <vector>

#include "specflow/discretize.hpp"
#include "specflow/maslov.hpp"
#include "specflow/symmetry.hpp"

namespace specflow {

/// Base data of one iteration identity: a coefficient family on a finite
/// interval, the ambient boundary condition, and the symmetry factors.  The
/// fundamental domain is always the leading 1/k (or 1/2 for a reflection) of
/// the interval; its induced boundary conditions are derived on the fly from
/// the factors, never stored, so the two sides of an identity cannot drift
/// apart.
struct IterationProblem {
    HamiltonianFamily family;    // parameter family, used by the spectral-flow side
    HamiltonianSystem system;    // single coefficient, used by the Maslov side
    BoundaryCondition bc;        // ambient boundary condition on the full interval
    Matrix P;                    // shift factor
    Matrix N;                    // reflection factor
    int k = 1;                   // shift order
};

/// Shift-symmetric family under the graph condition x(0) = S x(T):
/// (g x)(t) = P x(t + T/k) wrapped through the boundary.
IterationProblem shift_problem(const HamiltonianFamily& family, const Matrix& S,
                               const Matrix& P, int k);

/// Single system for the graph iteration identity; the iteration count is
/// passed to the check itself.
IterationProblem bott_problem(const HamiltonianSystem& system, const Matrix& S,
                              const Matrix& P);

/// Single system with reflection factor N; bc may be a graph or a separated
/// condition.
IterationProblem brake_problem(const HamiltonianSystem& system, const BoundaryCondition& bc,
                               const Matrix& N);

/// One right-hand summand of an identity, with the engine report that
/// produced it.
struct IterationTerm {
    std::string label;
    Complex root{1.0, 0.0};
    int value = 0;
    bool has_maslov = false;
    MaslovReport maslov;
    bool has_sf = false;
    SfReport sf;
};

/// Two independently computed sides of an integer identity.  On valid input
/// the residual is exactly zero; a nonzero residual is reported, not thrown,
/// so deliberate violations stay observable.
struct IdentityReport {
    int lhs = 0;
    std::vector<IterationTerm> lhs_blocks;  // per-root ambient blocks (fundamental-domain
                                            // check only; lhs is their sum)
    std::vector<IterationTerm> rhs;
    int rhs_sum = 0;
    int residual = 0;                       // lhs - rhs_sum
    bool terms_match = true;                // per-root equality when lhs_blocks is used
    bool has_lhs_maslov = false;
    MaslovReport lhs_maslov;
    bool has_lhs_sf = false;
    SfReport lhs_sf;
    double s_max_used = 0.0;                // stabilized range end (geodesic check)
    double truncation_used = 0.0;           // half-line cut (heteroclinic / homoclinic)
    bool passed() const { return residual == 0 && terms_match; }
};

struct IterationOptions {
    int M = 96;                  // ambient grid intervals (spectral-flow sides)
    int flow_steps = 1024;       // fundamental-solution steps (Maslov sides)
    MaslovOptions maslov;
    SfOptions sf;                // ktol < 0 picks the grid-recommended tolerance
    double tol = 1e-8;           // precondition certification tolerance
    int precondition_samples = 9;
    /// Fault injection for certification tests: replaces the root set used by
    /// the re-discretized side of the fundamental-domain check and bypasses
    /// the kernel fidelity gate, so the resulting residual stays observable.
    std::vector<Complex> twist_override;
};

/// Restricted-block spectral flow against independent re-discretization.
/// For each k-th root omega_i of the scalar omega with omega S = P^k, the
/// flow of the ambient family compressed onto ker(g - omega_i) is compared
/// with the flow of the family re-discretized on the leading 1/k of the
/// interval under the twisted condition omega_i x(0) = P x(T/k).  The two
/// realizations must agree root by root; their endpoint kernel dimensions are
/// compared first and a mismatch raises GridError (grid too coarse to carry
/// the identity).
IdentityReport fundamental_domain_check(const IterationProblem& prob,
                                        const IterationOptions& opts = {});

/// Graph iteration identity: the index of the boundary Lagrangian of
/// x(0) = S x(T) against the flow graph over the full interval equals the sum
/// over m-th roots omega_i of omega (with omega S = P^m) of the same index
/// over the leading 1/m of the interval under omega_i x(0) = P x(T/m).  Both
/// sides run through the crossing-form engine on independently integrated
/// flows.
IdentityReport bott_iteration_check(const IterationProblem& prob, int m,
                                    const IterationOptions& opts = {});

/// Reflection identity for N anti-symplectic with N^2 = I.  Graph boundary:
///   mu(boundary of x(0)=Sx(T), Gr(gamma(t)); full interval)
///     = mu(V^+(N), gamma(t) V^+(SN); first half)
///     + mu(V^-(N), gamma(t) V^-(SN); first half),
/// which needs N S^{-1} = S N.  Separated boundary (x(0) in V0, x(T) in V1
/// with N V0 = V1, N V1 = V0):
///   mu(V1, gamma(t) V0; full) = mu(V^+(N), gamma(t) V0; half)
///                             + mu(V^-(N), gamma(t) V0; half).
IdentityReport brake_symmetry_check(const IterationProblem& prob,
                                    const IterationOptions& opts = {});

/// One-parameter family of whole-line systems with hyperbolic ends.
struct RealLineFamily {
    double s0 = 0.0, s1 = 1.0;
    std::function<RealLineSystem(double)> system;
};

enum class HalfLineSide { Negative, Positive };

struct HeteroclinicOptions {
    double L = 0.0;              // truncation cut; <= 0 derives it from coefficient decay
    double growth = 1.5;         // re-verification factor for the cut
    int steps = 800;             // transport steps between the cut and 0
    HalfLineSide side = HalfLineSide::Negative;
    MaslovOptions maslov;        // family-parameter scan grid defaults to 33 nodes
    double tol = 1e-8;
    int precondition_samples = 9;
    HeteroclinicOptions() { maslov.grid = 33; }
};

/// Brake decomposition of the heteroclinic Maslov index over the family
/// parameter: with V^{s,u} the truncated stable/unstable frames at t = 0,
///   mu(V^s(0), V^u(0)) = mu(V^+(N), V^u(0)) + mu(V^-(N), V^u(0))
/// (negative half-line side), or with the two constant arguments on the right
/// for the positive half-line side.  All indices are recomputed at
/// growth * L; any change raises ToleranceError with both values.
IdentityReport heteroclinic_brake_check(const RealLineFamily& fam, const Matrix& N,
                                        const HeteroclinicOptions& opts = {});

/// Spectral-flow pipeline for the same data: the family truncated to
/// [-L, L] with the unstable frame of the left end and the stable frame of
/// the right end as separated boundary conditions.  Minus its flow must agree
/// with mu(V^s(0), V^u(0)) from the crossing-form pipeline.
SfReport real_line_spectral_flow(const RealLineFamily& fam, double L, int M,
                                 const SfOptions& opts = {});

struct HomoclinicOptions {
    double L = 0.0;              // truncation cut; <= 0 derives it from coefficient decay
    double growth = 1.5;
    int M = 256;                 // grid intervals on [-L, L] (kept even)
    SfOptions sf;
    double tol = 1e-8;
    int precondition_samples = 9;
};

/// Relative index decomposition for a homoclinic coefficient B with limit
/// B_* at both ends and brake factor N: the index of A - B_* relative to
/// A - B equals the sum of the indices of the two blocks cut out by the
/// reflection eigenspaces of the discrete brake action on the truncated
/// interval.  Block values come from relative_morse_index on the compressed
/// pencils; the truncation is re-verified at growth * L.
IdentityReport homoclinic_index_decomposition(const RealLineSystem& sys, const Matrix& N,
                                              const HomoclinicOptions& opts = {});

/// Second-order periodic problem -G u'' + R(t) u + s G with twist
/// u(0) = omega P u(T); G constant Hermitian invertible with P^* G P = G.
struct GeodesicProblem {
    int n = 0;
    double T = 0.0;
    Matrix G;
    std::function<Matrix(double)> R;
    Matrix P;
    Complex omega{1.0, 0.0};
};

struct GeodesicOptions {
    int M = 96;                  // grid intervals per base period
    double s_max = 8.0;          // initial shift range; doubled until stable
    int max_doublings = 6;
    SfOptions sf;
    double tol = 1e-8;
    int precondition_samples = 9;
};

/// Iteration identity for the spectral index of the twisted second-order
/// family: the flow over s in [0, s_max] of the m-fold extension (interval
/// [0, mT], twist omega P^m, coefficient extended by the P-congruence) equals
/// the sum over m-th roots omega_j of omega of the base flows with twist
/// omega_j P.  s_max doubles until every endpoint operator is kernel-free and
/// every flow is unchanged by a further doubling; failure to stabilize raises
/// ToleranceError.
IdentityReport geodesic_iteration_check(const GeodesicProblem& prob, int m,
                                        const GeodesicOptions& opts = {});

}

#endif
