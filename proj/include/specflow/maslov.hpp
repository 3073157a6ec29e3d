#ifndef SPECFLOW_MASLOV_HPP
#define SPECFLOW_MASLOV_HPP

#include <functional>
#include <limits>
#include <vector>

#include "specflow/discretize.hpp"
#include "specflow/flow.hpp"
#include "specflow/symplectic.hpp"

namespace specflow {

/// Continuous path of Lagrangian subspaces on [a, b].  The evaluator must
/// return validated frames; piecewise_c1 declares the smoothness needed for
/// crossing forms (index computation refuses paths without it).
struct LagrangianPath {
    double a = 0.0, b = 0.0;
    std::function<LagrangianFrame(double)> frame;
    bool piecewise_c1 = true;
};

/// One crossing of a Lagrangian pair, with the crossing form expressed on an
/// orthonormal basis of the intersection at the crossing time.
struct CrossingRecord {
    enum class Where { Left, Interior, Right };
    double t = 0.0;
    int dimension = 0;
    Matrix form;                    // Hermitian, dimension x dimension
    int positive = 0, negative = 0; // inertia of the form
    Where where = Where::Interior;
    int contribution = 0;           // m^+ at the left end, signature inside, -m^- at the right end
    int signature() const { return positive - negative; }
};

struct MaslovReport {
    int index = 0;
    std::vector<CrossingRecord> crossings;  // sorted by time
    /// Certificate: min |eigenvalue| over all crossing forms (+inf if none).
    double regularity = std::numeric_limits<double>::infinity();
};

struct MaslovOptions {
    int grid = 513;                     // scan nodes over [a, b]
    double fd_scale = 1e-5;             // crossing-form step = fd_scale * (b - a)
    double time_tol_scale = 1e-10;      // localization stop = time_tol_scale * (b - a)
    double indicator_threshold = 1e-7;  // stacked-frame sigma_min accepted as a crossing
    double intersect_tol = 1e-6;        // principal-angle tolerance for the crossing dimension
    double degeneracy_tol = 1e-6;       // relative floor for |eig(form)| before failing
};

/// Crossing form of the pair (L1, L2) at t0 on an orthonormal basis of
/// L1(t0) cap L2(t0): Gamma(v) = omega(v, P2'(t0) v) - omega(v, P1'(t0) v)
/// with P_i the orthogonal projector onto L_i.  This equals the usual chart
/// derivative through any Lagrangian complement, and the derivative is taken
/// by central differences with one Richardson step (one-sided next to the
/// domain ends).  Sign convention: for L1 constant and L2(t) = Gr(gamma(t))
/// with gamma' = J B gamma it reproduces <-J gamma^{-1} gamma' x, x> on the
/// intersection, so a positive-definite coefficient drives a positive form.
Matrix crossing_form(const SymplecticForm& form, const LagrangianPath& L1,
                     const LagrangianPath& L2, double t0, double h,
                     double intersect_tol = 1e-6);

/// Maslov index of the pair over their common domain.  Crossings are found
/// by scanning sigma_min of the stacked frame [U1, -U2] on the grid and
/// refining each local minimum by golden-section search; each crossing must
/// be regular (all crossing-form eigenvalues away from zero) or
/// DegenerateCrossingError is thrown.  The total is
///   m^+(form at a) + sum over interior crossings of the signature
///   - m^-(form at b),
/// the unique endpoint rule compatible with the half-open spectral-flow
/// convention under the flow/graph correspondence.
MaslovReport maslov_index(const SymplecticForm& form, const LagrangianPath& L1,
                          const LagrangianPath& L2, const MaslovOptions& opts = {});

/// One-parameter path of symplectic matrices; the parameter may be time
/// along one flow or a family/deformation parameter.
struct SymplecticPath {
    double s0 = 0.0, s1 = 0.0;
    std::function<Matrix(double)> gamma;
};

/// Index mu(Lambda, Gr(gamma(s))) in the doubled space (-omega) x (omega):
/// builds the graph frames [I; gamma(s)], keeps Lambda constant and
/// delegates to maslov_index.  Lambda must be Lagrangian for the doubled
/// form of the matching dimension.
MaslovReport maslov_vs_graph(const LagrangianFrame& Lambda, const SymplecticPath& path,
                             const MaslovOptions& opts = {});

/// Path s -> gamma_s(T): endpoint monodromy of each family member,
/// integrated on demand with the given number of steps and cached per
/// parameter value (repeated evaluations at the same s are free).
SymplecticPath monodromy_family(const HamiltonianFamily& fam, int steps);

/// Path t -> gamma(t) along one integrated flow.
SymplecticPath flow_graph_path(const FlowPath& flow);

}

#endif
