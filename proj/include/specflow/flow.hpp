#ifndef SPECFLOW_FLOW_HPP
#define SPECFLOW_FLOW_HPP

#include <functional>
#include <vector>

#include "specflow/symplectic.hpp"

namespace specflow {

/// Linear Hamiltonian system x' = J B(t) x on a finite interval.
/// B(t) must be Hermitian at every evaluation point.
struct HamiltonianSystem {
    int n = 0;                          // half-dimension, states live in C^{2n}
    double t0 = 0.0;
    double t1 = 0.0;
    std::function<Matrix(double)> B;
};

/// Hamiltonian system on the whole line with Hermitian limits at both ends.
struct RealLineSystem {
    int n = 0;
    std::function<Matrix(double)> B;
    Matrix B_minus;                     // B(-inf)
    Matrix B_plus;                      // B(+inf)
};

/// Fundamental solution sampled on a uniform grid.  Each step factor
/// exp(h J B(midpoint)) is symplectic, so the whole path stays in Sp(2n)
/// up to the matrix-exponential tolerance.
class FlowPath {
public:
    double t0() const { return t0_; }
    double t1() const { return t1_; }
    int steps() const { return static_cast<int>(gamma_.size()) - 1; }
    const Matrix& node(int j) const { return gamma_.at(j); }

    /// Flow matrix at an arbitrary time, completed from the nearest grid
    /// point below by one partial midpoint-exponential step.
    Matrix at(double t) const;

    /// Largest symplectic residual over all grid nodes.
    double max_symplectic_residual() const { return sympl_residual_; }

private:
    friend FlowPath fundamental_solution(const HamiltonianSystem&, int);
    double t0_ = 0.0, t1_ = 0.0;
    std::vector<Matrix> gamma_;
    std::function<Matrix(double)> B_;
    Matrix J_;
    double sympl_residual_ = 0.0;
};

/// Integrates the fundamental solution with midpoint-exponential steps.
/// Raises StructureError if a coefficient sample is not Hermitian.
FlowPath fundamental_solution(const HamiltonianSystem& sys, int steps);

struct HyperbolicityReport {
    bool hyperbolic = false;
    double gap = 0.0;                   // min |Re lambda| over sigma(J B)
};

/// Checks that J*Binf has no spectrum on the imaginary axis.
HyperbolicityReport hyperbolicity_check(const Matrix& Binf, double tol);

/// Spectral subspace of J*Binf for eigenvalues with positive (unstable) or
/// negative (stable) real part, certified Lagrangian.
LagrangianFrame end_spectral_frame(const Matrix& Binf, bool unstable, double tol = 1e-8);

/// Lagrangian frame path transported by the flow along a uniform grid, with
/// re-orthonormalization after every step.  The grid may run downward
/// (backward transport).
class FramePath {
public:
    double t_start() const { return t_start_; }
    double t_end() const { return t_end_; }
    /// Frame at an arbitrary time between t_start and t_end, completed by a
    /// partial flow step from the nearest grid node.
    LagrangianFrame at(double tau) const;
    double max_isotropy_residual() const { return isotropy_residual_; }

private:
    friend FramePath transport_frame(const SymplecticForm&, const std::function<Matrix(double)>&,
                                     const LagrangianFrame&, double, double, int);
    SymplecticForm form_ = SymplecticForm::standard(1);
    double t_start_ = 0.0, t_end_ = 0.0;
    std::vector<Matrix> frames_;
    std::function<Matrix(double)> B_;
    double isotropy_residual_ = 0.0;
};

/// Transports a Lagrangian frame by the flow of x' = J B(t) x from t_from to
/// t_to (either direction) over the given number of steps.
FramePath transport_frame(const SymplecticForm& form, const std::function<Matrix(double)>& B,
                          const LagrangianFrame& start, double t_from, double t_to, int steps);

struct StableUnstableFrames {
    FramePath unstable;                 // from -L towards 0
    FramePath stable;                   // from +L towards 0
};

/// Truncated stable/unstable Lagrangian paths: the unstable spectral frame of
/// J B(-inf) carried forward from -L, and the stable spectral frame of
/// J B(+inf) carried backward from +L.
StableUnstableFrames stable_unstable_frames(const RealLineSystem& sys, double L, int steps,
                                            double hyperbolicity_tol = 1e-8);

/// Smallest truncation L from the doubling sequence {1, 2, 4, ...} with
/// ||B(+-L) - B(+-inf)|| below tol at both ends.  Raises ToleranceError if
/// L_max is reached first.
double default_truncation(const RealLineSystem& sys, double tol = 1e-8, double L_max = 64.0);

}

#endif
