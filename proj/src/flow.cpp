#include "specflow/flow.hpp"

#include <cmath>
#include <limits>

#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/MatrixFunctions>

namespace specflow {

namespace {

void require_hermitian(const Matrix& B, int dim, double t, const char* who) {
    if (B.rows() != dim || B.cols() != dim)
        throw DimensionError(std::string(who) + ": coefficient sample at t = " + std::to_string(t) +
                             " has wrong shape");
    const double scale = std::max(1.0, B.norm());
    if ((B - B.adjoint()).norm() > 1e-10 * scale)
        throw StructureError(std::string(who) + ": coefficient at t = " + std::to_string(t) +
                             " is not Hermitian");
}

Matrix step_factor(const Matrix& J, const Matrix& B, double h) {
    Matrix JB = h * (J * B);
    return JB.exp();
}

Matrix orthonormal_columns(const Matrix& cols) {
    Eigen::HouseholderQR<Matrix> qr(cols);
    return qr.householderQ() * Matrix::Identity(cols.rows(), cols.cols());
}

}

Matrix FlowPath::at(double t) const {
    const int m = steps();
    const double h = (t1_ - t0_) / m;
    const double span = std::abs(t1_ - t0_);
    if (t < t0_ - 1e-9 * span || t > t1_ + 1e-9 * span)
        throw GridError("FlowPath::at: time " + std::to_string(t) + " outside [" +
                        std::to_string(t0_) + ", " + std::to_string(t1_) + "]");
    double tc = std::min(std::max(t, t0_), t1_);
    int j = std::min(static_cast<int>((tc - t0_) / h), m - 1);
    const double tj = t0_ + j * h;
    const double dt = tc - tj;
    if (dt == 0.0) return gamma_[j];
    if (std::abs(dt - h) < 1e-14 * span) return gamma_[j + 1];
    return step_factor(J_, B_(tj + dt / 2.0), dt) * gamma_[j];
}

FlowPath fundamental_solution(const HamiltonianSystem& sys, int steps) {
    if (steps < 1) throw DimensionError("fundamental_solution: steps must be >= 1");
    if (!(sys.t1 > sys.t0)) throw DimensionError("fundamental_solution: empty interval");
    const int d = 2 * sys.n;
    const SymplecticForm form = SymplecticForm::standard(sys.n);

    FlowPath path;
    path.t0_ = sys.t0;
    path.t1_ = sys.t1;
    path.B_ = sys.B;
    path.J_ = form.J();
    path.gamma_.reserve(steps + 1);
    path.gamma_.push_back(Matrix::Identity(d, d));

    const double h = (sys.t1 - sys.t0) / steps;
    for (int j = 0; j < steps; ++j) {
        const double mid = sys.t0 + (j + 0.5) * h;
        Matrix B = sys.B(mid);
        require_hermitian(B, d, mid, "fundamental_solution");
        path.gamma_.push_back(step_factor(path.J_, B, h) * path.gamma_.back());
    }
    for (const Matrix& g : path.gamma_)
        path.sympl_residual_ = std::max(path.sympl_residual_, symplectic_residual(form, g));
    return path;
}

HyperbolicityReport hyperbolicity_check(const Matrix& Binf, double tol) {
    require_hermitian(Binf, static_cast<int>(Binf.rows()), 0.0, "hyperbolicity_check");
    Eigen::ComplexEigenSolver<Matrix> es(standard_J(static_cast<int>(Binf.rows()) / 2) * Binf, false);
    HyperbolicityReport report;
    report.gap = std::numeric_limits<double>::infinity();
    for (int i = 0; i < es.eigenvalues().size(); ++i)
        report.gap = std::min(report.gap, std::abs(es.eigenvalues()(i).real()));
    report.hyperbolic = report.gap > tol;
    return report;
}

LagrangianFrame end_spectral_frame(const Matrix& Binf, bool unstable, double tol) {
    const int n = static_cast<int>(Binf.rows()) / 2;
    Matrix JB = standard_J(n) * Binf;
    Matrix U = unstable
        ? invariant_subspace(JB, [](Complex z) { return z.real() > 0.0; })
        : invariant_subspace(JB, [](Complex z) { return z.real() < 0.0; });
    if (U.cols() != n)
        throw StructureError("end_spectral_frame: spectral subspace has dimension " +
                             std::to_string(U.cols()) + ", expected " + std::to_string(n) +
                             " (end matrix not hyperbolic?)");
    return LagrangianFrame(SymplecticForm::standard(n), U, tol);
}

LagrangianFrame FramePath::at(double tau) const {
    const int m = static_cast<int>(frames_.size()) - 1;
    const double h = (t_end_ - t_start_) / m;   // signed
    const double span = std::abs(t_end_ - t_start_);
    const double lo = std::min(t_start_, t_end_), hi = std::max(t_start_, t_end_);
    if (tau < lo - 1e-9 * span || tau > hi + 1e-9 * span)
        throw GridError("FramePath::at: time " + std::to_string(tau) + " outside transport range");
    double tc = std::min(std::max(tau, lo), hi);
    int j = std::min(static_cast<int>((tc - t_start_) / h), m - 1);
    j = std::max(j, 0);
    const double tj = t_start_ + j * h;
    const double dt = tc - tj;
    Matrix F = frames_[j];
    if (dt != 0.0) {
        Matrix step = (dt * (form_.J() * B_(tj + dt / 2.0))).exp();
        F = orthonormal_columns(step * F);
    }
    return LagrangianFrame(form_, F, 1e-7);
}

FramePath transport_frame(const SymplecticForm& form, const std::function<Matrix(double)>& B,
                          const LagrangianFrame& start, double t_from, double t_to, int steps) {
    if (steps < 1) throw DimensionError("transport_frame: steps must be >= 1");
    if (t_from == t_to) throw DimensionError("transport_frame: empty interval");
    FramePath path;
    path.form_ = form;
    path.t_start_ = t_from;
    path.t_end_ = t_to;
    path.B_ = B;
    path.frames_.reserve(steps + 1);
    path.frames_.push_back(start.basis());

    const double h = (t_to - t_from) / steps;   // signed step
    for (int j = 0; j < steps; ++j) {
        const double mid = t_from + (j + 0.5) * h;
        Matrix Bm = B(mid);
        require_hermitian(Bm, form.dim(), mid, "transport_frame");
        Matrix step = (h * (form.J() * Bm)).exp();
        path.frames_.push_back(orthonormal_columns(step * path.frames_.back()));
    }
    for (const Matrix& F : path.frames_) {
        const double res = (F.adjoint() * form.J() * F).norm();
        path.isotropy_residual_ = std::max(path.isotropy_residual_, res);
    }
    if (path.isotropy_residual_ > 1e-8)
        throw StructureError("transport_frame: transported frame lost isotropy (residual " +
                             std::to_string(path.isotropy_residual_) + ")");
    return path;
}

StableUnstableFrames stable_unstable_frames(const RealLineSystem& sys, double L, int steps,
                                            double hyperbolicity_tol) {
    auto hm = hyperbolicity_check(sys.B_minus, hyperbolicity_tol);
    auto hp = hyperbolicity_check(sys.B_plus, hyperbolicity_tol);
    if (!hm.hyperbolic || !hp.hyperbolic)
        throw StructureError("stable_unstable_frames: end matrices are not hyperbolic (gaps " +
                             std::to_string(hm.gap) + ", " + std::to_string(hp.gap) + ")");
    const SymplecticForm form = SymplecticForm::standard(sys.n);
    LagrangianFrame u_end = end_spectral_frame(sys.B_minus, true);
    LagrangianFrame s_end = end_spectral_frame(sys.B_plus, false);
    StableUnstableFrames out{
        transport_frame(form, sys.B, u_end, -L, 0.0, steps),
        transport_frame(form, sys.B, s_end, L, 0.0, steps)};
    return out;
}

double default_truncation(const RealLineSystem& sys, double tol, double L_max) {
    for (double L = 1.0; L <= L_max; L *= 2.0) {
        const double dm = (sys.B(-L) - sys.B_minus).norm();
        const double dp = (sys.B(L) - sys.B_plus).norm();
        if (dm <= tol && dp <= tol) return L;
    }
    throw ToleranceError("default_truncation: coefficients do not settle to the end limits by L = " +
                         std::to_string(L_max));
}

}
