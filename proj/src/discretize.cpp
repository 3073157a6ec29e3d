#include "specflow/discretize.hpp"

#include <cmath>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

namespace specflow {

namespace {

Matrix sampled_hermitian(const std::function<Matrix(double)>& f, double t, int d,
                         const char* what) {
    Matrix B = f(t);
    if (B.rows() != d || B.cols() != d)
        throw DimensionError(std::string(what) + ": coefficient sample has the wrong size");
    const double scale = std::max(B.norm(), 1e-300);
    if ((B - B.adjoint()).norm() > 1e-8 * scale)
        throw StructureError(std::string(what) + ": coefficient sample is not Hermitian");
    return 0.5 * (B + B.adjoint());
}

// Numerical kernel of a boundary-compatibility matrix, with a guard band:
// a singular value that is small but not negligible signals an alternating
// mode that is almost (but not exactly) compatible with the boundary
// condition, which would place an uncontrolled near-degenerate direction in
// the pencil.  That is a hard error, not something to round either way.
Matrix kernel_with_guard(const Matrix& C, const char* what) {
    Eigen::JacobiSVD<Matrix> svd(C, Eigen::ComputeFullV);
    const auto& sig = svd.singularValues();
    const double smax = std::max(sig.size() > 0 ? sig(0) : 0.0, 1.0);
    int g = 0;
    for (int i = 0; i < sig.size(); ++i) {
        if (sig(i) <= 1e-10 * smax)
            ++g;
        else if (sig(i) <= 1e-5 * smax)
            throw ToleranceError(std::string(what) +
                                     ": boundary condition nearly resonates with the grid parity "
                                     "(almost-compatible alternating mode); change the parity of M",
                                 sig(i) / smax);
    }
    if (g == 0) return Matrix();
    return svd.matrixV().rightCols(g);
}

// += into a coupling slot that may not have been sized yet (when M = 2 the
// first and last chain nodes coincide, so two couplings share one slot).
void accumulate(Matrix& slot, const Matrix& term) {
    if (slot.size())
        slot += term;
    else
        slot = term;
}

void check_invertible(const Matrix& G, const char* what) {
    Eigen::JacobiSVD<Matrix> svd(G);
    const double top = svd.singularValues()(0);
    const double bottom = svd.singularValues()(svd.singularValues().size() - 1);
    if (bottom <= 1e-10 * std::max(top, 1e-300))
        throw StructureError(std::string(what) + ": coefficient sample is numerically singular");
}

Matrix hermitized(const Matrix& A, double tol_scale, const char* what) {
    const Matrix defect = 0.5 * (A - A.adjoint());
    if (defect.norm() > 1e-8 * std::max(tol_scale, 1.0))
        throw StructureError(std::string(what) +
                             ": boundary elimination left a non-Hermitian block "
                             "(boundary data is not symplectically consistent)");
    return 0.5 * (A + A.adjoint());
}

}  // namespace

BoundaryCondition BoundaryCondition::graph(const Matrix& S) {
    if (S.rows() != S.cols() || S.rows() % 2 != 0)
        throw DimensionError("BoundaryCondition::graph: S must be square of even size");
    if (!is_symplectic(S, 1e-8))
        throw StructureError("BoundaryCondition::graph: S is not symplectic");
    BoundaryCondition bc;
    bc.kind = Kind::Graph;
    bc.S = S;
    return bc;
}

BoundaryCondition BoundaryCondition::separated(const LagrangianFrame& left,
                                               const LagrangianFrame& right) {
    if (left.ambient_dim() != right.ambient_dim())
        throw DimensionError("BoundaryCondition::separated: frames live in different spaces");
    BoundaryCondition bc;
    bc.kind = Kind::Separated;
    bc.V0 = left.basis();
    bc.V1 = right.basis();
    return bc;
}

BoundaryCondition BoundaryCondition::general(const LagrangianFrame& lambda) {
    if (lambda.ambient_dim() % 4 != 0)
        throw DimensionError("BoundaryCondition::general: frame must live in a doubled space");
    BoundaryCondition bc;
    bc.kind = Kind::General;
    bc.frame = lambda.basis();
    return bc;
}

LagrangianFrame BoundaryCondition::lagrangian(int n) const {
    const SymplecticForm doubled = SymplecticForm::doubled(n);
    switch (kind) {
        case Kind::Graph:
            return boundary_graph(doubled, S);
        case Kind::Separated: {
            const SymplecticForm single = SymplecticForm::standard(n);
            return boundary_separated(doubled, LagrangianFrame(single, V0),
                                      LagrangianFrame(single, V1));
        }
        case Kind::General:
            return LagrangianFrame(doubled, frame);
    }
    throw StructureError("BoundaryCondition: unknown kind");
}

SLBoundary SLBoundary::twisted(Complex omega, const Matrix& P) {
    if (std::abs(std::abs(omega) - 1.0) > 1e-12)
        throw StructureError("SLBoundary::twisted: omega must be unimodular");
    if (P.rows() != P.cols() || P.rows() == 0)
        throw DimensionError("SLBoundary::twisted: P must be square");
    check_invertible(P, "SLBoundary::twisted: P");
    SLBoundary bc;
    bc.kind = Kind::Twisted;
    bc.omega = omega;
    bc.P = P;
    return bc;
}

SLBoundary SLBoundary::dirichlet() {
    SLBoundary bc;
    bc.kind = Kind::Dirichlet;
    return bc;
}

int DiscretizedOperator::node_offset(int j) const {
    switch (layout) {
        case Layout::Wrapped:
            if (j < 0 || j >= M) return -1;
            return j == 0 ? (M - 1) * node_dim : (j - 1) * node_dim;
        case Layout::SeparatedEnds: {
            const int n = node_dim / 2;
            if (j == 0) return 0;
            if (j == M) return n + (M - 1) * node_dim;
            if (j < 0 || j > M) return -1;
            return n + (j - 1) * node_dim;
        }
        case Layout::Corner:
            if (j >= 1 && j <= M - 1) return (j - 1) * node_dim;
            return -1;
        case Layout::DirichletEnds:
            if (j >= 1 && j <= M - 1) return (j - 1) * node_dim;
            return -1;
    }
    return -1;
}

Matrix DiscretizedOperator::reduction_basis() const {
    const int d = dim();
    if (gauge_dim == 0) return Matrix::Identity(d, d);
    Eigen::HouseholderQR<Matrix> qr(gauge);
    const Matrix Q = qr.householderQ() * Matrix::Identity(d, d);
    return Q.rightCols(d - gauge_dim);
}

int DiscretizedOperator::node_size(int j) const {
    switch (layout) {
        case Layout::Wrapped:
            return (j >= 0 && j < M) ? node_dim : 0;
        case Layout::SeparatedEnds:
            if (j == 0 || j == M) return node_dim / 2;
            return (j >= 1 && j < M) ? node_dim : 0;
        case Layout::Corner:
        case Layout::DirichletEnds:
            return (j >= 1 && j <= M - 1) ? node_dim : 0;
    }
    return 0;
}

namespace {

// Detect the alternating modes x_j = (-1)^j u that satisfy the boundary
// condition.  The midpoint test functions cannot see them, so they are exact
// (stiffness, mass) kernel pairs of the assembled pencil: pure gauge.  They
// are stored orthonormalized; dense eigensolves restrict to the on-demand
// reduction basis, structured inertia counts drop the gauge by rank.
void attach_gauge(DiscretizedOperator& op) {
    const int d = op.node_dim, M = op.M;
    const double par = (M % 2 == 0) ? 1.0 : -1.0;  // (-1)^M
    const Matrix I = Matrix::Identity(d, d);

    Matrix u;  // d x g matrix of node-0 values of compatible alternating modes
    Matrix corner_coeff;
    switch (op.layout) {
        case DiscretizedOperator::Layout::Wrapped:
            u = kernel_with_guard(op.wrap - par * I, "discretize_hamiltonian");
            break;
        case DiscretizedOperator::Layout::SeparatedEnds: {
            const int n0 = static_cast<int>(op.left_frame.cols());
            Matrix C(d, n0 + op.right_frame.cols());
            C << op.left_frame, -op.right_frame;
            const Matrix ker = kernel_with_guard(C, "discretize_hamiltonian");
            if (ker.size()) u = op.left_frame * ker.topRows(n0);
            break;
        }
        case DiscretizedOperator::Layout::Corner: {
            Matrix gpar(2 * d, d);
            gpar << I, par * I;
            gpar *= 1.0 / std::sqrt(2.0);
            Matrix C(2 * d, op.corner_frame.cols() + d);
            C << op.corner_frame, -gpar;
            const Matrix ker = kernel_with_guard(C, "discretize_hamiltonian");
            if (ker.size()) {
                corner_coeff = ker.topRows(op.corner_frame.cols());
                u = (op.corner_frame * corner_coeff).topRows(d);
            }
            break;
        }
        default:
            return;
    }
    const int g = static_cast<int>(u.cols());
    if (g == 0) return;

    const int dim = op.dim();
    Matrix G = Matrix::Zero(dim, g);
    for (int j = 1; j <= M - 1; ++j) {
        const double sign = (j % 2 == 0) ? 1.0 : -1.0;
        G.block(op.node_offset(j), 0, d, g) = sign * u;
    }
    switch (op.layout) {
        case DiscretizedOperator::Layout::Wrapped:
            G.block(op.node_offset(0), 0, d, g) = u;
            break;
        case DiscretizedOperator::Layout::SeparatedEnds:
            G.block(op.node_offset(0), 0, op.left_frame.cols(), g) = op.left_frame.adjoint() * u;
            G.block(op.node_offset(M), 0, op.right_frame.cols(), g) =
                par * (op.right_frame.adjoint() * u);
            break;
        case DiscretizedOperator::Layout::Corner:
            G.block((M - 1) * d, 0, op.corner_frame.cols(), g) = corner_coeff;
            break;
        default:
            break;
    }

    Eigen::HouseholderQR<Matrix> qr(G);
    op.gauge = qr.householderQ() * Matrix::Identity(dim, g);
    op.gauge_dim = g;
    op.pencil.gauge_dim = g;

    if (op.pencil.apply_stiffness(op.gauge).norm() >
            1e-10 * std::max(1.0, op.pencil.stiffness_norm()) ||
        op.pencil.apply_mass(op.gauge).norm() > 1e-10 * std::max(1.0, op.pencil.mass_norm()))
        throw StructureError(
            "discretize_hamiltonian: alternating boundary-compatible modes are not an exact "
            "pencil kernel; assembly and gauge bookkeeping disagree");
}

}  // namespace

DiscretizedOperator discretize_hamiltonian(const HamiltonianSystem& sys,
                                           const BoundaryCondition& bc, int M) {
    const int n = sys.n, d = 2 * n;
    if (n <= 0 || !sys.B) throw StructureError("discretize_hamiltonian: empty system");
    const double T = sys.t1 - sys.t0;
    if (!(T > 0.0)) throw GridError("discretize_hamiltonian: empty time interval");
    if (M < 2) throw GridError("discretize_hamiltonian: need at least 2 intervals");
    const double h = T / M;
    const Matrix J = standard_J(n);
    const Matrix I = Matrix::Identity(d, d);

    // Coefficient samples at element midpoints (where the equations live).
    std::vector<Matrix> Bm(M);
    double bmax = 0.0;
    for (int j = 0; j < M; ++j) {
        Bm[j] = sampled_hermitian(sys.B, sys.t0 + h * (j + 0.5), d, "discretize_hamiltonian");
        bmax = std::max(bmax, Bm[j].operatorNorm());
    }

    // Full nodal blocks of the midpoint-tested form: per element the skew
    // part stamps +-J/2 off the diagonal (diagonal contributions cancel in
    // the interior), while B and the mass stamp the rank-one average
    // pattern (h/4) * [[1,1],[1,1]].  Skew corner defects +J/2 at node 0 and
    // -J/2 at node M cancel against any Lagrangian boundary.
    std::vector<Matrix> dd(M + 1, Matrix::Zero(d, d));
    for (int j = 0; j < M; ++j) {
        dd[j] += (h / 4.0) * Bm[j];
        dd[j + 1] += (h / 4.0) * Bm[j];
    }
    auto super = [&](int j) { return (-0.5 * J - (h / 4.0) * Bm[j]).eval(); };

    DiscretizedOperator op;
    op.M = M;
    op.node_dim = d;
    op.T = T;
    op.source = DiscretizedOperator::Source::Hamiltonian;
    StructuredPencil& p = op.pencil;

    // Interior chain: nodes 1..M-1 (always present).
    for (int j = 1; j <= M - 1; ++j) {
        p.Kdiag.push_back(-dd[j]);
        p.Mdiag.push_back((h / 2.0) * I);
        if (j < M - 1) {
            p.Ksub.push_back(super(j).adjoint());
            p.Msub.push_back((h / 4.0) * I);
        }
    }

    const Matrix corner0 = 0.5 * J - dd[0];       // full block (0, 0)
    const Matrix cornerM = -0.5 * J - dd[M];      // full block (M, M)

    switch (bc.kind) {
        case BoundaryCondition::Kind::Graph: {
            if (bc.S.rows() != d)
                throw DimensionError("discretize_hamiltonian: boundary dimension mismatch");
            const Matrix W = bc.S.inverse();      // node M = W * node 0
            op.layout = DiscretizedOperator::Layout::Wrapped;
            op.wrap = W;
            p.Kborder = hermitized(corner0 + W.adjoint() * cornerM * W, W.squaredNorm(),
                                   "discretize_hamiltonian");
            p.Mborder = (h / 4.0) * (I + W.adjoint() * W);
            p.Kbcol.assign(M - 1, Matrix());
            p.Mbcol.assign(M - 1, Matrix());
            accumulate(p.Kbcol[0], super(0).adjoint());   // node 1 <- node 0
            accumulate(p.Mbcol[0], (h / 4.0) * I);
            accumulate(p.Kbcol[M - 2], super(M - 1) * W); // node M-1 <- wrapped node M
            accumulate(p.Mbcol[M - 2], (h / 4.0) * W);
            break;
        }
        case BoundaryCondition::Kind::Separated: {
            if (bc.V0.rows() != d || bc.V1.rows() != d)
                throw DimensionError("discretize_hamiltonian: boundary dimension mismatch");
            op.layout = DiscretizedOperator::Layout::SeparatedEnds;
            op.left_frame = bc.V0;
            op.right_frame = bc.V1;
            // Prepend the left coefficient block, append the right one.
            p.Kdiag.insert(p.Kdiag.begin(),
                           hermitized(bc.V0.adjoint() * corner0 * bc.V0, 1.0,
                                      "discretize_hamiltonian"));
            p.Mdiag.insert(p.Mdiag.begin(), (h / 4.0) * Matrix::Identity(n, n));
            p.Ksub.insert(p.Ksub.begin(), super(0).adjoint() * bc.V0);
            p.Msub.insert(p.Msub.begin(), (h / 4.0) * bc.V0);
            p.Kdiag.push_back(hermitized(bc.V1.adjoint() * cornerM * bc.V1, 1.0,
                                         "discretize_hamiltonian"));
            p.Mdiag.push_back((h / 4.0) * Matrix::Identity(n, n));
            p.Ksub.push_back(bc.V1.adjoint() * super(M - 1).adjoint());
            p.Msub.push_back((h / 4.0) * bc.V1.adjoint());
            break;
        }
        case BoundaryCondition::Kind::General: {
            if (bc.frame.rows() != 2 * d)
                throw DimensionError("discretize_hamiltonian: boundary dimension mismatch");
            const Matrix W0 = bc.frame.topRows(d);
            const Matrix W1 = bc.frame.bottomRows(d);
            op.layout = DiscretizedOperator::Layout::Corner;
            op.corner_frame = bc.frame;
            p.Kborder = hermitized(W0.adjoint() * corner0 * W0 + W1.adjoint() * cornerM * W1,
                                   1.0, "discretize_hamiltonian");
            p.Mborder = (h / 4.0) * (W0.adjoint() * W0 + W1.adjoint() * W1);
            p.Kbcol.assign(M - 1, Matrix());
            p.Mbcol.assign(M - 1, Matrix());
            accumulate(p.Kbcol[0], super(0).adjoint() * W0);   // node 1 <- x_0 part
            accumulate(p.Mbcol[0], (h / 4.0) * W0);
            accumulate(p.Kbcol[M - 2], super(M - 1) * W1);     // node M-1 <- x_M part
            accumulate(p.Mbcol[M - 2], (h / 4.0) * W1);
            break;
        }
    }

    attach_gauge(op);

    // Kernel modes of the continuum operator land within O(h^2) of zero on
    // this grid, with a constant growing with the coefficient magnitude.
    const double freq = 1.0 + bmax;
    op.recommended_ktol = (2.0 / 3.0) * h * h * freq * freq * freq;
    return op;
}

DiscretizedOperator discretize_sturm_liouville(const SturmLiouvilleSystem& sys,
                                               const SLBoundary& bc, int M) {
    const int n = sys.n;
    if (n <= 0 || !sys.G || !sys.R) throw StructureError("discretize_sturm_liouville: empty system");
    const double T = sys.T;
    if (!(T > 0.0)) throw GridError("discretize_sturm_liouville: empty time interval");
    if (M < 2) throw GridError("discretize_sturm_liouville: need at least 2 intervals");
    const double h = T / M;
    const Matrix I = Matrix::Identity(n, n);

    std::vector<Matrix> Gm(M), Rn(M + 1);
    double gmax = 0.0, rmax = 0.0;
    for (int j = 0; j < M; ++j) {
        Gm[j] = sampled_hermitian(sys.G, h * (j + 0.5), n, "discretize_sturm_liouville");
        check_invertible(Gm[j], "discretize_sturm_liouville");
        gmax = std::max(gmax, Gm[j].operatorNorm());
    }
    for (int j = 0; j <= M; ++j) {
        Rn[j] = sampled_hermitian(sys.R, h * j, n, "discretize_sturm_liouville");
        rmax = std::max(rmax, Rn[j].operatorNorm());
    }

    DiscretizedOperator op;
    op.M = M;
    op.node_dim = n;
    op.T = T;
    op.source = DiscretizedOperator::Source::SturmLiouville;
    StructuredPencil& p = op.pencil;

    // Interior chain: nodes 1..M-1.
    for (int j = 1; j <= M - 1; ++j) {
        p.Kdiag.push_back((Gm[j - 1] + Gm[j]) / h + h * Rn[j]);
        p.Mdiag.push_back(h * I);
        if (j < M - 1) {
            p.Ksub.push_back(-Gm[j] / h);
            p.Msub.push_back(Matrix::Zero(n, n));
        }
    }

    switch (bc.kind) {
        case SLBoundary::Kind::Dirichlet:
            op.layout = DiscretizedOperator::Layout::DirichletEnds;
            break;
        case SLBoundary::Kind::Twisted: {
            if (bc.P.rows() != n || bc.P.cols() != n)
                throw DimensionError("discretize_sturm_liouville: twist dimension mismatch");
            if (std::abs(std::abs(bc.omega) - 1.0) > 1e-10)
                throw StructureError("discretize_sturm_liouville: twist phase must be unimodular");
            const Matrix G0 = sampled_hermitian(sys.G, 0.0, n, "discretize_sturm_liouville");
            const Matrix GT = sampled_hermitian(sys.G, T, n, "discretize_sturm_liouville");
            if ((GT - bc.P.adjoint() * G0 * bc.P).norm() > 1e-8 * std::max(gmax, 1e-300))
                throw StructureError(
                    "discretize_sturm_liouville: twisted condition is not self-adjoint "
                    "(G(T) != P^* G(0) P)");
            const Matrix W = (std::conj(bc.omega) * bc.P.inverse()).eval();  // node M = W node 0
            op.layout = DiscretizedOperator::Layout::Wrapped;
            op.wrap = W;
            p.Kborder = hermitized(Gm[0] / h + (h / 2.0) * Rn[0] +
                                       W.adjoint() * (Gm[M - 1] / h + (h / 2.0) * Rn[M]) * W,
                                   W.squaredNorm(), "discretize_sturm_liouville");
            p.Mborder = (h / 2.0) * (I + W.adjoint() * W);
            p.Kbcol.assign(M - 1, Matrix());
            p.Mbcol.assign(M - 1, Matrix::Zero(n, n));
            accumulate(p.Kbcol[0], (-Gm[0] / h).eval());       // node 1 <- node 0
            accumulate(p.Kbcol[M - 2], ((-Gm[M - 1] / h) * W).eval());
            break;
        }
    }

    const double freq = 1.0 + gmax + std::sqrt(rmax);
    op.recommended_ktol = (1.0 / 3.0) * h * h * freq * freq * freq * freq;
    return op;
}

StructuredPath structured_path(const HamiltonianFamily& fam, const BoundaryCondition& bc, int M) {
    if (!fam.system) throw StructureError("structured_path: empty family");
    return {fam.s0, fam.s1, [fam, bc, M](double s) {
                return discretize_hamiltonian(fam.system(s), bc, M).pencil;
            }};
}

StructuredPath structured_path(const SturmLiouvilleFamily& fam, const SLBoundary& bc, int M) {
    if (!fam.system) throw StructureError("structured_path: empty family");
    return {fam.s0, fam.s1, [fam, bc, M](double s) {
                return discretize_sturm_liouville(fam.system(s), bc, M).pencil;
            }};
}

HermitianPath dense_path(const HamiltonianFamily& fam, const BoundaryCondition& bc, int M) {
    if (!fam.system) throw StructureError("dense_path: empty family");
    DiscretizedOperator first = discretize_hamiltonian(fam.system(fam.s0), bc, M);
    HermitianPath path;
    path.s0 = fam.s0;
    path.s1 = fam.s1;
    if (first.gauge_dim > 0) {
        // The gauge directions depend only on the grid and boundary data, so
        // one reduction serves every parameter value.
        const Matrix Q = first.reduction_basis();
        path.dim = static_cast<int>(Q.cols());
        path.mass = Q.adjoint() * first.mass() * Q;
        path.A = [fam, bc, M, Q](double s) {
            return (Q.adjoint() * discretize_hamiltonian(fam.system(s), bc, M).stiffness() * Q)
                .eval();
        };
    } else {
        path.dim = first.dim();
        path.mass = first.mass();
        path.A = [fam, bc, M](double s) {
            return discretize_hamiltonian(fam.system(s), bc, M).stiffness();
        };
    }
    return path;
}

HermitianPath dense_path(const SturmLiouvilleFamily& fam, const SLBoundary& bc, int M) {
    if (!fam.system) throw StructureError("dense_path: empty family");
    DiscretizedOperator first = discretize_sturm_liouville(fam.system(fam.s0), bc, M);
    HermitianPath path;
    path.s0 = fam.s0;
    path.s1 = fam.s1;
    path.dim = first.dim();
    path.mass = first.mass();
    path.A = [fam, bc, M](double s) {
        return discretize_sturm_liouville(fam.system(s), bc, M).stiffness();
    };
    return path;
}

}
