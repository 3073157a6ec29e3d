#include "specflow/symmetry.hpp"

#include <cmath>
#include <string>
#include <utility>

#include <Eigen/Dense>

namespace specflow {

namespace {

// How far the columns of X stick out of span(U), relative to ||X||.
// U must be orthonormal.
double leakage(const Matrix& U, const Matrix& X) {
    return (X - U * (U.adjoint() * X)).norm() / std::max(X.norm(), 1e-300);
}

void check_invertible_factor(const Matrix& F, const char* what) {
    Eigen::JacobiSVD<Matrix> svd(F);
    const auto& sig = svd.singularValues();
    if (sig.size() == 0 || sig(sig.size() - 1) <= 1e-10 * std::max(sig(0), 1e-300))
        throw StructureError(std::string(what) + ": factor is numerically singular");
}

void check_commutes_with_wrap(const Matrix& F, const Matrix& W) {
    if ((F * W - W * F).norm() > 1e-8 * std::max(1.0, F.norm() * W.norm()))
        throw StructureError(
            "build_symmetry: factor does not commute with the boundary wrap, so the action "
            "does not preserve the constrained space");
}

RealVector pencil_eigs(const Matrix& K, const Matrix* mass) {
    if (mass) {
        Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> es(K, *mass,
                                                            Eigen::EigenvaluesOnly | Eigen::Ax_lBx);
        return es.eigenvalues();
    }
    Eigen::SelfAdjointEigenSolver<Matrix> es(K, Eigen::EigenvaluesOnly);
    return es.eigenvalues();
}

double pencil_scale(const Matrix& K, const Matrix* mass) {
    if (K.size() == 0) return 0.0;
    return pencil_eigs(K, mass).cwiseAbs().maxCoeff();
}

// Number of pencil eigenvalues within the kernel tolerance of zero.  The
// tolerance must be supplied: a compressed block can vanish identically at
// one parameter value, where any scale read off the block itself is noise,
// so the caller derives one tolerance from the full path and uses it for
// every block.
int pencil_kernel_dim(const Matrix& K, const Matrix* mass, double ktol) {
    if (K.size() == 0) return 0;
    const RealVector eig = pencil_eigs(K, mass);
    int k = 0;
    for (int i = 0; i < eig.size(); ++i)
        if (std::abs(eig[i]) <= ktol) ++k;
    return k;
}

}  // namespace

SymmetrySpec SymmetrySpec::pointwise(const Matrix& P) {
    SymmetrySpec s;
    s.kind = Case::PointwiseP;
    s.P = P;
    return s;
}

SymmetrySpec SymmetrySpec::shift(const Matrix& P, int k) {
    SymmetrySpec s;
    s.kind = Case::ZkShift;
    s.P = P;
    s.k = k;
    return s;
}

SymmetrySpec SymmetrySpec::brake(const Matrix& N) {
    SymmetrySpec s;
    s.kind = Case::Brake;
    s.N = N;
    return s;
}

DiscreteSymmetry build_symmetry(const SymmetrySpec& spec, const DiscretizedOperator& disc,
                                double tol) {
    using Layout = DiscretizedOperator::Layout;
    const int d = disc.node_dim, M = disc.M;
    const int dim = disc.dim();
    const bool brake_like = spec.kind == SymmetrySpec::Case::Brake ||
                            spec.kind == SymmetrySpec::Case::HeteroclinicBrake;
    const Matrix& F = brake_like ? spec.N : spec.P;

    if (F.rows() != d || F.cols() != d)
        throw DimensionError("build_symmetry: factor size does not match the node dimension");
    if (disc.source == DiscretizedOperator::Source::Hamiltonian) {
        // The derivative term -J d/dt is only equivariant under these.
        if (brake_like) {
            if (!is_anti_symplectic(F, tol))
                throw StructureError(
                    "build_symmetry: a reflection factor for a first-order operator must be "
                    "anti-symplectic");
        } else if (!is_symplectic(F, tol)) {
            throw StructureError(
                "build_symmetry: a pointwise or shift factor for a first-order operator must be "
                "symplectic");
        }
    } else {
        check_invertible_factor(F, "build_symmetry");
    }

    DiscreteSymmetry out;
    out.kind = spec.kind;
    out.M = M;
    out.node_dim = d;
    out.layout = disc.layout;
    Matrix g = Matrix::Zero(dim, dim);
    auto node_block = [&](int dst, int src) -> Eigen::Block<Matrix> {
        return g.block(disc.node_offset(dst), disc.node_offset(src), d, d);
    };

    switch (spec.kind) {
        case SymmetrySpec::Case::PointwiseP: {
            switch (disc.layout) {
                case Layout::Wrapped:
                    check_commutes_with_wrap(F, disc.wrap);
                    for (int j = 0; j <= M - 1; ++j) node_block(j, j) = F;
                    break;
                case Layout::SeparatedEnds: {
                    const Matrix& V0 = disc.left_frame;
                    const Matrix& V1 = disc.right_frame;
                    if (leakage(V0, F * V0) > tol || leakage(V1, F * V1) > tol)
                        throw StructureError(
                            "build_symmetry: pointwise factor does not preserve the boundary "
                            "subspaces (P V != V)");
                    for (int j = 1; j <= M - 1; ++j) node_block(j, j) = F;
                    const int n0 = static_cast<int>(V0.cols()), n1 = static_cast<int>(V1.cols());
                    g.block(0, 0, n0, n0) = V0.adjoint() * F * V0;
                    const int r = disc.node_offset(M);
                    g.block(r, r, n1, n1) = V1.adjoint() * F * V1;
                    break;
                }
                case Layout::Corner: {
                    const Matrix& Fr = disc.corner_frame;
                    Matrix D = Matrix::Zero(2 * d, 2 * d);
                    D.topLeftCorner(d, d) = F;
                    D.bottomRightCorner(d, d) = F;
                    if (leakage(Fr, D * Fr) > tol)
                        throw StructureError(
                            "build_symmetry: pointwise factor does not preserve the corner "
                            "subspace");
                    for (int j = 1; j <= M - 1; ++j) node_block(j, j) = F;
                    const int c = static_cast<int>(Fr.cols());
                    g.block((M - 1) * d, (M - 1) * d, c, c) = Fr.adjoint() * D * Fr;
                    break;
                }
                case Layout::DirichletEnds:
                    for (int j = 1; j <= M - 1; ++j) node_block(j, j) = F;
                    break;
            }
            break;
        }

        case SymmetrySpec::Case::ZkShift: {
            if (disc.layout != Layout::Wrapped)
                throw StructureError(
                    "build_symmetry: a shift symmetry needs a wrapped (graph or twisted) boundary");
            if (spec.k < 1) throw StructureError("build_symmetry: shift order must be positive");
            if (M % spec.k != 0)
                throw GridError("build_symmetry: shift order must divide the interval count");
            check_commutes_with_wrap(F, disc.wrap);
            const int m = M / spec.k;
            const Matrix FW = F * disc.wrap;
            for (int j = 0; j <= M - 1; ++j) {
                const int src = j + m;
                if (src <= M - 1)
                    node_block(j, src) = F;
                else
                    node_block(j, src - M) = FW;  // reads through the wrap
            }
            break;
        }

        case SymmetrySpec::Case::Brake:
        case SymmetrySpec::Case::HeteroclinicBrake: {
            if (M % 2 != 0)
                throw GridError(
                    "build_symmetry: a brake reflection needs an even interval count so node "
                    "j -> M - j is exact");
            switch (disc.layout) {
                case Layout::Wrapped: {
                    const Matrix& W = disc.wrap;
                    if ((W * F * W - F).norm() >
                        tol * std::max(1.0, F.norm()) * std::max(1.0, W.squaredNorm()))
                        throw StructureError(
                            "build_symmetry: reflection is incompatible with the boundary wrap "
                            "(W N W != N)");
                    for (int j = 1; j <= M - 1; ++j) node_block(j, M - j) = F;
                    node_block(0, 0) = F * W;  // (g x)_0 = N x_M = N W x_0
                    break;
                }
                case Layout::SeparatedEnds: {
                    const Matrix& V0 = disc.left_frame;
                    const Matrix& V1 = disc.right_frame;
                    if (leakage(V0, F * V1) > tol || leakage(V1, F * V0) > tol)
                        throw StructureError(
                            "build_symmetry: reflection does not exchange the boundary subspaces "
                            "(N V0 != V1)");
                    for (int j = 1; j <= M - 1; ++j) node_block(j, M - j) = F;
                    const int n0 = static_cast<int>(V0.cols()), n1 = static_cast<int>(V1.cols());
                    const int r = disc.node_offset(M);
                    g.block(0, r, n0, n1) = V0.adjoint() * F * V1;
                    g.block(r, 0, n1, n0) = V1.adjoint() * F * V0;
                    break;
                }
                case Layout::Corner: {
                    const Matrix& Fr = disc.corner_frame;
                    Matrix D = Matrix::Zero(2 * d, 2 * d);
                    D.topRightCorner(d, d) = F;    // new x_0 reads old x_M
                    D.bottomLeftCorner(d, d) = F;  // new x_M reads old x_0
                    if (leakage(Fr, D * Fr) > tol)
                        throw StructureError(
                            "build_symmetry: reflection does not preserve the corner subspace");
                    for (int j = 1; j <= M - 1; ++j) node_block(j, M - j) = F;
                    const int c = static_cast<int>(Fr.cols());
                    g.block((M - 1) * d, (M - 1) * d, c, c) = Fr.adjoint() * D * Fr;
                    break;
                }
                case Layout::DirichletEnds:
                    for (int j = 1; j <= M - 1; ++j) node_block(j, M - j) = F;
                    break;
            }
            break;
        }
    }

    {
        Eigen::ColPivHouseholderQR<Matrix> qr(g);
        if (qr.rank() < dim)
            throw StructureError("build_symmetry: assembled symmetry is numerically singular");
    }

    out.nodal = g;
    if (disc.gauge_dim > 0) {
        const Matrix& U = disc.gauge;
        if (leakage(U, g * U) > 1e-8)
            throw StructureError(
                "build_symmetry: symmetry does not preserve the gauge directions, so it has no "
                "action on the reduced space");
        const Matrix Q = disc.reduction_basis();
        out.matrix = Q.adjoint() * g * Q;
    } else {
        out.matrix = g;
    }
    return out;
}

EquivarianceReport check_equivariance(const DiscreteSymmetry& g, const HermitianPath& path,
                                      int samples, double tol) {
    if (!path.A) throw StructureError("check_equivariance: empty path");
    if (path.dim != g.dim())
        throw DimensionError("check_equivariance: path and symmetry dimensions differ");
    if (samples < 1) throw StructureError("check_equivariance: need at least one sample");

    EquivarianceReport rep;
    rep.tol = tol;
    const double mid = 0.5 * (path.s0 + path.s1), half = 0.5 * (path.s1 - path.s0);
    const Matrix gs = g.matrix.adjoint();
    for (int i = 0; i < samples; ++i) {
        const double s = mid + half * std::cos(M_PI * (2 * i + 1) / (2.0 * samples));
        const Matrix A = path.A(s);
        if (A.rows() != path.dim || A.cols() != path.dim)
            throw DimensionError("check_equivariance: path sample has the wrong size");
        const double res = (gs * A * g.matrix - A).norm() / std::max(A.norm(), 1e-300);
        rep.max_residual = std::max(rep.max_residual, res);
    }
    rep.passed = rep.max_residual <= tol;
    return rep;
}

HermitianPath compress(const HermitianPath& path, const Matrix& U) {
    if (!path.A) throw StructureError("compress: empty path");
    if (U.rows() != path.dim)
        throw DimensionError("compress: basis rows do not match the path dimension");
    const int r = static_cast<int>(U.cols());
    if ((U.adjoint() * U - Matrix::Identity(r, r)).norm() > 1e-10 * std::max(1.0, double(r)))
        throw StructureError("compress: basis must be orthonormal");

    HermitianPath out;
    out.s0 = path.s0;
    out.s1 = path.s1;
    out.dim = r;
    auto inner = path.A;
    out.A = [inner, U](double s) { return (U.adjoint() * inner(s) * U).eval(); };
    if (path.has_mass()) out.mass = U.adjoint() * path.mass * U;
    return out;
}

OrthogonalityReport a_orthogonality_check(const Matrix& A, const MatrixLikeDecomposition& dec,
                                          double tol) {
    const int d = static_cast<int>(A.rows());
    if (A.cols() != d || d != dec.dim)
        throw DimensionError("a_orthogonality_check: operator and decomposition sizes differ");
    const double anorm = std::max(A.norm(), 1e-300);
    if ((A - A.adjoint()).norm() > 1e-8 * anorm)
        throw StructureError("a_orthogonality_check: operator is not Hermitian");

    OrthogonalityReport rep;
    const int k = static_cast<int>(dec.spaces.size());
    for (int i = 0; i < k; ++i) {
        for (int j = i; j < k; ++j) {
            const Complex prod = dec.spaces[i].lambda * std::conj(dec.spaces[j].lambda);
            if (std::abs(prod - 1.0) <= 1e-6 * std::max(1.0, std::abs(prod))) continue;
            const double res =
                (dec.spaces[i].basis.adjoint() * A * dec.spaces[j].basis).norm() / anorm;
            rep.max_pairing_residual = std::max(rep.max_pairing_residual, res);
            ++rep.pairs_checked;
        }
    }
    rep.pairing_ok = rep.max_pairing_residual <= tol;

    Eigen::SelfAdjointEigenSolver<Matrix> es(A);
    const double scale = std::max(es.eigenvalues().cwiseAbs().maxCoeff(), 1e-300);
    std::vector<int> ker_cols;
    for (int i = 0; i < d; ++i)
        if (std::abs(es.eigenvalues()[i]) <= 1e-8 * scale) ker_cols.push_back(i);
    rep.kernel_dim = static_cast<int>(ker_cols.size());

    rep.kernel_split.assign(static_cast<size_t>(k), 0);
    int split_sum = 0;
    if (rep.kernel_dim > 0) {
        Matrix K(d, rep.kernel_dim);
        for (int c = 0; c < rep.kernel_dim; ++c) K.col(c) = es.eigenvectors().col(ker_cols[c]);
        const Subspace kernel = Subspace::span(K);
        for (int i = 0; i < k; ++i) {
            rep.kernel_split[static_cast<size_t>(i)] =
                intersection_dimension(kernel, Subspace::span(dec.spaces[i].basis));
            split_sum += rep.kernel_split[static_cast<size_t>(i)];
        }
    }
    rep.kernel_decomposes = split_sum == rep.kernel_dim;
    rep.passed = rep.pairing_ok && rep.kernel_decomposes;
    return rep;
}

DecompositionReport decompose_spectral_flow(const HermitianPath& path, const DiscreteSymmetry& g,
                                            const DecomposeOptions& opts) {
    if (!path.A) throw StructureError("decompose_spectral_flow: empty path");
    if (path.dim != g.dim())
        throw DimensionError("decompose_spectral_flow: path and symmetry dimensions differ");

    const EquivarianceReport eq = check_equivariance(g, path, opts.samples, opts.tol);
    if (!eq.passed)
        throw StructureError(
            "decompose_spectral_flow: path is not equivariant under the symmetry (residual " +
            std::to_string(eq.max_residual) + ")");

    const MatrixLikeDecomposition dec = generalized_eigenspaces(g.matrix, opts.cluster_tol);
    const SpectralGrouping grouping = group_spectral_pairs(dec, opts.circle_tol, opts.pairing_tol);

    // One kernel tolerance for every block, anchored to the full path scale.
    double ktol = opts.sf.ktol;
    if (ktol < 0.0) {
        const Matrix* full_mass = path.has_mass() ? &path.mass : nullptr;
        const double sc = std::max(pencil_scale(path.A(path.s0), full_mass),
                                   pencil_scale(path.A(path.s1), full_mass));
        ktol = 1e-8 * std::max(sc, 1e-300);
    }

    DecompositionReport rep;
    int circle_sum = 0;
    for (const auto& grp : grouping.groups) {
        BlockFlow blk;
        blk.on_circle = grp.on_circle;
        for (int idx : grp.members)
            blk.eigenvalues.push_back(dec.spaces[static_cast<size_t>(idx)].lambda);
        blk.dim = static_cast<int>(grp.basis.cols());

        const HermitianPath sub = compress(path, grp.basis);
        const Matrix* mass = sub.has_mass() ? &sub.mass : nullptr;
        blk.kernel_start = pencil_kernel_dim(sub.A(sub.s0), mass, ktol);
        blk.kernel_end = pencil_kernel_dim(sub.A(sub.s1), mass, ktol);
        if (grp.on_circle) {
            blk.detail = spectral_flow(sub, opts.sf);
            blk.sf = blk.detail.sf;
            circle_sum += blk.sf;
        } else {
            if ((blk.kernel_end - blk.kernel_start) % 2 != 0)
                throw IdentityError(
                    "decompose_spectral_flow: odd kernel change on a hyperbolic block; "
                    "equivariance or eigenvalue grouping must be broken");
            blk.sf = (blk.kernel_end - blk.kernel_start) / 2;
        }
        rep.blocks.push_back(std::move(blk));
    }

    rep.hat_dim = static_cast<int>(grouping.off_circle_basis.cols());
    if (rep.hat_dim > 0) {
        const HermitianPath hat = compress(path, grouping.off_circle_basis);
        const Matrix* mass = hat.has_mass() ? &hat.mass : nullptr;
        rep.hat_kernel_start = pencil_kernel_dim(hat.A(hat.s0), mass, ktol);
        rep.hat_kernel_end = pencil_kernel_dim(hat.A(hat.s1), mass, ktol);
        if ((rep.hat_kernel_end - rep.hat_kernel_start) % 2 != 0)
            throw IdentityError(
                "decompose_spectral_flow: odd kernel change on the hyperbolic union; "
                "equivariance or eigenvalue grouping must be broken");
        rep.hat_term = (rep.hat_kernel_end - rep.hat_kernel_start) / 2;
    }

    rep.total = circle_sum + rep.hat_term;
    rep.direct = spectral_flow(path, opts.sf);
    rep.residual = rep.total - rep.direct.sf;
    return rep;
}

}
