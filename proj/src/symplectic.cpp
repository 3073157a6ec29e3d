#include "specflow/symplectic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <Eigen/SVD>

namespace specflow {

namespace {

std::string shape_of(const Matrix& M) {
    std::ostringstream os;
    os << M.rows() << "x" << M.cols();
    return os.str();
}

void require_square(const Matrix& M, const char* who) {
    if (M.rows() != M.cols() || M.rows() == 0)
        throw DimensionError(std::string(who) + ": expected a nonempty square matrix, got " + shape_of(M));
}

Matrix orthonormalize(const Matrix& cols) {
    Eigen::HouseholderQR<Matrix> qr(cols);
    Matrix Q = qr.householderQ() * Matrix::Identity(cols.rows(), cols.cols());
    return Q;
}

double spectral_norm(const Matrix& M) {
    if (M.size() == 0) return 0.0;
    return Eigen::JacobiSVD<Matrix>(M).singularValues()(0);
}

}

Matrix standard_J(int n) {
    if (n <= 0) throw DimensionError("standard_J: n must be positive");
    Matrix J = Matrix::Zero(2 * n, 2 * n);
    J.topRightCorner(n, n) = -Matrix::Identity(n, n);
    J.bottomLeftCorner(n, n) = Matrix::Identity(n, n);
    return J;
}

SymplecticForm SymplecticForm::standard(int n) {
    return SymplecticForm(standard_J(n));
}

SymplecticForm SymplecticForm::doubled(int n) {
    Matrix J = standard_J(n);
    Matrix D = Matrix::Zero(4 * n, 4 * n);
    D.topLeftCorner(2 * n, 2 * n) = -J;
    D.bottomRightCorner(2 * n, 2 * n) = J;
    return SymplecticForm(std::move(D));
}

double symplectic_residual(const SymplecticForm& form, const Matrix& M) {
    require_square(M, "symplectic_residual");
    if (M.rows() != form.dim())
        throw DimensionError("symplectic_residual: matrix size " + shape_of(M) +
                             " does not match form dimension " + std::to_string(form.dim()));
    const Matrix& J = form.J();
    return (M.adjoint() * J * M - J).norm() / J.norm();
}

double anti_symplectic_residual(const SymplecticForm& form, const Matrix& M) {
    require_square(M, "anti_symplectic_residual");
    if (M.rows() != form.dim())
        throw DimensionError("anti_symplectic_residual: matrix size " + shape_of(M) +
                             " does not match form dimension " + std::to_string(form.dim()));
    const Matrix& J = form.J();
    return (M.adjoint() * J * M + J).norm() / J.norm();
}

bool is_symplectic(const SymplecticForm& form, const Matrix& M, double tol) {
    return symplectic_residual(form, M) <= tol;
}

bool is_anti_symplectic(const SymplecticForm& form, const Matrix& M, double tol) {
    return anti_symplectic_residual(form, M) <= tol;
}

bool is_symplectic(const Matrix& M, double tol) {
    require_square(M, "is_symplectic");
    if (M.rows() % 2 != 0)
        throw DimensionError("is_symplectic: odd dimension " + std::to_string(M.rows()));
    return is_symplectic(SymplecticForm::standard(static_cast<int>(M.rows()) / 2), M, tol);
}

bool is_anti_symplectic(const Matrix& M, double tol) {
    require_square(M, "is_anti_symplectic");
    if (M.rows() % 2 != 0)
        throw DimensionError("is_anti_symplectic: odd dimension " + std::to_string(M.rows()));
    return is_anti_symplectic(SymplecticForm::standard(static_cast<int>(M.rows()) / 2), M, tol);
}

Subspace Subspace::from_columns(const Matrix& cols, double rank_tol) {
    Subspace s;
    if (cols.cols() == 0) {
        s.U_ = Matrix::Zero(cols.rows(), 0);
        return s;
    }
    Eigen::JacobiSVD<Matrix> svd(cols, Eigen::ComputeThinU);
    const auto& sigma = svd.singularValues();
    int r = 0;
    for (int i = 0; i < sigma.size(); ++i)
        if (sigma(i) > rank_tol * sigma(0)) ++r;
    s.U_ = svd.matrixU().leftCols(r);
    return s;
}

Subspace Subspace::span(const Matrix& cols, double rank_tol) {
    if (cols.cols() == 0) return from_columns(cols, rank_tol);
    Eigen::JacobiSVD<Matrix> svd(cols, Eigen::ComputeThinU);
    const auto& sigma = svd.singularValues();
    if (sigma(sigma.size() - 1) <= rank_tol * sigma(0))
        throw StructureError("Subspace::span: columns are numerically dependent (sigma_min/sigma_max = " +
                             std::to_string(sigma(sigma.size() - 1) / sigma(0)) + ")");
    Subspace s;
    s.U_ = svd.matrixU();
    return s;
}

LagrangianFrame::LagrangianFrame(const SymplecticForm& form, const Matrix& columns, double tol) {
    const int d = form.dim();
    const int n = form.lagrangian_dim();
    if (columns.rows() != d || columns.cols() != n)
        throw DimensionError("LagrangianFrame: expected " + std::to_string(d) + "x" + std::to_string(n) +
                             " columns, got " + shape_of(columns));
    Eigen::JacobiSVD<Matrix> svd(columns, Eigen::ComputeThinU);
    const auto& sigma = svd.singularValues();
    if (sigma(n - 1) <= tol * sigma(0))
        throw StructureError("LagrangianFrame: columns are rank-deficient (sigma_min/sigma_max = " +
                             std::to_string(sigma(n - 1) / sigma(0)) + ")");
    U_ = svd.matrixU();
    isotropy_ = (U_.adjoint() * form.J() * U_).norm();
    if (isotropy_ > tol * std::sqrt(static_cast<double>(n)))
        throw StructureError("LagrangianFrame: span is not isotropic (residual " +
                             std::to_string(isotropy_) + ")");
}

LagrangianFrame graph_lagrangian(const SymplecticForm& doubled, const Matrix& P, double tol) {
    const int d = doubled.dim() / 2;
    require_square(P, "graph_lagrangian");
    if (P.rows() != d)
        throw DimensionError("graph_lagrangian: map size " + shape_of(P) +
                             " does not match half-dimension " + std::to_string(d));
    Matrix cols(2 * d, d);
    cols.topRows(d) = Matrix::Identity(d, d);
    cols.bottomRows(d) = P;
    return LagrangianFrame(doubled, cols, tol);
}

LagrangianFrame boundary_graph(const SymplecticForm& doubled, const Matrix& S, double tol) {
    const int d = doubled.dim() / 2;
    require_square(S, "boundary_graph");
    if (S.rows() != d)
        throw DimensionError("boundary_graph: map size " + shape_of(S) +
                             " does not match half-dimension " + std::to_string(d));
    Matrix cols(2 * d, d);
    cols.topRows(d) = S;
    cols.bottomRows(d) = Matrix::Identity(d, d);
    return LagrangianFrame(doubled, cols, tol);
}

LagrangianFrame boundary_separated(const SymplecticForm& doubled,
                                   const LagrangianFrame& V0,
                                   const LagrangianFrame& V1,
                                   double tol) {
    const int d = doubled.dim() / 2;
    if (V0.ambient_dim() != d || V1.ambient_dim() != d)
        throw DimensionError("boundary_separated: endpoint Lagrangians do not match the doubled form");
    Matrix cols = Matrix::Zero(2 * d, d);
    cols.topLeftCorner(d, V0.dim()) = V0.basis();
    cols.bottomRightCorner(d, V1.dim()) = V1.basis();
    return LagrangianFrame(doubled, cols, tol);
}

LagrangianFrame reflection_eigenspace(const SymplecticForm& form, const Matrix& N,
                                      int sign, double tol) {
    if (sign != 1 && sign != -1)
        throw StructureError("reflection_eigenspace: sign must be +1 or -1");
    require_square(N, "reflection_eigenspace");
    if (N.rows() != form.dim())
        throw DimensionError("reflection_eigenspace: matrix size " + shape_of(N) +
                             " does not match form dimension " + std::to_string(form.dim()));
    const int d = form.dim();
    Matrix shifted = N - static_cast<double>(sign) * Matrix::Identity(d, d);
    Eigen::JacobiSVD<Matrix> svd(shifted, Eigen::ComputeFullV);
    const auto& sigma = svd.singularValues();
    const double scale = std::max(1.0, sigma(0));
    int rank = 0;
    for (int i = 0; i < sigma.size(); ++i)
        if (sigma(i) > tol * scale) ++rank;
    Matrix kernel = svd.matrixV().rightCols(d - rank);
    if (kernel.cols() != form.lagrangian_dim())
        throw StructureError("reflection_eigenspace: eigenspace of sign " + std::to_string(sign) +
                             " has dimension " + std::to_string(kernel.cols()) +
                             ", expected " + std::to_string(form.lagrangian_dim()));
    return LagrangianFrame(form, kernel, tol);
}

int intersection_dimension(const Subspace& a, const Subspace& b, double tol) {
    if (a.ambient_dim() != b.ambient_dim())
        throw DimensionError("intersection_dimension: ambient dimensions differ");
    if (a.dim() == 0 || b.dim() == 0) return 0;
    Eigen::JacobiSVD<Matrix> svd(a.basis().adjoint() * b.basis());
    const auto& c = svd.singularValues();
    int count = 0;
    for (int i = 0; i < c.size(); ++i)
        if (c(i) >= 1.0 - tol) ++count;
    return count;
}

int intersection_dimension(const LagrangianFrame& a, const LagrangianFrame& b, double tol) {
    return intersection_dimension(a.subspace(), b.subspace(), tol);
}

double gap_distance(const Subspace& a, const Subspace& b) {
    if (a.ambient_dim() != b.ambient_dim())
        throw DimensionError("gap_distance: ambient dimensions differ");
    return spectral_norm(a.projector() - b.projector());
}

double gap_distance(const LagrangianFrame& a, const LagrangianFrame& b) {
    return gap_distance(a.subspace(), b.subspace());
}

namespace {

/// Unitary similarity swapping the diagonal entries k, k+1 of the upper
/// triangular T, updating Q accordingly.
void schur_swap_adjacent(Matrix& T, Matrix& Q, int k) {
    const Complex t11 = T(k, k);
    const Complex t22 = T(k + 1, k + 1);
    const Complex d = t22 - t11;
    if (std::abs(d) == 0.0) return;
    const Complex x = T(k, k + 1) / d;
    const double r = std::sqrt(std::norm(x) + 1.0);
    Matrix G(2, 2);
    G(0, 0) = std::conj(x) / r; G(0, 1) = 1.0 / r;
    G(1, 0) = -1.0 / r;         G(1, 1) = x / r;
    T.middleRows(k, 2) = G * T.middleRows(k, 2);
    T.middleCols(k, 2) = T.middleCols(k, 2) * G.adjoint();
    Q.middleCols(k, 2) = Q.middleCols(k, 2) * G.adjoint();
    T(k + 1, k) = 0.0;
}

/// Moves the listed diagonal positions (ascending) to the leading slots and
/// returns the first positions.size() columns of the updated Q.
Matrix leading_invariant_columns(Matrix T, Matrix Q, std::vector<int> positions) {
    std::sort(positions.begin(), positions.end());
    for (std::size_t f = 0; f < positions.size(); ++f) {
        for (int p = positions[f]; p > static_cast<int>(f); --p)
            schur_swap_adjacent(T, Q, p - 1);
    }
    return Q.leftCols(static_cast<int>(positions.size()));
}

}

MatrixLikeDecomposition generalized_eigenspaces(const Matrix& g, double cluster_tol) {
    require_square(g, "generalized_eigenspaces");
    const int d = static_cast<int>(g.rows());
    Eigen::ComplexSchur<Matrix> schur(g, true);
    if (schur.info() != Eigen::Success)
        throw StructureError("generalized_eigenspaces: Schur decomposition failed");
    const Matrix T0 = schur.matrixT();
    const Matrix Q0 = schur.matrixU();

    std::vector<Complex> eig(d);
    for (int i = 0; i < d; ++i) eig[i] = T0(i, i);
    const double radius = cluster_tol * std::max(g.norm(), 1e-300);

    // transitive merge of eigenvalues within the cluster radius
    std::vector<int> parent(d);
    std::iota(parent.begin(), parent.end(), 0);
    std::function<int(int)> find = [&](int i) {
        while (parent[i] != i) { parent[i] = parent[parent[i]]; i = parent[i]; }
        return i;
    };
    for (int i = 0; i < d; ++i)
        for (int j = i + 1; j < d; ++j)
            if (std::abs(eig[i] - eig[j]) <= radius) parent[find(i)] = find(j);

    std::vector<std::vector<int>> clusters;
    std::vector<int> root_slot(d, -1);
    for (int i = 0; i < d; ++i) {
        int r = find(i);
        if (root_slot[r] < 0) {
            root_slot[r] = static_cast<int>(clusters.size());
            clusters.emplace_back();
        }
        clusters[root_slot[r]].push_back(i);
    }

    // ambiguity guard: surviving gaps must clear the merge radius comfortably
    double min_gap = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < clusters.size(); ++a)
        for (std::size_t b = a + 1; b < clusters.size(); ++b)
            for (int i : clusters[a])
                for (int j : clusters[b])
                    min_gap = std::min(min_gap, std::abs(eig[i] - eig[j]));
    if (clusters.size() > 1 && min_gap < 4.0 * radius)
        throw ToleranceError("generalized_eigenspaces: eigenvalue clusters are ambiguous, "
                             "inter-cluster gap " + std::to_string(min_gap) +
                             " vs merge radius " + std::to_string(radius), min_gap);

    MatrixLikeDecomposition dec;
    dec.cluster_radius = radius;
    dec.dim = d;
    for (const auto& members : clusters) {
        GeneralizedEigenspace sp;
        Complex sum = 0.0;
        for (int i : members) {
            sp.eigenvalues.push_back(eig[i]);
            sum += eig[i];
        }
        sp.lambda = sum / static_cast<double>(members.size());
        sp.basis = leading_invariant_columns(T0, Q0, members);
        dec.spaces.push_back(std::move(sp));
    }
    std::sort(dec.spaces.begin(), dec.spaces.end(),
              [](const GeneralizedEigenspace& a, const GeneralizedEigenspace& b) {
                  if (std::abs(a.lambda) != std::abs(b.lambda)) return std::abs(a.lambda) < std::abs(b.lambda);
                  return std::arg(a.lambda) < std::arg(b.lambda);
              });
    return dec;
}

Matrix invariant_subspace(const Matrix& g, const std::function<bool(Complex)>& select,
                          double cluster_tol) {
    MatrixLikeDecomposition dec = generalized_eigenspaces(g, cluster_tol);
    std::vector<const GeneralizedEigenspace*> picked;
    int total = 0;
    for (const auto& sp : dec.spaces)
        if (select(sp.lambda)) {
            picked.push_back(&sp);
            total += sp.algebraic_multiplicity();
        }
    Matrix cols(g.rows(), total);
    int at = 0;
    for (const auto* sp : picked) {
        cols.middleCols(at, sp->basis.cols()) = sp->basis;
        at += static_cast<int>(sp->basis.cols());
    }
    return Subspace::span(cols).basis();
}

SpectralGrouping group_spectral_pairs(const MatrixLikeDecomposition& dec,
                                      double circle_tol, double pairing_tol) {
    const int k = static_cast<int>(dec.spaces.size());
    std::vector<int> band(k);   // +1 on circle, 0 off circle
    for (int i = 0; i < k; ++i) {
        const double off = std::abs(std::abs(dec.spaces[i].lambda) - 1.0);
        if (off <= circle_tol) band[i] = 1;
        else if (off < 3.0 * circle_tol)
            throw ToleranceError("group_spectral_pairs: eigenvalue " +
                                 std::to_string(dec.spaces[i].lambda.real()) + "+" +
                                 std::to_string(dec.spaces[i].lambda.imag()) +
                                 "i sits in the unit-circle ambiguity band", off);
        else band[i] = 0;
    }

    SpectralGrouping grouping;
    std::vector<bool> used(k, false);
    std::vector<Matrix> off_bases;
    int off_total = 0;
    for (int i = 0; i < k; ++i) {
        if (used[i]) continue;
        used[i] = true;
        SpectralGroup group;
        group.members.push_back(i);
        if (band[i] == 1) {
            group.on_circle = true;
            group.basis = dec.spaces[i].basis;
        } else {
            const Complex target = 1.0 / std::conj(dec.spaces[i].lambda);
            int partner = -1;
            double best = std::numeric_limits<double>::infinity();
            for (int j = 0; j < k; ++j) {
                if (j == i || used[j]) continue;
                const double dist = std::abs(dec.spaces[j].lambda - target);
                if (dist < best) { best = dist; partner = j; }
            }
            if (partner < 0 || best > pairing_tol * std::max(1.0, std::abs(target)))
                throw ToleranceError("group_spectral_pairs: no spectral partner for eigenvalue off "
                                     "the unit circle (nearest distance " + std::to_string(best) + ")",
                                     best);
            used[partner] = true;
            group.members.push_back(partner);
            Matrix cols(dec.spaces[i].basis.rows(),
                        dec.spaces[i].basis.cols() + dec.spaces[partner].basis.cols());
            cols << dec.spaces[i].basis, dec.spaces[partner].basis;
            group.basis = Subspace::span(cols).basis();
            off_bases.push_back(group.basis);
            off_total += static_cast<int>(group.basis.cols());
        }
        grouping.groups.push_back(std::move(group));
    }

    if (off_total > 0) {
        Matrix cols(dec.spaces[0].basis.rows(), off_total);
        int at = 0;
        for (const auto& b : off_bases) {
            cols.middleCols(at, b.cols()) = b;
            at += static_cast<int>(b.cols());
        }
        grouping.off_circle_basis = Subspace::span(cols).basis();
    } else {
        grouping.off_circle_basis = Matrix::Zero(dec.dim, 0);
    }
    return grouping;
}

AntiSymplecticSpectrumReport anti_symplectic_spectrum_check(const Matrix& N, double tol) {
    require_square(N, "anti_symplectic_spectrum_check");
    if (N.rows() % 2 != 0)
        throw DimensionError("anti_symplectic_spectrum_check: odd dimension");
    const int n = static_cast<int>(N.rows()) / 2;
    const SymplecticForm form = SymplecticForm::standard(n);
    if (!is_anti_symplectic(form, N, std::max(tol, 1e-10)))
        throw StructureError("anti_symplectic_spectrum_check: matrix is not anti-symplectic "
                             "(residual " + std::to_string(anti_symplectic_residual(form, N)) + ")");

    MatrixLikeDecomposition dec = generalized_eigenspaces(N);
    auto geometric = [&](Complex lambda) {
        Matrix shifted = N - lambda * Matrix::Identity(N.rows(), N.cols());
        Eigen::JacobiSVD<Matrix> svd(shifted);
        const auto& sigma = svd.singularValues();
        const double scale = std::max(1.0, sigma(0));
        int rank = 0;
        for (int i = 0; i < sigma.size(); ++i)
            if (sigma(i) > tol * scale) ++rank;
        return static_cast<int>(N.rows()) - rank;
    };

    AntiSymplecticSpectrumReport report;
    report.spectrum_paired = true;
    const int k = static_cast<int>(dec.spaces.size());
    for (int i = 0; i < k; ++i) {
        const Complex lambda = dec.spaces[i].lambda;
        const Complex target = -1.0 / std::conj(lambda);
        int partner = -1;
        double best = std::numeric_limits<double>::infinity();
        for (int j = 0; j < k; ++j) {
            const double dist = std::abs(dec.spaces[j].lambda - target);
            if (dist < best) { best = dist; partner = j; }
        }
        EigenvaluePairing pairing;
        pairing.lambda = lambda;
        pairing.partner = dec.spaces[partner].lambda;
        pairing.algebraic = dec.spaces[i].algebraic_multiplicity();
        pairing.partner_algebraic = dec.spaces[partner].algebraic_multiplicity();
        pairing.geometric = geometric(lambda);
        pairing.partner_geometric = geometric(pairing.partner);
        if (best > tol * std::max(1.0, std::abs(target)) ||
            pairing.algebraic != pairing.partner_algebraic ||
            pairing.geometric != pairing.partner_geometric)
            report.spectrum_paired = false;
        report.pairs.push_back(pairing);
    }

    // J-orthogonality of generalized eigenspaces with lambda * conj(mu) != -1
    for (int i = 0; i < k; ++i) {
        for (int j = 0; j < k; ++j) {
            const Complex prod = dec.spaces[i].lambda * std::conj(dec.spaces[j].lambda);
            if (std::abs(prod + 1.0) <= 1e-6) continue;
            const double res = (dec.spaces[j].basis.adjoint() * form.J() * dec.spaces[i].basis).norm();
            report.max_j_orthogonality = std::max(report.max_j_orthogonality, res);
        }
    }
    return report;
}

}
