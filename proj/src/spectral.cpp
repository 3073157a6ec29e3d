#include "specflow/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

namespace specflow {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Matrix checked_hermitian(const Matrix& A, const char* what) {
    if (A.rows() != A.cols())
        throw DimensionError(std::string(what) + ": matrix is not square");
    const double scale = std::max(A.norm(), 1e-300);
    if ((A - A.adjoint()).norm() > 1e-8 * scale)
        throw StructureError(std::string(what) + ": matrix is not Hermitian");
    return 0.5 * (A + A.adjoint());
}

RealVector path_eigenvalues(const HermitianPath& path, double s) {
    const Matrix A = checked_hermitian(path.A(s), "spectral_flow");
    if (static_cast<int>(A.rows()) != path.dim)
        throw DimensionError("spectral_flow: sample size disagrees with declared dimension");
    if (!path.has_mass()) {
        Eigen::SelfAdjointEigenSolver<Matrix> es(A, Eigen::EigenvaluesOnly);
        return es.eigenvalues();
    }
    Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> es(A, path.mass,
                                                        Eigen::EigenvaluesOnly | Eigen::Ax_lBx);
    return es.eigenvalues();
}

/// What the window logic needs to know about one endpoint spectrum.
struct EndpointStats {
    int kernel = 0;            // |eig| <= ktol
    double min_above = kInf;   // smallest |eig| > ktol
    int guard_hits = 0;        // |eig| in (ktol, guard * ktol]
};

EndpointStats classify(const RealVector& ev, double ktol, double guard_factor) {
    EndpointStats st;
    for (int i = 0; i < ev.size(); ++i) {
        const double m = std::abs(ev[i]);
        if (m <= ktol) {
            ++st.kernel;
        } else {
            st.min_above = std::min(st.min_above, m);
            if (guard_factor > 1.0 && m <= guard_factor * ktol) ++st.guard_hits;
        }
    }
    return st;
}

int count_strictly_below(const RealVector& ev, double t) {
    int c = 0;
    for (int i = 0; i < ev.size(); ++i)
        if (ev[i] < t) ++c;
    return c;
}

SfReport assemble_report(const EndpointStats& a, const EndpointStats& b, double ktol) {
    SfReport rep;
    rep.ktol = ktol;
    rep.kernel_start = a.kernel;
    rep.kernel_end = b.kernel;
    rep.min_nonkernel = std::min(a.min_above, b.min_above);
    if (a.guard_hits + b.guard_hits > 0)
        throw ToleranceError("spectral_flow: endpoint eigenvalue inside the kernel guard band",
                             rep.min_nonkernel);
    if (rep.min_nonkernel == kInf) {
        // Both endpoint spectra are entirely kernel; any window works and
        // both counts are zero.
        rep.epsilon = ktol;
        rep.min_nonkernel = 0.0;
        return rep;
    }
    rep.epsilon = 0.5 * rep.min_nonkernel;
    if (rep.epsilon <= ktol)
        throw ToleranceError("spectral_flow: no eigenvalue window between the kernel "
                             "tolerance and the smallest nonzero endpoint eigenvalue",
                             rep.min_nonkernel);
    return rep;
}

}  // namespace

SfReport spectral_flow(const HermitianPath& path, const SfOptions& opts) {
    if (!path.A) throw StructureError("spectral_flow: path has no evaluator");
    if (path.has_mass()) {
        Eigen::LLT<Matrix> llt(path.mass);
        if (llt.info() != Eigen::Success)
            throw StructureError("spectral_flow: mass matrix is not positive definite");
    }
    const RealVector ev_a = path_eigenvalues(path, path.s0);
    const RealVector ev_b = path_eigenvalues(path, path.s1);
    const double scale = std::max({ev_a.size() ? ev_a.cwiseAbs().maxCoeff() : 0.0,
                                   ev_b.size() ? ev_b.cwiseAbs().maxCoeff() : 0.0, 1e-300});
    const double ktol = opts.ktol >= 0.0 ? opts.ktol : 1e-8 * scale;

    SfReport rep = assemble_report(classify(ev_a, ktol, opts.guard_factor),
                                   classify(ev_b, ktol, opts.guard_factor), ktol);
    rep.count_start = count_strictly_below(ev_a, -rep.epsilon);
    rep.count_end = count_strictly_below(ev_b, -rep.epsilon);
    rep.sf = rep.count_start - rep.count_end;

    if (opts.trace_samples > 1) {
        rep.trace.reserve(opts.trace_samples);
        for (int j = 0; j < opts.trace_samples; ++j) {
            const double s = path.s0 + (path.s1 - path.s0) * j / (opts.trace_samples - 1);
            rep.trace.push_back({s, count_strictly_below(path_eigenvalues(path, s), -rep.epsilon)});
        }
    }
    return rep;
}

int relative_morse_index(const Matrix& A, const Matrix& B, const SfOptions& opts) {
    return relative_morse_index(A, B, Matrix(), opts);
}

int relative_morse_index(const Matrix& A, const Matrix& B, const Matrix& mass,
                         const SfOptions& opts) {
    if (A.rows() != B.rows() || A.cols() != B.cols())
        throw DimensionError("relative_morse_index: size mismatch");
    HermitianPath path{0.0, 1.0, static_cast<int>(A.rows()),
                       [&A, &B](double s) { return (A - s * B).eval(); }, mass};
    return -spectral_flow(path, opts).sf;
}

int morse_index(const Matrix& A, double ktol) {
    const Matrix H = checked_hermitian(A, "morse_index");
    Eigen::SelfAdjointEigenSolver<Matrix> es(H, Eigen::EigenvaluesOnly);
    const RealVector& ev = es.eigenvalues();
    const double scale = std::max(ev.size() ? ev.cwiseAbs().maxCoeff() : 0.0, 1e-300);
    const double cut = ktol >= 0.0 ? ktol : 1e-8 * scale;
    return count_strictly_below(ev, -cut);
}

// ---------------------------------------------------------------------------
// Structured pencils

namespace {

int rows_of(const Matrix& m) { return static_cast<int>(m.rows()); }

/// Inertia elimination pass.  Throws ToleranceError when a pivot block is too
/// close to singular for a trustworthy count at this shift.
double frob_stiffness(const StructuredPencil& p) {
    double k2 = p.Kborder.squaredNorm();
    for (const Matrix& m : p.Kdiag) k2 += m.squaredNorm();
    for (const Matrix& m : p.Ksub) k2 += 2.0 * m.squaredNorm();
    for (const Matrix& m : p.Kbcol) k2 += 2.0 * m.squaredNorm();
    return std::sqrt(k2);
}

double frob_mass(const StructuredPencil& p) {
    double m2 = p.Mborder.squaredNorm();
    for (const Matrix& m : p.Mdiag) m2 += m.squaredNorm();
    for (const Matrix& m : p.Msub) m2 += 2.0 * m.squaredNorm();
    for (const Matrix& m : p.Mbcol) m2 += 2.0 * m.squaredNorm();
    return std::sqrt(m2);
}

// Negatives of the final pivot block.  The `gauge` smallest-magnitude
// eigenvalues are the elimination images of the pencil's common kernel and
// are dropped by rank: their computed values are pure rounding noise and can
// land on either side of any magnitude threshold once the chain elimination
// amplifies them.  Remaining eigenvalues inside the absolute tie window are
// queries at a pencil eigenvalue and resolve upward (not counted).
int count_final_block(const RealVector& lam, int gauge, double gscale) {
    std::vector<int> idx(static_cast<size_t>(lam.size()));
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(),
              [&lam](int a, int b) { return std::abs(lam[a]) < std::abs(lam[b]); });
    int negatives = 0;
    for (size_t r = static_cast<size_t>(std::max(gauge, 0)); r < idx.size(); ++r) {
        const double v = lam[idx[r]];
        if (std::abs(v) <= 1e-12 * gscale) continue;
        if (v < 0.0) ++negatives;
    }
    return negatives;
}

// Negative inertia of K - t * mass.  Zero tests use the global scale of the
// shifted pencil: a pivot block may consist entirely of near-zero entries
// (gauge directions funneled into the last block), where any block-local
// relative threshold would collapse.
int eliminate_count(const StructuredPencil& p, double t, double gscale) {
    const int q = p.chain_size();
    const bool border = p.has_border();
    Matrix Sb;
    if (border) Sb = p.Kborder - t * p.Mborder;

    int negatives = 0;
    Matrix carry_diag;    // pending Schur update for the next chain pivot
    Matrix carry_border;  // pending update to the border-row coupling of the next pivot

    for (int j = 0; j < q; ++j) {
        Matrix W = p.Kdiag[j] - t * p.Mdiag[j];
        if (carry_diag.size()) W += carry_diag;
        W = 0.5 * (W + W.adjoint().eval());

        Matrix R;  // border-row coupling to this pivot
        if (border && j < static_cast<int>(p.Kbcol.size())) {
            const bool has_k = p.Kbcol[j].size() != 0;
            const bool has_m = j < static_cast<int>(p.Mbcol.size()) && p.Mbcol[j].size() != 0;
            if (has_k && has_m)
                R = (p.Kbcol[j] - t * p.Mbcol[j]).adjoint();
            else if (has_k)
                R = p.Kbcol[j].adjoint();
            else if (has_m)
                R = (-t * p.Mbcol[j]).adjoint();
        }
        if (carry_border.size()) {
            if (R.size())
                R += carry_border;
            else
                R = carry_border;
        }

        Eigen::SelfAdjointEigenSolver<Matrix> es(W);
        const RealVector& lam = es.eigenvalues();

        // Without a border the last chain block is the final pivot: nothing
        // is eliminated against it, so count it (rank-dropping the gauge
        // images) and stop.
        if (!border && j + 1 == q) {
            negatives += count_final_block(lam, p.gauge_dim, gscale);
            break;
        }

        RealVector inv(lam.size());
        for (int i = 0; i < lam.size(); ++i) {
            if (std::abs(lam[i]) <= 1e-12 * gscale)
                throw ToleranceError("count_below: singular pivot block", std::abs(lam[i]));
            if (lam[i] < 0.0) ++negatives;
            inv[i] = 1.0 / lam[i];
        }
        const Matrix Pinv = es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().adjoint();

        carry_diag = Matrix();
        carry_border = Matrix();
        if (j + 1 < q) {
            const Matrix E = p.Ksub[j] - t * p.Msub[j];
            carry_diag = -(E * Pinv * E.adjoint());
            if (R.size()) carry_border = -(R * Pinv * E.adjoint());
        }
        if (border && R.size()) Sb -= R * Pinv * R.adjoint();
    }

    if (border) {
        Sb = 0.5 * (Sb + Sb.adjoint().eval());
        Eigen::SelfAdjointEigenSolver<Matrix> es(Sb, Eigen::EigenvaluesOnly);
        negatives += count_final_block(es.eigenvalues(), p.gauge_dim, gscale);
    }
    return negatives;
}

}  // namespace

int StructuredPencil::dim() const {
    int d = 0;
    for (const Matrix& m : Kdiag) d += rows_of(m);
    if (has_border()) d += rows_of(Kborder);
    return d;
}

double StructuredPencil::eigenvalue_scale() const {
    return frob_stiffness(*this) / std::max(frob_mass(*this), 1e-300);
}

Matrix StructuredPencil::dense_stiffness() const {
    const int d = dim();
    Matrix K = Matrix::Zero(d, d);
    std::vector<int> off(chain_size() + 1, 0);
    for (int j = 0; j < chain_size(); ++j) off[j + 1] = off[j] + rows_of(Kdiag[j]);
    for (int j = 0; j < chain_size(); ++j)
        K.block(off[j], off[j], rows_of(Kdiag[j]), rows_of(Kdiag[j])) = Kdiag[j];
    for (int j = 0; j + 1 < chain_size(); ++j) {
        K.block(off[j + 1], off[j], rows_of(Kdiag[j + 1]), rows_of(Kdiag[j])) = Ksub[j];
        K.block(off[j], off[j + 1], rows_of(Kdiag[j]), rows_of(Kdiag[j + 1])) = Ksub[j].adjoint();
    }
    if (has_border()) {
        const int b0 = off[chain_size()], nb = rows_of(Kborder);
        K.block(b0, b0, nb, nb) = Kborder;
        for (int j = 0; j < static_cast<int>(Kbcol.size()); ++j) {
            if (!Kbcol[j].size()) continue;
            K.block(off[j], b0, rows_of(Kdiag[j]), nb) = Kbcol[j];
            K.block(b0, off[j], nb, rows_of(Kdiag[j])) = Kbcol[j].adjoint();
        }
    }
    return K;
}

Matrix StructuredPencil::dense_mass() const {
    StructuredPencil m;
    m.Kdiag = Mdiag;
    m.Ksub = Msub;
    m.Kborder = Mborder;
    m.Kbcol = Mbcol;
    return m.dense_stiffness();
}

double StructuredPencil::stiffness_norm() const { return frob_stiffness(*this); }
double StructuredPencil::mass_norm() const { return frob_mass(*this); }

namespace {

Matrix blocks_apply(const StructuredPencil& p, bool mass, const Matrix& X) {
    const int q = p.chain_size();
    std::vector<int> off(q + 1, 0);
    for (int j = 0; j < q; ++j) off[j + 1] = off[j] + rows_of(p.Kdiag[j]);
    const int nb = p.has_border() ? rows_of(p.Kborder) : 0;
    if (X.rows() != off[q] + nb)
        throw DimensionError("StructuredPencil::apply: operand height disagrees with layout");
    Matrix Y = Matrix::Zero(X.rows(), X.cols());

    auto add = [&X, &Y](const Matrix& blk, int row, int col, int rows, int cols) {
        if (!blk.size()) return;
        Y.middleRows(row, rows) += blk * X.middleRows(col, cols);
        if (row != col) Y.middleRows(col, cols) += blk.adjoint() * X.middleRows(row, rows);
    };

    const std::vector<Matrix>& diag = mass ? p.Mdiag : p.Kdiag;
    const std::vector<Matrix>& sub = mass ? p.Msub : p.Ksub;
    const std::vector<Matrix>& bcol = mass ? p.Mbcol : p.Kbcol;
    for (int j = 0; j < q; ++j) {
        const int nj = rows_of(p.Kdiag[j]);
        if (j < static_cast<int>(diag.size())) add(diag[j], off[j], off[j], nj, nj);
        if (j + 1 < q && j < static_cast<int>(sub.size()))
            add(sub[j], off[j + 1], off[j], rows_of(p.Kdiag[j + 1]), nj);
        if (nb && j < static_cast<int>(bcol.size()))
            add(bcol[j], off[j], off[q], nj, nb);
    }
    if (nb) add(mass ? p.Mborder : p.Kborder, off[q], off[q], nb, nb);
    return Y;
}

}  // namespace

Matrix StructuredPencil::apply_stiffness(const Matrix& X) const {
    return blocks_apply(*this, false, X);
}

Matrix StructuredPencil::apply_mass(const Matrix& X) const { return blocks_apply(*this, true, X); }

int StructuredPencil::count_below(double t) const {
    const double delta = 1e-11 * (std::abs(t) + eigenvalue_scale());
    const double gscale =
        std::max(frob_stiffness(*this) + std::abs(t) * frob_mass(*this), 1e-300);
    const double shifts[] = {0.0, delta, -delta, 7.0 * delta, -7.0 * delta};
    for (double sh : shifts) {
        try {
            return eliminate_count(*this, t + sh, gscale);
        } catch (const ToleranceError&) {
            if (sh == shifts[4]) throw;
        }
    }
    throw ToleranceError("count_below: persistent pivot breakdown");
}

namespace {

/// Smallest eigenvalue magnitude above ktol on the positive side, or +inf.
double smallest_positive_above(const StructuredPencil& p, double ktol, double scale, int dim) {
    const int base = p.count_below(ktol);
    if (base >= dim) return kInf;
    double hi = std::max(4.0 * ktol, scale);
    while (p.count_below(hi) == base) {
        hi *= 8.0;
        if (hi > 1e12 * std::max(scale, ktol)) return kInf;
    }
    double lo = ktol;
    while (hi - lo > 1e-9 * hi) {
        const double mid = 0.5 * (lo + hi);
        if (p.count_below(mid) > base)
            hi = mid;
        else
            lo = mid;
    }
    return hi;
}

/// Smallest eigenvalue magnitude above ktol on the negative side, or +inf.
double smallest_negative_above(const StructuredPencil& p, double ktol, double scale) {
    const int base = p.count_below(-ktol);  // eigenvalues below -ktol
    if (base == 0) return kInf;
    double hi = std::max(4.0 * ktol, scale);
    while (p.count_below(-hi) == base) {
        hi *= 8.0;
        if (hi > 1e12 * std::max(scale, ktol))
            throw ToleranceError("spectral_flow: negative spectrum out of search range");
    }
    double lo = ktol;
    while (hi - lo > 1e-9 * hi) {
        const double mid = 0.5 * (lo + hi);
        if (p.count_below(-mid) < base)
            hi = mid;
        else
            lo = mid;
    }
    return hi;
}

EndpointStats structured_stats(const StructuredPencil& p, double ktol, double guard_factor) {
    EndpointStats st;
    const double scale = p.eigenvalue_scale();
    st.kernel = p.count_below(ktol) - p.count_below(-ktol);
    st.min_above = std::min(smallest_positive_above(p, ktol, scale, p.dim()),
                            smallest_negative_above(p, ktol, scale));
    if (guard_factor > 1.0) {
        st.guard_hits = (p.count_below(guard_factor * ktol) - p.count_below(ktol)) +
                        (p.count_below(-ktol) - p.count_below(-guard_factor * ktol));
    }
    return st;
}

}  // namespace

SfReport spectral_flow(const StructuredPath& path, const SfOptions& opts) {
    if (!path.at) throw StructureError("spectral_flow: path has no evaluator");
    const StructuredPencil pa = path.at(path.s0);
    const StructuredPencil pb = path.at(path.s1);
    if (pa.dim() != pb.dim())
        throw DimensionError("spectral_flow: endpoint pencils differ in size");
    const double scale = std::max({pa.eigenvalue_scale(), pb.eigenvalue_scale(), 1e-300});
    const double ktol = opts.ktol >= 0.0 ? opts.ktol : 1e-8 * scale;

    SfReport rep = assemble_report(structured_stats(pa, ktol, opts.guard_factor),
                                   structured_stats(pb, ktol, opts.guard_factor), ktol);
    rep.count_start = pa.count_below(-rep.epsilon);
    rep.count_end = pb.count_below(-rep.epsilon);
    rep.sf = rep.count_start - rep.count_end;

    if (opts.trace_samples > 1) {
        rep.trace.reserve(opts.trace_samples);
        for (int j = 0; j < opts.trace_samples; ++j) {
            const double s = path.s0 + (path.s1 - path.s0) * j / (opts.trace_samples - 1);
            rep.trace.push_back({s, path.at(s).count_below(-rep.epsilon)});
        }
    }
    return rep;
}

}
