#include "specflow/maslov.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

namespace specflow {

namespace {

/// sigma_min of the stacked frame [U1, -U2], computed through the largest
/// principal-angle cosine: sigma_min^2 = 1 - sigma_max(U1^* U2).
double stacked_indicator(const LagrangianFrame& f1, const LagrangianFrame& f2) {
    Eigen::JacobiSVD<Matrix> svd(f1.basis().adjoint() * f2.basis());
    const double smax = svd.singularValues().size() ? svd.singularValues()[0] : 0.0;
    return std::sqrt(std::max(0.0, 1.0 - smax));
}

/// Orthonormal basis of range(U1) cap range(U2): principal vectors of
/// U1^* U2 whose singular value is within tol of 1, mapped through U1.
Matrix intersection_basis(const LagrangianFrame& f1, const LagrangianFrame& f2, double tol) {
    Eigen::JacobiSVD<Matrix> svd(f1.basis().adjoint() * f2.basis(), Eigen::ComputeFullU);
    const auto& sv = svd.singularValues();
    int d = 0;
    while (d < sv.size() && sv[d] >= 1.0 - tol) ++d;
    return f1.basis() * svd.matrixU().leftCols(d);
}

struct PairPath {
    const SymplecticForm& form;
    const LagrangianPath& L1;
    const LagrangianPath& L2;

    Matrix projector_gap(double t) const {
        return (L2.frame(t).projector() - L1.frame(t).projector()).eval();
    }

    /// d/dt (P2 - P1) at t0, second order plus one Richardson step.  The
    /// stencil turns one-sided within h of a domain end.
    Matrix gap_derivative(double t0, double h) const {
        auto central = [this, t0](double step) {
            return ((projector_gap(t0 + step) - projector_gap(t0 - step)) / (2.0 * step)).eval();
        };
        if (t0 - h >= L1.a && t0 + h <= L1.b)
            return (4.0 * central(0.5 * h) - central(h)) / 3.0;
        const double dir = (t0 - h < L1.a) ? 1.0 : -1.0;  // lean away from the nearby end
        const Matrix base = projector_gap(t0);
        auto sided = [this, t0, dir, &base](double step) {
            return ((-3.0 * base + 4.0 * projector_gap(t0 + dir * step) -
                     projector_gap(t0 + 2.0 * dir * step)) /
                    (2.0 * dir * step))
                .eval();
        };
        return (4.0 * sided(0.5 * h) - sided(h)) / 3.0;
    }

    /// Crossing form on the given orthonormal intersection basis.
    Matrix form_on(const Matrix& V, double t0, double h) const {
        const Matrix G = (gap_derivative(t0, h) * V).adjoint() * (form.J() * V);
        return 0.5 * (G + G.adjoint());
    }
};

double golden_minimize(const std::function<double(double)>& f, double lo, double hi,
                       double tol, double* fmin) {
    constexpr double inv_phi = 0.6180339887498949;
    double x1 = hi - inv_phi * (hi - lo), x2 = lo + inv_phi * (hi - lo);
    double f1 = f(x1), f2 = f(x2);
    for (int it = 0; it < 200 && hi - lo > tol; ++it) {
        if (f1 <= f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    const double xm = 0.5 * (lo + hi);
    if (fmin) *fmin = std::min(std::min(f1, f2), f(xm));
    return xm;
}

CrossingRecord make_record(const PairPath& pp, double t, CrossingRecord::Where where, double h,
                           const MaslovOptions& opts) {
    CrossingRecord rec;
    rec.t = t;
    rec.where = where;
    const Matrix V = intersection_basis(pp.L1.frame(t), pp.L2.frame(t), opts.intersect_tol);
    rec.dimension = static_cast<int>(V.cols());
    if (rec.dimension == 0)
        throw ResolutionError(
            "maslov_index: crossing indicator vanishes but no principal angle closes; "
            "the crossing could not be resolved at t = " +
            std::to_string(t));
    rec.form = pp.form_on(V, t, h);
    Eigen::SelfAdjointEigenSolver<Matrix> es(rec.form, Eigen::EigenvaluesOnly);
    const RealVector& lam = es.eigenvalues();
    // The absolute floor 1/(b - a) keeps a fully stalled crossing (form close
    // to zero in every direction) from passing a purely relative test.
    const double scale =
        std::max(lam.cwiseAbs().maxCoeff(), 1.0 / (pp.L1.b - pp.L1.a));
    for (int i = 0; i < lam.size(); ++i) {
        if (std::abs(lam[i]) <= opts.degeneracy_tol * scale)
            throw DegenerateCrossingError(
                "maslov_index: degenerate crossing form (refine or perturb the family "
                "within its homotopy class)",
                t, std::abs(lam[i]));
        if (lam[i] > 0.0)
            ++rec.positive;
        else
            ++rec.negative;
    }
    switch (where) {
        case CrossingRecord::Where::Left:
            rec.contribution = rec.positive;
            break;
        case CrossingRecord::Where::Interior:
            rec.contribution = rec.positive - rec.negative;
            break;
        case CrossingRecord::Where::Right:
            rec.contribution = -rec.negative;
            break;
    }
    return rec;
}

}  // namespace

Matrix crossing_form(const SymplecticForm& form, const LagrangianPath& L1,
                     const LagrangianPath& L2, double t0, double h, double intersect_tol) {
    if (!L1.frame || !L2.frame) throw StructureError("crossing_form: path has no evaluator");
    const PairPath pp{form, L1, L2};
    const Matrix V = intersection_basis(L1.frame(t0), L2.frame(t0), intersect_tol);
    if (V.cols() == 0)
        throw StructureError("crossing_form: the paths do not intersect at the given time");
    return pp.form_on(V, t0, h);
}

MaslovReport maslov_index(const SymplecticForm& form, const LagrangianPath& L1,
                          const LagrangianPath& L2, const MaslovOptions& opts) {
    if (!L1.frame || !L2.frame) throw StructureError("maslov_index: path has no evaluator");
    if (!L1.piecewise_c1 || !L2.piecewise_c1)
        throw StructureError("maslov_index: crossing forms need piecewise-C1 paths");
    const double a = L1.a, b = L1.b, span = b - a;
    if (!(span > 0.0)) throw StructureError("maslov_index: empty or reversed domain");
    if (std::abs(L2.a - a) > 1e-12 * std::max(1.0, std::abs(a)) ||
        std::abs(L2.b - b) > 1e-12 * std::max(1.0, std::abs(b)))
        throw DimensionError("maslov_index: the two paths live on different intervals");
    if (opts.grid < 9) throw StructureError("maslov_index: scan grid too coarse");
    if (L1.frame(a).ambient_dim() != form.dim() || L2.frame(a).ambient_dim() != form.dim())
        throw DimensionError("maslov_index: frame dimension disagrees with the symplectic form");

    const PairPath pp{form, L1, L2};
    const double time_tol = opts.time_tol_scale * span;
    const double merge_radius = 100.0 * time_tol;
    const double h = opts.fd_scale * span;
    auto indicator = [&pp](double t) { return stacked_indicator(pp.L1.frame(t), pp.L2.frame(t)); };

    const int N = opts.grid;
    std::vector<double> tn(N), ind(N);
    for (int i = 0; i < N; ++i) {
        tn[i] = a + span * i / (N - 1);
        ind[i] = indicator(tn[i]);
    }

    // A stretch of nodes sitting on the intersection locus means the pair
    // never leaves the crossing: either a genuinely degenerate (constant)
    // intersection, reported through its vanishing form, or a cluster this
    // grid cannot take apart.
    for (int i = 0; i + 2 < N; ++i) {
        if (ind[i] <= opts.indicator_threshold && ind[i + 1] <= opts.indicator_threshold &&
            ind[i + 2] <= opts.indicator_threshold) {
            int j = i + 2;
            while (j + 1 < N && ind[j + 1] <= opts.indicator_threshold) ++j;
            const double tc = 0.5 * (tn[i] + tn[j]);
            make_record(pp, tc, CrossingRecord::Where::Interior, h, opts);
            throw ResolutionError(
                "maslov_index: the intersection indicator vanishes on a whole stretch but the "
                "crossing form is regular; the scan grid cannot separate the crossings");
        }
    }

    const int d_a = intersection_dimension(L1.frame(a), L2.frame(a), opts.intersect_tol);
    const int d_b = intersection_dimension(L1.frame(b), L2.frame(b), opts.intersect_tol);

    std::vector<double> candidates;
    for (int i = 0; i < N; ++i) {
        const bool le_left = i == 0 || ind[i] <= ind[i - 1];
        const bool le_right = i == N - 1 || ind[i] <= ind[i + 1];
        const bool lt_one = (i > 0 && ind[i] < ind[i - 1]) || (i + 1 < N && ind[i] < ind[i + 1]);
        if (!(le_left && le_right && (lt_one || ind[i] <= opts.indicator_threshold))) continue;
        const double lo = tn[std::max(i - 1, 0)], hi = tn[std::min(i + 1, N - 1)];
        double fmin = 0.0;
        const double tmin = golden_minimize(indicator, lo, hi, time_tol, &fmin);
        if (fmin <= opts.indicator_threshold) candidates.push_back(tmin);
    }
    // Endpoint attribution window: a crossing that belongs to a domain end
    // may be displaced a little into the interior by data error (integrated
    // monodromies carry O(step^2) noise), so candidates within two scan
    // cells of an end that itself registers a crossing are the same event.
    std::sort(candidates.begin(), candidates.end());
    const double endpoint_window = 2.0 * span / (N - 1);
    std::vector<double> interior;
    for (double t : candidates) {
        if (t - a <= endpoint_window && d_a > 0) continue;
        if (b - t <= endpoint_window && d_b > 0) continue;
        if (!interior.empty() && t - interior.back() <= merge_radius) continue;  // same zero
        interior.push_back(std::min(std::max(t, a), b));
    }

    MaslovReport rep;
    if (d_a > 0) rep.crossings.push_back(make_record(pp, a, CrossingRecord::Where::Left, h, opts));
    for (double t : interior)
        rep.crossings.push_back(make_record(pp, t, CrossingRecord::Where::Interior, h, opts));
    if (d_b > 0) rep.crossings.push_back(make_record(pp, b, CrossingRecord::Where::Right, h, opts));

    for (const CrossingRecord& rec : rep.crossings) {
        rep.index += rec.contribution;
        Eigen::SelfAdjointEigenSolver<Matrix> es(rec.form, Eigen::EigenvaluesOnly);
        for (int i = 0; i < es.eigenvalues().size(); ++i)
            rep.regularity = std::min(rep.regularity, std::abs(es.eigenvalues()[i]));
    }
    return rep;
}

MaslovReport maslov_vs_graph(const LagrangianFrame& Lambda, const SymplecticPath& path,
                             const MaslovOptions& opts) {
    if (!path.gamma) throw StructureError("maslov_vs_graph: path has no evaluator");
    const int amb = Lambda.ambient_dim();
    if (amb % 4 != 0)
        throw DimensionError("maslov_vs_graph: the boundary frame must live in a doubled space");
    const SymplecticForm dform = SymplecticForm::doubled(amb / 4);
    const LagrangianFrame L(dform, Lambda.basis());  // re-certify against the doubled form
    LagrangianPath P1{path.s0, path.s1, [L](double) { return L; }, true};
    LagrangianPath P2{path.s0, path.s1,
                      [g = path.gamma, dform](double s) { return graph_lagrangian(dform, g(s)); },
                      true};
    return maslov_index(dform, P1, P2, opts);
}

SymplecticPath monodromy_family(const HamiltonianFamily& fam, int steps) {
    if (!fam.system) throw StructureError("monodromy_family: empty family");
    auto cache = std::make_shared<std::map<double, Matrix>>();
    SymplecticPath p;
    p.s0 = fam.s0;
    p.s1 = fam.s1;
    p.gamma = [fam, steps, cache](double s) {
        auto it = cache->find(s);
        if (it != cache->end()) return it->second;
        const FlowPath fl = fundamental_solution(fam.system(s), steps);
        return cache->emplace(s, fl.node(fl.steps())).first->second;
    };
    return p;
}

SymplecticPath flow_graph_path(const FlowPath& flow) {
    SymplecticPath p;
    p.s0 = flow.t0();
    p.s1 = flow.t1();
    p.gamma = [flow](double t) { return flow.at(t); };
    return p;
}

}
