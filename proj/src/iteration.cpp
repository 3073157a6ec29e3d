#include "specflow/iteration.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <future>
#include <iomanip>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>

#include <Eigen/Dense>

namespace specflow {

namespace {

constexpr double kTiny = 1e-300;

double rel_diff(const Matrix& X, const Matrix& Y) {
    return (X - Y).norm() / std::max(std::max(X.norm(), Y.norm()), kTiny);
}

std::vector<double> cheb_samples(double a, double b, int m) {
    std::vector<double> out;
    out.reserve(m);
    const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
    for (int i = 0; i < m; ++i)
        out.push_back(mid + half * std::cos(M_PI * (2 * i + 1) / (2.0 * m)));
    return out;
}

std::string fmt_complex(Complex z) {
    std::ostringstream os;
    os << std::setprecision(6) << z.real() << (z.imag() < 0 ? "" : "+") << z.imag() << "i";
    return os.str();
}

Matrix matrix_power(const Matrix& P, int m) {
    Matrix out = Matrix::Identity(P.rows(), P.cols());
    for (int i = 0; i < m; ++i) out = (out * P).eval();
    return out;
}

/// Roots are generated from the normalized angle, never by root-finding, so
/// the set is exact on the unit circle and pairing with labels is unambiguous.
std::vector<Complex> unit_roots(Complex omega, int m) {
    double theta = std::arg(omega) / (2.0 * M_PI);
    if (theta < 0.0) theta += 1.0;
    std::vector<Complex> roots;
    roots.reserve(m);
    for (int j = 0; j < m; ++j)
        roots.push_back(std::polar(1.0, 2.0 * M_PI * (theta + j) / m));
    return roots;
}

/// Certifies C = c * I for a unimodular scalar c and returns c snapped onto
/// the unit circle.
Complex scalar_unit(const Matrix& C, double tol, const std::string& what) {
    const int d = static_cast<int>(C.rows());
    const Complex c = C.trace() / static_cast<double>(d);
    const double dev = (C - c * Matrix::Identity(d, d)).norm() / std::max(C.norm(), kTiny);
    if (dev > tol)
        throw StructureError(what + " is not a scalar multiple of the identity (deviation " +
                             std::to_string(dev) + ")");
    if (std::abs(std::abs(c) - 1.0) > std::max(tol, 1e-10))
        throw StructureError(what + " is scalar but not unimodular (|c| = " +
                             std::to_string(std::abs(c)) + ")");
    return c / std::abs(c);
}

LagrangianPath constant_path(double a, double b, const LagrangianFrame& V) {
    return LagrangianPath{a, b, [V](double) { return V; }, true};
}

LagrangianPath transported_path(const SymplecticForm& form, const std::function<Matrix(double)>& B,
                                const LagrangianFrame& start, double t_from, double t_to,
                                int steps) {
    auto fp = std::make_shared<FramePath>(transport_frame(form, B, start, t_from, t_to, steps));
    return LagrangianPath{t_from, t_to, [fp](double t) { return fp->at(t); }, true};
}

/// Re-raises engine failures with the identity term that produced them.
template <typename Fn>
auto labeled(const std::string& label, Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const DegenerateCrossingError& e) {
        throw DegenerateCrossingError(label + ": " + e.what(), e.time, e.smallest);
    } catch (const ResolutionError& e) {
        throw ResolutionError(label + ": " + e.what());
    }
}

void finalize(IdentityReport& rep) {
    rep.rhs_sum = 0;
    for (const auto& t : rep.rhs) rep.rhs_sum += t.value;
    if (!rep.lhs_blocks.empty()) {
        int sum = 0;
        for (const auto& t : rep.lhs_blocks) sum += t.value;
        rep.lhs = sum;
        rep.terms_match = rep.lhs_blocks.size() == rep.rhs.size();
        if (rep.terms_match)
            for (std::size_t i = 0; i < rep.rhs.size(); ++i)
                if (rep.lhs_blocks[i].value != rep.rhs[i].value) rep.terms_match = false;
    }
    rep.residual = rep.lhs - rep.rhs_sum;
}

void check_shift_coefficient(const HamiltonianFamily& fam, const Matrix& P, double ell,
                             int samples, double tol) {
    double worst = 0.0, scale = 1.0;
    const HamiltonianSystem probe = fam.system(fam.s0);
    for (double s : cheb_samples(fam.s0, fam.s1, samples)) {
        const HamiltonianSystem sys = fam.system(s);
        for (double t : cheb_samples(probe.t0, probe.t1 - ell, samples)) {
            const Matrix shifted = sys.B(t + ell);
            const Matrix moved = P.adjoint() * sys.B(t) * P;
            worst = std::max(worst, (shifted - moved).norm());
            scale = std::max(scale, shifted.norm());
        }
    }
    if (worst > tol * scale)
        throw StructureError("coefficient is not shift-equivariant: B(t + T/k) differs from "
                             "P^* B(t) P by " + std::to_string(worst / scale));
}

void check_brake_coefficient(const HamiltonianSystem& sys, const Matrix& N, int samples,
                             double tol) {
    double worst = 0.0, scale = 1.0;
    for (double t : cheb_samples(sys.t0, sys.t1, samples)) {
        const Matrix reflected = N.adjoint() * sys.B(sys.t0 + sys.t1 - t) * N;
        const Matrix here = sys.B(t);
        worst = std::max(worst, (reflected - here).norm());
        scale = std::max(scale, here.norm());
    }
    if (worst > tol * scale)
        throw StructureError("coefficient fails the brake relation N^* B(T - t) N = B(t) "
                             "by " + std::to_string(worst / scale));
}

void check_involution(const Matrix& N, double tol, const std::string& what) {
    const Matrix I = Matrix::Identity(N.rows(), N.cols());
    if (N.rows() != N.cols() || rel_diff(N * N, I) > tol)
        throw StructureError(what + " must be an involution (N^2 = I)");
}

}  // namespace

IterationProblem shift_problem(const HamiltonianFamily& family, const Matrix& S, const Matrix& P,
                               int k) {
    IterationProblem prob;
    prob.family = family;
    prob.system = family.system(family.s1);
    prob.bc = BoundaryCondition::graph(S);
    prob.P = P;
    prob.k = k;
    return prob;
}

IterationProblem bott_problem(const HamiltonianSystem& system, const Matrix& S, const Matrix& P) {
    IterationProblem prob;
    prob.system = system;
    prob.family = HamiltonianFamily{0.0, 1.0, [system](double) { return system; }};
    prob.bc = BoundaryCondition::graph(S);
    prob.P = P;
    return prob;
}

IterationProblem brake_problem(const HamiltonianSystem& system, const BoundaryCondition& bc,
                               const Matrix& N) {
    IterationProblem prob;
    prob.system = system;
    prob.family = HamiltonianFamily{0.0, 1.0, [system](double) { return system; }};
    prob.bc = bc;
    prob.N = N;
    return prob;
}

// ---------------------------------------------------------------------------
// Restricted blocks vs fundamental-domain re-discretization

IdentityReport fundamental_domain_check(const IterationProblem& prob,
                                        const IterationOptions& opts) {
    if (prob.bc.kind != BoundaryCondition::Kind::Graph)
        throw StructureError("fundamental_domain_check needs the graph boundary condition");
    const int k = prob.k;
    if (k < 1) throw StructureError("shift order must be at least 1");
    const HamiltonianSystem sys0 = prob.family.system(prob.family.s0);
    const double t0 = sys0.t0, t1 = sys0.t1;
    const double span = t1 - t0;
    if (!(span > 0.0)) throw StructureError("empty time interval");
    for (double s : cheb_samples(prob.family.s0, prob.family.s1, 3)) {
        const HamiltonianSystem ss = prob.family.system(s);
        if (std::abs(ss.t0 - t0) > 1e-12 * span || std::abs(ss.t1 - t1) > 1e-12 * span)
            throw StructureError("family members disagree on the time interval");
    }
    if (opts.M % k != 0 || opts.M / k < 4)
        throw GridError("grid intervals must be a positive multiple of the shift order with at "
                        "least 4 per fundamental domain");

    const Matrix S = prob.bc.S;
    if (rel_diff(prob.P * S, S * prob.P) > opts.tol)
        throw StructureError("shift factor must commute with the boundary matrix");
    const Complex omega =
        scalar_unit(matrix_power(prob.P, k) * S.inverse(), opts.tol, "P^k S^{-1}");

    const double ell = span / k;
    check_shift_coefficient(prob.family, prob.P, ell, opts.precondition_samples, opts.tol);

    const DiscretizedOperator disc = discretize_hamiltonian(sys0, prob.bc, opts.M);
    const HermitianPath path = dense_path(prob.family, prob.bc, opts.M);
    const DiscreteSymmetry g = build_symmetry(SymmetrySpec::shift(prob.P, k), disc, opts.tol);
    const EquivarianceReport eq =
        check_equivariance(g, path, opts.precondition_samples, opts.tol);
    if (!eq.passed)
        throw StructureError("discrete family is not equivariant under the shift (residual " +
                             std::to_string(eq.max_residual) + ")");

    const int rd = g.dim();
    const Matrix gm = matrix_power(g.matrix, k);
    if (rel_diff(gm, omega * Matrix::Identity(rd, rd)) > std::max(opts.tol, 1e-10))
        throw StructureError("discrete shift realization does not satisfy g^k = omega identity");

    const std::vector<Complex> roots = unit_roots(omega, k);
    const bool injected = !opts.twist_override.empty();
    std::vector<Complex> sub_roots = injected ? opts.twist_override : roots;
    if (static_cast<int>(sub_roots.size()) != k)
        throw DimensionError("twist_override must supply one root per block");

    // One kernel tolerance for every realization on both sides, from the
    // coarsest of the grid recommendations at the family endpoints.
    SfOptions sfo = opts.sf;
    if (sfo.ktol < 0.0) {
        HamiltonianSystem sub0 = sys0;
        sub0.t1 = t0 + ell;
        HamiltonianSystem sys1 = prob.family.system(prob.family.s1);
        HamiltonianSystem sub1 = sys1;
        sub1.t1 = t0 + ell;
        const BoundaryCondition bc0 = BoundaryCondition::graph(std::conj(roots[0]) * prob.P);
        double ktol = disc.recommended_ktol;
        ktol = std::max(ktol, discretize_hamiltonian(sys1, prob.bc, opts.M).recommended_ktol);
        ktol = std::max(ktol, discretize_hamiltonian(sub0, bc0, opts.M / k).recommended_ktol);
        ktol = std::max(ktol, discretize_hamiltonian(sub1, bc0, opts.M / k).recommended_ktol);
        sfo.ktol = ktol;
    }

    const int nodal_dim = static_cast<int>(g.nodal.rows());
    const int sub_nodal_dim = (opts.M / k) * g.node_dim;

    auto run = [&, sfo](int i) -> std::pair<IterationTerm, IterationTerm> {
        // Spectral projector onto ker(g - omega_i) through the exact root
        // polynomial; g^k = omega I makes it an exact projector.
        Matrix proj = Matrix::Identity(rd, rd);
        Matrix proj_nodal = Matrix::Identity(nodal_dim, nodal_dim);
        for (int j = 0; j < k; ++j) {
            if (j == i) continue;
            const Complex denom = roots[i] - roots[j];
            proj = (proj * (g.matrix - roots[j] * Matrix::Identity(rd, rd)) / denom).eval();
            proj_nodal =
                (proj_nodal * (g.nodal - roots[j] * Matrix::Identity(nodal_dim, nodal_dim)) /
                 denom)
                    .eval();
        }
        const int block_nodal = Subspace::from_columns(proj_nodal, 1e-6).dim();
        if (block_nodal != sub_nodal_dim)
            throw GridError("restriction of block " + fmt_complex(roots[i]) +
                            " is not a bijection onto the fundamental domain: nodal dimension " +
                            std::to_string(block_nodal) + " vs " +
                            std::to_string(sub_nodal_dim));
        const Matrix Ui = Subspace::from_columns(proj, 1e-6).basis();

        // Ambient compressed block (dense pipeline).
        const HermitianPath ambient = dense_path(prob.family, prob.bc, opts.M);
        const SfReport blk = spectral_flow(compress(ambient, Ui), sfo);

        // Independent re-discretization under the twisted condition
        // omega_i x(0) = P x(T/k), i.e. the graph of conj(omega_i) P.
        HamiltonianFamily subfam{prob.family.s0, prob.family.s1,
                                 [fam = prob.family, t0, ell](double s) {
                                     HamiltonianSystem ss = fam.system(s);
                                     ss.t0 = t0;
                                     ss.t1 = t0 + ell;
                                     return ss;
                                 }};
        const BoundaryCondition sub_bc =
            BoundaryCondition::graph(std::conj(sub_roots[i]) * prob.P);
        const SfReport sub =
            spectral_flow(structured_path(subfam, sub_bc, opts.M / k), sfo);

        if (!injected &&
            (blk.kernel_start != sub.kernel_start || blk.kernel_end != sub.kernel_end))
            throw GridError("endpoint kernel dimensions disagree between the ambient block and "
                            "the fundamental-domain realization at " + fmt_complex(roots[i]) +
                            " (" + std::to_string(blk.kernel_start) + "," +
                            std::to_string(blk.kernel_end) + ") vs (" +
                            std::to_string(sub.kernel_start) + "," +
                            std::to_string(sub.kernel_end) + "): grid too coarse");

        IterationTerm block_term;
        block_term.label = "block " + fmt_complex(roots[i]);
        block_term.root = roots[i];
        block_term.value = blk.sf;
        block_term.has_sf = true;
        block_term.sf = blk;
        IterationTerm domain_term;
        domain_term.label = "domain " + fmt_complex(sub_roots[i]);
        domain_term.root = sub_roots[i];
        domain_term.value = sub.sf;
        domain_term.has_sf = true;
        domain_term.sf = sub;
        return {block_term, domain_term};
    };

    std::vector<std::future<std::pair<IterationTerm, IterationTerm>>> futs;
    futs.reserve(k);
    for (int i = 0; i < k; ++i) futs.push_back(std::async(std::launch::async, run, i));

    IdentityReport rep;
    for (auto& f : futs) {
        auto [block_term, domain_term] = f.get();
        rep.lhs_blocks.push_back(std::move(block_term));
        rep.rhs.push_back(std::move(domain_term));
    }
    finalize(rep);
    return rep;
}

// ---------------------------------------------------------------------------
// Graph iteration identity

IdentityReport bott_iteration_check(const IterationProblem& prob, int m,
                                    const IterationOptions& opts) {
    if (prob.bc.kind != BoundaryCondition::Kind::Graph)
        throw StructureError("bott_iteration_check needs the graph boundary condition");
    if (m < 1) throw StructureError("iteration count must be at least 1");
    const HamiltonianSystem sys = prob.system;
    const int n = sys.n;
    const double span = sys.t1 - sys.t0;
    if (!(span > 0.0)) throw StructureError("empty time interval");

    const Matrix S = prob.bc.S;
    if (rel_diff(prob.P * S, S * prob.P) > opts.tol)
        throw StructureError("shift factor must commute with the boundary matrix");
    const Complex omega =
        scalar_unit(matrix_power(prob.P, m) * S.inverse(), opts.tol, "P^m S^{-1}");
    const double ell = span / m;
    check_shift_coefficient(prob.family, prob.P, ell, opts.precondition_samples, opts.tol);

    IdentityReport rep;
    const FlowPath flow = fundamental_solution(sys, opts.flow_steps);
    rep.lhs_maslov = labeled("full interval", [&] {
        return maslov_vs_graph(prob.bc.lagrangian(n), flow_graph_path(flow), opts.maslov);
    });
    rep.has_lhs_maslov = true;
    rep.lhs = rep.lhs_maslov.index;

    const std::vector<Complex> roots = unit_roots(omega, m);
    const int sub_steps = std::max(opts.flow_steps / m, 64);
    auto run = [&](int i) {
        const std::string label = "root " + fmt_complex(roots[i]);
        HamiltonianSystem sub = sys;
        sub.t1 = sys.t0 + ell;
        const FlowPath sub_flow = fundamental_solution(sub, sub_steps);
        const BoundaryCondition bci = BoundaryCondition::graph(std::conj(roots[i]) * prob.P);
        const MaslovReport r = labeled(label, [&] {
            return maslov_vs_graph(bci.lagrangian(n), flow_graph_path(sub_flow), opts.maslov);
        });
        IterationTerm term;
        term.label = label;
        term.root = roots[i];
        term.value = r.index;
        term.has_maslov = true;
        term.maslov = r;
        return term;
    };
    std::vector<std::future<IterationTerm>> futs;
    futs.reserve(m);
    for (int i = 0; i < m; ++i) futs.push_back(std::async(std::launch::async, run, i));
    for (auto& f : futs) rep.rhs.push_back(f.get());
    finalize(rep);
    return rep;
}

// ---------------------------------------------------------------------------
// Reflection identity

IdentityReport brake_symmetry_check(const IterationProblem& prob, const IterationOptions& opts) {
    const HamiltonianSystem sys = prob.system;
    const int n = sys.n;
    const double mid = 0.5 * (sys.t0 + sys.t1);
    if (!(sys.t1 > sys.t0)) throw StructureError("empty time interval");

    const Matrix& N = prob.N;
    check_involution(N, std::max(opts.tol, 1e-10), "reflection factor");
    if (!is_anti_symplectic(N))
        throw StructureError("reflection factor must be anti-symplectic");
    check_brake_coefficient(sys, N, opts.precondition_samples, opts.tol);

    const SymplecticForm form = SymplecticForm::standard(n);
    const LagrangianFrame Vp = reflection_eigenspace(form, N, +1, opts.tol);
    const LagrangianFrame Vm = reflection_eigenspace(form, N, -1, opts.tol);
    const int half_steps = std::max(opts.flow_steps / 2, 64);

    IdentityReport rep;
    std::array<LagrangianFrame, 2> starts = {Vp, Vm};

    if (prob.bc.kind == BoundaryCondition::Kind::Graph) {
        const Matrix S = prob.bc.S;
        if (rel_diff(N * S.inverse(), S * N) > opts.tol)
            throw StructureError("N S^{-1} = S N fails: the reflection does not preserve the "
                                 "graph boundary condition");
        const Matrix SN = S * N;
        check_involution(SN, std::max(opts.tol, 1e-10), "S N");
        starts = {reflection_eigenspace(form, SN, +1, opts.tol),
                  reflection_eigenspace(form, SN, -1, opts.tol)};
        const FlowPath flow = fundamental_solution(sys, opts.flow_steps);
        rep.lhs_maslov = labeled("full interval", [&] {
            return maslov_vs_graph(prob.bc.lagrangian(n), flow_graph_path(flow), opts.maslov);
        });
    } else if (prob.bc.kind == BoundaryCondition::Kind::Separated) {
        const LagrangianFrame V0(form, prob.bc.V0);
        const LagrangianFrame V1(form, prob.bc.V1);
        if (gap_distance(LagrangianFrame(form, N * prob.bc.V0), V1) > std::max(opts.tol, 1e-8) ||
            gap_distance(LagrangianFrame(form, N * prob.bc.V1), V0) > std::max(opts.tol, 1e-8))
            throw StructureError("reflection must exchange the separated boundary spaces "
                                 "(N V0 = V1 and N V1 = V0)");
        starts = {V0, V0};
        rep.lhs_maslov = labeled("full interval", [&] {
            return maslov_index(form, constant_path(sys.t0, sys.t1, V1),
                                transported_path(form, sys.B, V0, sys.t0, sys.t1,
                                                 opts.flow_steps),
                                opts.maslov);
        });
    } else {
        throw StructureError("brake identity needs a graph or separated boundary condition");
    }
    rep.has_lhs_maslov = true;
    rep.lhs = rep.lhs_maslov.index;

    auto run = [&](int idx) {
        const std::string label = idx == 0 ? "block +1" : "block -1";
        const LagrangianFrame& fixed = idx == 0 ? Vp : Vm;
        const MaslovReport r = labeled(label, [&] {
            return maslov_index(form, constant_path(sys.t0, mid, fixed),
                                transported_path(form, sys.B, starts[idx], sys.t0, mid,
                                                 half_steps),
                                opts.maslov);
        });
        IterationTerm term;
        term.label = label;
        term.root = Complex(idx == 0 ? 1.0 : -1.0, 0.0);
        term.value = r.index;
        term.has_maslov = true;
        term.maslov = r;
        return term;
    };
    std::vector<std::future<IterationTerm>> futs;
    for (int idx = 0; idx < 2; ++idx) futs.push_back(std::async(std::launch::async, run, idx));
    for (auto& f : futs) rep.rhs.push_back(f.get());
    finalize(rep);
    return rep;
}

// ---------------------------------------------------------------------------
// Heteroclinic families

namespace {

/// Per-parameter stable/unstable frames at t = 0, shared by the concurrent
/// index evaluations; the transport for one parameter value runs once.
struct FrameCache {
    RealLineFamily fam;
    double L = 0.0;
    int steps = 0;
    double tol = 1e-8;
    std::map<double, std::pair<LagrangianFrame, LagrangianFrame>> memo;
    std::mutex mu;

    std::pair<LagrangianFrame, LagrangianFrame> get(double lambda) {
        std::lock_guard<std::mutex> lock(mu);
        auto it = memo.find(lambda);
        if (it != memo.end()) return it->second;
        const StableUnstableFrames suf =
            stable_unstable_frames(fam.system(lambda), L, steps, tol);
        auto val = std::make_pair(suf.stable.at(0.0), suf.unstable.at(0.0));
        memo.emplace(lambda, val);
        return val;
    }
};

struct HeteroclinicValues {
    MaslovReport lhs, plus, minus;
};

HeteroclinicValues heteroclinic_indices(const RealLineFamily& fam, double L,
                                        const LagrangianFrame& Vp, const LagrangianFrame& Vm,
                                        const HeteroclinicOptions& opts) {
    const SymplecticForm form = SymplecticForm::standard(fam.system(fam.s0).n);
    auto cache = std::make_shared<FrameCache>();
    cache->fam = fam;
    cache->L = L;
    cache->steps = opts.steps;
    cache->tol = opts.tol;
    const LagrangianPath Vs{fam.s0, fam.s1,
                            [cache](double l) { return cache->get(l).first; }, true};
    const LagrangianPath Vu{fam.s0, fam.s1,
                            [cache](double l) { return cache->get(l).second; }, true};

    auto run = [&](int which) {
        switch (which) {
            case 0:
                return labeled("mu(V^s, V^u)",
                               [&] { return maslov_index(form, Vs, Vu, opts.maslov); });
            case 1:
                if (opts.side == HalfLineSide::Negative)
                    return labeled("block +1", [&] {
                        return maslov_index(form, constant_path(fam.s0, fam.s1, Vp), Vu,
                                            opts.maslov);
                    });
                return labeled("block +1", [&] {
                    return maslov_index(form, Vs, constant_path(fam.s0, fam.s1, Vp),
                                        opts.maslov);
                });
            default:
                if (opts.side == HalfLineSide::Negative)
                    return labeled("block -1", [&] {
                        return maslov_index(form, constant_path(fam.s0, fam.s1, Vm), Vu,
                                            opts.maslov);
                    });
                return labeled("block -1", [&] {
                    return maslov_index(form, Vs, constant_path(fam.s0, fam.s1, Vm),
                                        opts.maslov);
                });
        }
    };
    std::array<std::future<MaslovReport>, 3> futs;
    for (int w = 0; w < 3; ++w) futs[w] = std::async(std::launch::async, run, w);
    return HeteroclinicValues{futs[0].get(), futs[1].get(), futs[2].get()};
}

}  // namespace

IdentityReport heteroclinic_brake_check(const RealLineFamily& fam, const Matrix& N,
                                        const HeteroclinicOptions& opts) {
    const int n = fam.system(fam.s0).n;
    check_involution(N, std::max(opts.tol, 1e-10), "reflection factor");
    if (!is_anti_symplectic(N))
        throw StructureError("reflection factor must be anti-symplectic");

    double L = opts.L;
    const std::vector<double> lams =
        cheb_samples(fam.s0, fam.s1, opts.precondition_samples);
    if (L <= 0.0) {
        L = 1.0;
        for (double l : lams) L = std::max(L, default_truncation(fam.system(l), opts.tol));
    }
    double worst = 0.0, scale = 1.0;
    for (double l : lams) {
        const RealLineSystem sys = fam.system(l);
        const HyperbolicityReport hm = hyperbolicity_check(sys.B_minus, opts.tol);
        const HyperbolicityReport hp = hyperbolicity_check(sys.B_plus, opts.tol);
        if (!hm.hyperbolic || !hp.hyperbolic)
            throw StructureError("ends are not hyperbolic at parameter " + std::to_string(l));
        if (rel_diff(N.adjoint() * sys.B_minus * N, sys.B_plus) > opts.tol)
            throw StructureError("brake relation fails between the end limits");
        for (double t : {0.0, 0.31 * L, 0.77 * L, L}) {
            const Matrix reflected = N.adjoint() * sys.B(-t) * N;
            const Matrix here = sys.B(t);
            worst = std::max(worst, (reflected - here).norm());
            scale = std::max(scale, here.norm());
        }
    }
    if (worst > opts.tol * scale)
        throw StructureError("coefficient fails the brake relation N^* B(-t) N = B(t) by " +
                             std::to_string(worst / scale));

    const SymplecticForm form = SymplecticForm::standard(n);
    const LagrangianFrame Vp = reflection_eigenspace(form, N, +1, opts.tol);
    const LagrangianFrame Vm = reflection_eigenspace(form, N, -1, opts.tol);

    const HeteroclinicValues base = heteroclinic_indices(fam, L, Vp, Vm, opts);
    const HeteroclinicValues grown =
        heteroclinic_indices(fam, opts.growth * L, Vp, Vm, opts);
    if (base.lhs.index != grown.lhs.index || base.plus.index != grown.plus.index ||
        base.minus.index != grown.minus.index) {
        std::ostringstream os;
        os << "truncated indices changed when the cut grew from " << L << " to "
           << opts.growth * L << ": (" << base.lhs.index << "," << base.plus.index << ","
           << base.minus.index << ") vs (" << grown.lhs.index << "," << grown.plus.index << ","
           << grown.minus.index << ")";
        throw ToleranceError(os.str());
    }

    IdentityReport rep;
    rep.lhs = base.lhs.index;
    rep.has_lhs_maslov = true;
    rep.lhs_maslov = base.lhs;
    rep.truncation_used = L;
    IterationTerm plus;
    plus.label = "block +1";
    plus.root = Complex(1.0, 0.0);
    plus.value = base.plus.index;
    plus.has_maslov = true;
    plus.maslov = base.plus;
    IterationTerm minus;
    minus.label = "block -1";
    minus.root = Complex(-1.0, 0.0);
    minus.value = base.minus.index;
    minus.has_maslov = true;
    minus.maslov = base.minus;
    rep.rhs = {plus, minus};
    finalize(rep);
    return rep;
}

SfReport real_line_spectral_flow(const RealLineFamily& fam, double L, int M,
                                 const SfOptions& opts) {
    auto build = [fam, L, M](double s) {
        const RealLineSystem sys = fam.system(s);
        const HamiltonianSystem trunc{sys.n, -L, L, sys.B};
        const BoundaryCondition bc =
            BoundaryCondition::separated(end_spectral_frame(sys.B_minus, true),
                                         end_spectral_frame(sys.B_plus, false));
        return discretize_hamiltonian(trunc, bc, M);
    };
    SfOptions sfo = opts;
    if (sfo.ktol < 0.0)
        sfo.ktol = std::max(build(fam.s0).recommended_ktol, build(fam.s1).recommended_ktol);
    const StructuredPath path{fam.s0, fam.s1,
                              [build](double s) { return build(s).pencil; }};
    return spectral_flow(path, sfo);
}

// ---------------------------------------------------------------------------
// Homoclinic relative-index decomposition

namespace {

struct HomoclinicValues {
    int full = 0, plus = 0, minus = 0;
    SfReport detail;
};

HomoclinicValues homoclinic_indices(const RealLineSystem& sys, const Matrix& Bstar,
                                    const Matrix& N, double cut, int grid,
                                    const HomoclinicOptions& opts) {
    const int n = sys.n;
    const HamiltonianFamily fam{
        0.0, 1.0, [n, cut, CB = sys.B, Bstar](double s) {
            return HamiltonianSystem{n, -cut, cut, [CB, Bstar, s](double t) {
                                         return (Bstar + s * (CB(t) - Bstar)).eval();
                                     }};
        }};
    const BoundaryCondition bc =
        BoundaryCondition::separated(end_spectral_frame(Bstar, true),
                                     end_spectral_frame(Bstar, false));
    const DiscretizedOperator disc = discretize_hamiltonian(fam.system(0.0), bc, grid);
    const HermitianPath path = dense_path(fam, bc, grid);
    const DiscreteSymmetry g = build_symmetry(SymmetrySpec::brake(N), disc, opts.tol);
    const EquivarianceReport eq =
        check_equivariance(g, path, opts.precondition_samples, opts.tol);
    if (!eq.passed)
        throw StructureError("discrete family is not brake-equivariant (residual " +
                             std::to_string(eq.max_residual) + ")");
    const int d = g.dim();
    const Matrix I = Matrix::Identity(d, d);
    if (rel_diff(g.matrix * g.matrix, I) > std::max(opts.tol, 1e-10))
        throw StructureError("discrete brake action is not an involution");
    const Matrix Up = Subspace::from_columns(0.5 * (I + g.matrix), 1e-6).basis();
    const Matrix Um = Subspace::from_columns(0.5 * (I - g.matrix), 1e-6).basis();
    if (static_cast<int>(Up.cols() + Um.cols()) != d)
        throw StructureError("reflection blocks do not fill the space");

    const Matrix A0 = path.A(0.0), A1 = path.A(1.0);
    for (const Matrix* K : {&A0, &A1}) {
        const double r = (Um.adjoint() * (*K) * Up).norm() / std::max(K->norm(), kTiny);
        if (r > 10.0 * std::max(opts.tol, 1e-10))
            throw StructureError("reflection blocks are not form-orthogonal (residual " +
                                 std::to_string(r) + "); equivariance must be broken");
    }

    SfOptions sfo = opts.sf;
    if (sfo.ktol < 0.0)
        sfo.ktol = std::max(disc.recommended_ktol,
                            discretize_hamiltonian(fam.system(1.0), bc, grid).recommended_ktol);

    HomoclinicValues out;
    out.full = relative_morse_index(A0, A0 - A1, path.mass, sfo);
    auto block = [&](const Matrix& U) {
        const Matrix mass_c =
            path.has_mass() ? (U.adjoint() * path.mass * U).eval() : Matrix();
        return relative_morse_index((U.adjoint() * A0 * U).eval(),
                                    (U.adjoint() * (A0 - A1) * U).eval(), mass_c, sfo);
    };
    out.plus = block(Up);
    out.minus = block(Um);
    out.detail = spectral_flow(path, sfo);
    return out;
}

}  // namespace

IdentityReport homoclinic_index_decomposition(const RealLineSystem& sys, const Matrix& N,
                                              const HomoclinicOptions& opts) {
    if (rel_diff(sys.B_minus, sys.B_plus) > opts.tol)
        throw StructureError("homoclinic data needs the same limit at both ends");
    const Matrix Bstar = sys.B_plus;
    if (!hyperbolicity_check(Bstar, opts.tol).hyperbolic)
        throw StructureError("J B_* must be hyperbolic");
    check_involution(N, std::max(opts.tol, 1e-10), "reflection factor");
    if (!is_anti_symplectic(N))
        throw StructureError("reflection factor must be anti-symplectic");
    if (rel_diff(N.adjoint() * Bstar * N, Bstar) > opts.tol)
        throw StructureError("brake relation fails at the limit coefficient");

    double L = opts.L;
    if (L <= 0.0) L = default_truncation(sys, opts.tol);
    double worst = 0.0, scale = 1.0;
    for (double t : {0.0, 0.23 * L, 0.61 * L, 0.89 * L, L}) {
        const Matrix reflected = N.adjoint() * sys.B(-t) * N;
        const Matrix here = sys.B(t);
        worst = std::max(worst, (reflected - here).norm());
        scale = std::max(scale, here.norm());
    }
    if (worst > opts.tol * scale)
        throw StructureError("coefficient fails the brake relation N^* B(-t) N = B(t) by " +
                             std::to_string(worst / scale));

    int M = opts.M - (opts.M % 2);
    if (M < 8) throw GridError("homoclinic grid needs at least 8 intervals");
    const HomoclinicValues base = homoclinic_indices(sys, Bstar, N, L, M, opts);
    int M2 = static_cast<int>(std::lround(M * opts.growth));
    M2 -= M2 % 2;
    const HomoclinicValues grown =
        homoclinic_indices(sys, Bstar, N, opts.growth * L, M2, opts);
    if (base.full != grown.full || base.plus != grown.plus || base.minus != grown.minus) {
        std::ostringstream os;
        os << "truncated indices changed when the cut grew from " << L << " to "
           << opts.growth * L << ": (" << base.full << "," << base.plus << "," << base.minus
           << ") vs (" << grown.full << "," << grown.plus << "," << grown.minus << ")";
        throw ToleranceError(os.str());
    }

    IdentityReport rep;
    rep.lhs = base.full;
    rep.has_lhs_sf = true;
    rep.lhs_sf = base.detail;
    rep.truncation_used = L;
    IterationTerm plus;
    plus.label = "block +1";
    plus.root = Complex(1.0, 0.0);
    plus.value = base.plus;
    IterationTerm minus;
    minus.label = "block -1";
    minus.root = Complex(-1.0, 0.0);
    minus.value = base.minus;
    rep.rhs = {plus, minus};
    finalize(rep);
    return rep;
}

// ---------------------------------------------------------------------------
// Second-order iteration identity

IdentityReport geodesic_iteration_check(const GeodesicProblem& prob, int m,
                                        const GeodesicOptions& opts) {
    const int n = prob.n;
    if (n < 1 || !(prob.T > 0.0)) throw StructureError("geodesic problem needs n >= 1, T > 0");
    if (m < 1) throw StructureError("iteration count must be at least 1");
    if (prob.G.rows() != n || prob.G.cols() != n || prob.P.rows() != n || prob.P.cols() != n)
        throw DimensionError("G and P must be n x n");
    if (rel_diff(prob.G, prob.G.adjoint()) > 1e-12)
        throw StructureError("G must be Hermitian");
    {
        Eigen::SelfAdjointEigenSolver<Matrix> es(prob.G, Eigen::EigenvaluesOnly);
        const double lo = es.eigenvalues().cwiseAbs().minCoeff();
        const double hi = es.eigenvalues().cwiseAbs().maxCoeff();
        if (lo <= 1e-10 * std::max(hi, kTiny))
            throw StructureError("G must be invertible");
    }
    if (rel_diff(prob.P.adjoint() * prob.G * prob.P, prob.G) > opts.tol)
        throw StructureError("twist factor must preserve G (P^* G P = G)");
    if (std::abs(std::abs(prob.omega) - 1.0) > std::max(opts.tol, 1e-10))
        throw StructureError("twist scalar must be unimodular");
    const Complex omega = prob.omega / std::abs(prob.omega);
    for (double t : cheb_samples(0.0, prob.T, opts.precondition_samples))
        if (rel_diff(prob.R(t), prob.R(t).adjoint()) > 1e-10)
            throw StructureError("R(t) must be Hermitian");
    {
        const Matrix closed = prob.P.adjoint() * prob.R(0.0) * prob.P;
        if ((prob.R(prob.T) - closed).norm() >
            opts.tol * std::max(1.0, std::max(prob.R(prob.T).norm(), closed.norm())))
            throw StructureError("coefficient does not close up under the twist "
                                 "(R(T) != P^* R(0) P)");
    }

    const std::vector<Complex> roots = unit_roots(omega, m);
    std::vector<Matrix> Ppow(m);
    Ppow[0] = Matrix::Identity(n, n);
    for (int j = 1; j < m; ++j) Ppow[j] = (Ppow[j - 1] * prob.P).eval();
    const Matrix Pm = matrix_power(prob.P, m);

    // The m-fold coefficient extension: congruent copies of the base period.
    auto Rext = [Ppow, R = prob.R, T = prob.T, m](double t) {
        int j = static_cast<int>(std::floor(t / T + 1e-12));
        j = std::clamp(j, 0, m - 1);
        const double tau = std::clamp(t - j * T, 0.0, T);
        return (Ppow[j].adjoint() * R(tau) * Ppow[j]).eval();
    };

    struct TermSpec {
        std::function<Matrix(double)> R;
        double T = 0.0;
        SLBoundary bc;
        int M = 0;
    };
    std::vector<TermSpec> specs;
    for (int j = 0; j < m; ++j)
        specs.push_back(TermSpec{prob.R, prob.T, SLBoundary::twisted(roots[j], prob.P), opts.M});
    specs.push_back(TermSpec{Rext, m * prob.T, SLBoundary::twisted(omega, Pm), m * opts.M});

    auto run = [&](const TermSpec& spec, double Lend) {
        const SturmLiouvilleFamily fam{
            0.0, Lend, [n, G = prob.G, spec](double s) {
                return SturmLiouvilleSystem{n, spec.T, [G](double) { return G; },
                                            [Rfn = spec.R, G, s](double t) {
                                                return (Rfn(t) + s * G).eval();
                                            }};
            }};
        SfOptions sfo = opts.sf;
        // Kernel tolerance anchored at s = 0, the only endpoint with physical
        // spectrum.  The far endpoint is coercive up to the crossings the
        // stabilization loop certifies away, and its grid recommendation
        // grows with s until it would swallow the low spectrum at s = 0.
        if (sfo.ktol < 0.0)
            sfo.ktol =
                discretize_sturm_liouville(fam.system(0.0), spec.bc, spec.M).recommended_ktol;
        return spectral_flow(structured_path(fam, spec.bc, spec.M), sfo);
    };
    auto run_all = [&](double Lend) {
        std::vector<std::future<SfReport>> futs;
        futs.reserve(specs.size());
        for (const auto& spec : specs)
            futs.push_back(std::async(std::launch::async, run, std::cref(spec), Lend));
        std::vector<SfReport> out;
        out.reserve(specs.size());
        for (auto& f : futs) out.push_back(f.get());
        return out;
    };

    double L = opts.s_max;
    for (int it = 0; it <= opts.max_doublings; ++it) {
        const std::vector<SfReport> at_L = run_all(L);
        bool kernel_free = true;
        for (const auto& r : at_L) kernel_free = kernel_free && r.kernel_end == 0;
        if (!kernel_free) {
            L *= 2.0;
            continue;
        }
        const std::vector<SfReport> at_2L = run_all(2.0 * L);
        bool stable = true;
        for (std::size_t i = 0; i < at_L.size(); ++i)
            stable = stable && at_L[i].sf == at_2L[i].sf && at_2L[i].kernel_end == 0;
        if (!stable) {
            L *= 2.0;
            continue;
        }
        IdentityReport rep;
        rep.s_max_used = L;
        rep.has_lhs_sf = true;
        rep.lhs_sf = at_L.back();
        rep.lhs = rep.lhs_sf.sf;
        for (int j = 0; j < m; ++j) {
            IterationTerm term;
            term.label = "root " + fmt_complex(roots[j]);
            term.root = roots[j];
            term.value = at_L[j].sf;
            term.has_sf = true;
            term.sf = at_L[j];
            rep.rhs.push_back(std::move(term));
        }
        finalize(rep);
        return rep;
    }
    throw ToleranceError("spectral flows failed to stabilize: kernel at the range end or "
                         "flow still changing at s_max = " + std::to_string(L));
}

}
