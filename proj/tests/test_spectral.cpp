#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "specflow/discretize.hpp"
#include "specflow/spectral.hpp"
#include "test_util.hpp"

using namespace specflow;
using testutil::Rng;

namespace {

Matrix diag2(double a, double b) {
    Matrix D = Matrix::Zero(2, 2);
    D(0, 0) = a;
    D(1, 1) = b;
    return D;
}

HermitianPath const_path(const Matrix& A, double s0 = 0.0, double s1 = 1.0) {
    HermitianPath p;
    p.s0 = s0;
    p.s1 = s1;
    p.dim = static_cast<int>(A.rows());
    p.A = [A](double) { return A; };
    return p;
}

std::vector<double> pencil_eigs(const Matrix& K, const Matrix& mass) {
    Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> es(K, mass, Eigen::EigenvaluesOnly | Eigen::Ax_lBx);
    std::vector<double> ev(es.eigenvalues().data(), es.eigenvalues().data() + es.eigenvalues().size());
    return ev;
}

int dense_count_below(const Matrix& K, const Matrix& mass, double t) {
    auto ev = pencil_eigs(K, mass);
    return static_cast<int>(std::count_if(ev.begin(), ev.end(), [t](double x) { return x < t; }));
}

/// Smallest pencil eigenvalue strictly above t, located by inertia bisection.
double next_eig_above(const StructuredPencil& p, double t) {
    const int base = p.count_below(t);
    double step = 0.25, hi = t + step;
    while (p.count_below(hi) <= base) {
        step *= 2.0;
        hi = t + step;
        REQUIRE(step < 1e6);
    }
    double lo = t;
    for (int i = 0; i < 80; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (p.count_below(mid) > base) hi = mid;
        else lo = mid;
    }
    return 0.5 * (lo + hi);
}

int band_count(const StructuredPencil& p, double lo, double hi) {
    return p.count_below(hi) - p.count_below(lo);
}

/// Dense pencil eigenvalues with the exact gauge directions projected out.
std::vector<double> operator_eigs(const DiscretizedOperator& op) {
    if (op.gauge_dim > 0) {
        const Matrix Q = op.reduction_basis();
        return pencil_eigs((Q.adjoint() * op.stiffness() * Q).eval(),
                           (Q.adjoint() * op.mass() * Q).eval());
    }
    return pencil_eigs(op.stiffness(), op.mass());
}

}  // namespace

TEST_CASE("constant invertible path has zero flow") {
    SfReport r = spectral_flow(const_path(diag2(1.0, -1.0)));
    CHECK(r.sf == 0);
    CHECK(r.count_start == 1);
    CHECK(r.count_end == 1);
    CHECK(r.kernel_start == 0);
    CHECK(r.kernel_end == 0);
    CHECK(r.epsilon == doctest::Approx(0.5));
}

TEST_CASE("scalar ramp: one eigenvalue ascends through zero") {
    HermitianPath p;
    p.s0 = -1.0;
    p.s1 = 1.0;
    p.dim = 1;
    p.A = [](double s) { return (Matrix(1, 1) << s).finished(); };
    SfReport r = spectral_flow(p);
    CHECK(r.sf == 1);
    CHECK(r.count_start == 1);
    CHECK(r.count_end == 0);
}

TEST_CASE("kernel at an endpoint follows the half-open convention") {
    HermitianPath p;
    p.dim = 1;
    p.A = [](double s) { return (Matrix(1, 1) << s).finished(); };

    // Curve leaves zero at the left endpoint: not counted.
    p.s0 = 0.0;
    p.s1 = 1.0;
    SfReport leave = spectral_flow(p);
    CHECK(leave.sf == 0);
    CHECK(leave.kernel_start == 1);
    CHECK(leave.kernel_end == 0);

    // Curve arrives at zero from below at the right endpoint: counted.
    p.s0 = -1.0;
    p.s1 = 0.0;
    SfReport arrive = spectral_flow(p);
    CHECK(arrive.sf == 1);
    CHECK(arrive.kernel_end == 1);
}

TEST_CASE("symmetric off-diagonal ramp splits one up one down") {
    HermitianPath p;
    p.s0 = 0.0;
    p.s1 = 1.0;
    p.dim = 2;
    p.A = [](double s) {
        Matrix A = Matrix::Zero(2, 2);
        A(0, 1) = s;
        A(1, 0) = s;
        return A;
    };
    SfOptions opts;
    opts.trace_samples = 9;
    SfReport r = spectral_flow(p, opts);
    // A(0) = 0 is all kernel; the descending branch is counted at s = 1.
    CHECK(r.sf == -1);
    CHECK(r.kernel_start == 2);
    CHECK(r.count_start == 0);
    CHECK(r.count_end == 1);
    REQUIRE(r.trace.size() == 9);
    CHECK(r.trace.front().negatives == r.count_start);
    CHECK(r.trace.back().negatives == r.count_end);
}

TEST_CASE("ramp against a mass matrix matches the scaled problem") {
    // A(s) = s * I against mass diag(1, 4): generalized eigenvalues s and s/4
    // cross together at s = 0; flow counted like two ascending curves.
    HermitianPath p;
    p.s0 = -1.0;
    p.s1 = 1.0;
    p.dim = 2;
    p.A = [](double s) { return (s * Matrix::Identity(2, 2)).eval(); };
    p.mass = diag2(1.0, 4.0);
    SfReport r = spectral_flow(p);
    CHECK(r.sf == 2);
    CHECK(r.count_start == 2);
    CHECK(r.count_end == 0);
}

TEST_CASE("tolerance window collapse raises instead of guessing") {
    CHECK_THROWS_AS(spectral_flow(const_path(diag2(1.0, 1.5e-8))), ToleranceError);
}

TEST_CASE("guard band certification flags borderline eigenvalues") {
    SfOptions opts;
    opts.ktol = 1e-8;
    opts.guard_factor = 10.0;
    CHECK_THROWS_AS(spectral_flow(const_path(diag2(1.0, 5e-8)), opts), ToleranceError);
    // The same spectrum passes once certification is off.
    SfOptions plain;
    plain.ktol = 1e-8;
    CHECK(spectral_flow(const_path(diag2(1.0, 5e-8)), plain).sf == 0);
}

TEST_CASE("relative index of a compact perturbation") {
    CHECK(relative_morse_index(diag2(1.0, -1.0), diag2(2.0, 0.0)) == 1);
    CHECK(relative_morse_index(diag2(1.0, -1.0), Matrix::Zero(2, 2)) == 0);

    Matrix B3 = Matrix::Zero(3, 3);
    B3(0, 0) = 2.0;
    B3(1, 1) = 2.0;
    CHECK(relative_morse_index(Matrix::Identity(3, 3), B3) == 2);
    CHECK(relative_morse_index(Matrix::Identity(3, 3), B3) ==
          morse_index((Matrix::Identity(3, 3) - B3).eval()));
}

TEST_CASE("morse index ignores kernel directions") {
    Matrix D = Matrix::Zero(3, 3);
    D(0, 0) = 1.0;
    D(1, 1) = 2.0;
    D(2, 2) = 3.0;
    CHECK(morse_index(D) == 0);
    D(0, 0) = -1.0;
    D(1, 1) = 0.0;
    D(2, 2) = 1.0;
    CHECK(morse_index(D) == 1);
}

TEST_CASE("linear ramp flow matches a direct eigenvalue count") {
    // For A(s) = A0 + s I the curves are lambda_i(A0) + s, so the flow over
    // [0, 1] equals the number of eigenvalues of A0 inside (-1, 0).
    Rng rng(7101);
    for (int trial = 0; trial < 30; ++trial) {
        const int d = 2 + static_cast<int>(rng() % 5);
        const Matrix A0 = 1.2 * testutil::random_hermitian(rng, d);
        HermitianPath p;
        p.s0 = 0.0;
        p.s1 = 1.0;
        p.dim = d;
        p.A = [A0, d](double s) { return (A0 + s * Matrix::Identity(d, d)).eval(); };

        Eigen::SelfAdjointEigenSolver<Matrix> es(A0, Eigen::EigenvaluesOnly);
        int inside = 0;
        for (int i = 0; i < d; ++i)
            if (es.eigenvalues()(i) > -1.0 && es.eigenvalues()(i) < 0.0) ++inside;

        CHECK(spectral_flow(p).sf == inside);
    }
}

TEST_CASE("flow is invariant under congruence of the path") {
    Rng rng(7102);
    for (int trial = 0; trial < 20; ++trial) {
        const int d = 2 + static_cast<int>(rng() % 5);
        const Matrix A0 = testutil::random_hermitian(rng, d);
        const Matrix A1 = testutil::random_hermitian(rng, d);
        const Matrix A2 = testutil::random_hermitian(rng, d);
        Matrix C0 = testutil::random_complex(rng, d, d);
        Matrix C1 = testutil::random_complex(rng, d, d);
        C0 *= 0.15 / C0.operatorNorm();
        C1 *= 0.15 / C1.operatorNorm();

        auto base = [A0, A1, A2](double s) {
            return (A0 + s * A1 + std::sin(3.0 * s) * A2).eval();
        };
        auto cong = [C0, C1, d](double s) {
            return (Matrix::Identity(d, d) + C0 + s * C1).eval();
        };

        HermitianPath p;
        p.dim = d;
        p.A = base;
        HermitianPath q;
        q.dim = d;
        q.A = [base, cong](double s) {
            const Matrix M = cong(s);
            return (M.adjoint() * base(s) * M).eval();
        };
        CHECK(spectral_flow(p).sf == spectral_flow(q).sf);
    }
}

TEST_CASE("flow adds over concatenated intervals and flips on reversal") {
    Rng rng(7103);
    const int d = 4;
    const Matrix A0 = testutil::random_hermitian(rng, d);
    const Matrix A1 = 2.0 * testutil::random_hermitian(rng, d);
    auto eval = [A0, A1](double s) { return (A0 + s * A1).eval(); };

    HermitianPath whole;
    whole.dim = d;
    whole.A = eval;
    whole.s0 = 0.0;
    whole.s1 = 1.0;
    HermitianPath left = whole, right = whole, reversed = whole;
    left.s1 = 0.4;
    right.s0 = 0.4;
    reversed.A = [eval](double s) { return eval(1.0 - s); };

    const int total = spectral_flow(whole).sf;
    CHECK(total == spectral_flow(left).sf + spectral_flow(right).sf);
    CHECK(spectral_flow(reversed).sf == -total);

    // Direct sums add as well.
    const Matrix B0 = testutil::random_hermitian(rng, 3);
    const Matrix B1 = 2.0 * testutil::random_hermitian(rng, 3);
    HermitianPath block;
    block.dim = d + 3;
    block.A = [&](double s) {
        Matrix S = Matrix::Zero(d + 3, d + 3);
        S.topLeftCorner(d, d) = A0 + s * A1;
        S.bottomRightCorner(3, 3) = B0 + s * B1;
        return S;
    };
    HermitianPath small;
    small.dim = 3;
    small.A = [B0, B1](double s) { return (B0 + s * B1).eval(); };
    CHECK(spectral_flow(block).sf == total + spectral_flow(small).sf);
}

TEST_CASE("positive definite paths never flow") {
    Rng rng(7104);
    for (int trial = 0; trial < 5; ++trial) {
        const int d = 3;
        const Matrix L0 = testutil::random_complex(rng, d, d);
        const Matrix L1 = testutil::random_complex(rng, d, d);
        HermitianPath p;
        p.dim = d;
        p.A = [L0, L1, d](double s) {
            const Matrix L = L0 + s * L1;
            return (L.adjoint() * L + 0.1 * Matrix::Identity(d, d)).eval();
        };
        SfReport r = spectral_flow(p);
        CHECK(r.sf == 0);
        CHECK(r.count_start == 0);
        CHECK(r.count_end == 0);
    }
}

// ---------------------------------------------------------------------------
// Structured pencils: inertia counting against dense eigensolves.
// ---------------------------------------------------------------------------

namespace {

StructuredPencil random_chain(Rng& rng, int blocks, int bs, bool border, bool mass_coupling) {
    StructuredPencil p;
    for (int j = 0; j < blocks; ++j) {
        p.Kdiag.push_back(testutil::random_hermitian(rng, bs));
        Matrix Md = testutil::random_hermitian(rng, bs);
        p.Mdiag.push_back(Matrix::Identity(bs, bs) + (0.2 / Md.operatorNorm()) * Md);
    }
    for (int j = 0; j + 1 < blocks; ++j) {
        p.Ksub.push_back(testutil::random_complex(rng, bs, bs));
        Matrix Ms = testutil::random_complex(rng, bs, bs);
        p.Msub.push_back(mass_coupling ? ((0.1 / Ms.operatorNorm()) * Ms).eval()
                                       : Matrix::Zero(bs, bs).eval());
    }
    if (border) {
        const int bd = 2;
        p.Kborder = testutil::random_hermitian(rng, bd);
        Matrix Mb = testutil::random_hermitian(rng, bd);
        p.Mborder = Matrix::Identity(bd, bd) + (0.2 / Mb.operatorNorm()) * Mb;
        p.Kbcol.assign(blocks, Matrix());
        p.Mbcol.assign(blocks, Matrix());
        p.Kbcol[0] = testutil::random_complex(rng, bs, bd);
        p.Kbcol[blocks - 1] = testutil::random_complex(rng, bs, bd);
        if (mass_coupling) {
            Matrix Mc = testutil::random_complex(rng, bs, bd);
            p.Mbcol[0] = (0.05 / Mc.operatorNorm()) * Mc;
        }
    }
    return p;
}

}  // namespace

TEST_CASE("structured inertia counts match dense pencil eigenvalues") {
    Rng rng(7110);
    const double probes[] = {-2.3, -0.51, 0.0, 0.37, 1.9};
    for (int variant = 0; variant < 4; ++variant) {
        const bool border = variant % 2 == 1;
        const bool coupling = variant / 2 == 1;
        StructuredPencil p = random_chain(rng, 5, 3, border, coupling);
        const Matrix K = p.dense_stiffness();
        const Matrix mass = p.dense_mass();
        REQUIRE((K - K.adjoint()).norm() < 1e-12 * K.norm());
        Eigen::LLT<Matrix> llt(mass);
        REQUIRE(llt.info() == Eigen::Success);
        for (double t : probes)
            CHECK(p.count_below(t) == dense_count_below(K, mass, t));
    }
}

TEST_CASE("structured flow equals dense flow on the same family") {
    Rng rng(7111);
    StructuredPencil base = random_chain(rng, 4, 3, true, false);
    StructuredPencil bump = random_chain(rng, 4, 3, true, false);

    auto mix = [base, bump](double s) {
        StructuredPencil p = base;
        for (size_t j = 0; j < p.Kdiag.size(); ++j) p.Kdiag[j] += (2.0 * s) * bump.Kdiag[j];
        for (size_t j = 0; j < p.Ksub.size(); ++j) p.Ksub[j] += (2.0 * s) * bump.Ksub[j];
        p.Kborder += (2.0 * s) * bump.Kborder;
        for (size_t j = 0; j < p.Kbcol.size(); ++j)
            if (bump.Kbcol[j].size()) p.Kbcol[j] += (2.0 * s) * bump.Kbcol[j];
        return p;
    };

    StructuredPath sp;
    sp.at = mix;
    HermitianPath dp;
    dp.dim = base.dim();
    dp.mass = base.dense_mass();
    dp.A = [mix](double s) { return mix(s).dense_stiffness(); };

    SfReport a = spectral_flow(sp);
    SfReport b = spectral_flow(dp);
    CHECK(a.sf == b.sf);
    CHECK(a.count_start == b.count_start);
    CHECK(a.count_end == b.count_end);
    CHECK(a.epsilon == doctest::Approx(b.epsilon).epsilon(1e-6));
}

// ---------------------------------------------------------------------------
// First derivative operator: -J x' - B(t) x with Lagrangian boundary data.
// ---------------------------------------------------------------------------

TEST_CASE("free periodic operator has the integer frequency spectrum") {
    HamiltonianSystem sys{1, 0.0, 2.0 * M_PI, [](double) { return Matrix::Zero(2, 2); }};
    const auto bc = BoundaryCondition::graph(Matrix::Identity(2, 2));
    DiscretizedOperator op = discretize_hamiltonian(sys, bc, 128);
    REQUIRE(op.dim() == 256);
    // Even node count: the alternating modes close up, giving two exact
    // gauge directions.  An odd grid has none.
    CHECK(op.gauge_dim == 2);
    CHECK(discretize_hamiltonian(sys, bc, 129).gauge_dim == 0);

    auto ev = operator_eigs(op);
    std::sort(ev.begin(), ev.end(), [](double a, double b) { return std::abs(a) < std::abs(b); });
    std::vector<double> nearest(ev.begin(), ev.begin() + 6);
    std::sort(nearest.begin(), nearest.end());
    const double target[] = {-1.0, -1.0, 0.0, 0.0, 1.0, 1.0};
    CHECK(std::abs(nearest[2]) < 1e-10);  // constants are an exact discrete kernel
    CHECK(std::abs(nearest[3]) < 1e-10);
    for (int i = 0; i < 6; ++i) CHECK(std::abs(nearest[i] - target[i]) < 1e-3);

    // Same multiplicity pattern on the fine grid, via inertia counts only.
    DiscretizedOperator fine = discretize_hamiltonian(sys, bc, 512);
    CHECK(band_count(fine.pencil, -0.5, 0.5) == 2);
    CHECK(band_count(fine.pencil, 0.5, 1.5) == 2);
    CHECK(band_count(fine.pencil, -1.5, -0.5) == 2);
}

TEST_CASE("antiperiodic boundary shifts the spectrum to half-integers") {
    HamiltonianSystem sys{1, 0.0, 2.0 * M_PI, [](double) { return Matrix::Zero(2, 2); }};
    const auto bc = BoundaryCondition::graph((-Matrix::Identity(2, 2)).eval());
    DiscretizedOperator op = discretize_hamiltonian(sys, bc, 64);
    CHECK(op.gauge_dim == 0);                                        // even grid: no closure
    CHECK(discretize_hamiltonian(sys, bc, 65).gauge_dim == 2);       // odd grid: closure

    auto ev = operator_eigs(op);
    std::sort(ev.begin(), ev.end(), [](double a, double b) { return std::abs(a) < std::abs(b); });
    std::vector<double> nearest(ev.begin(), ev.begin() + 4);
    std::sort(nearest.begin(), nearest.end());
    const double target[] = {-0.5, -0.5, 0.5, 0.5};
    for (int i = 0; i < 4; ++i) CHECK(std::abs(nearest[i] - target[i]) < 1e-3);
    CHECK(band_count(op.pencil, 0.0, 1.0) == 2);
    CHECK(band_count(op.pencil, -1.0, 0.0) == 2);
}

TEST_CASE("nearly parity-resonant wrap is rejected") {
    HamiltonianSystem sys{1, 0.0, 1.0, [](double) { return Matrix::Zero(2, 2); }};
    const double e = 3e-7;
    CHECK_THROWS_AS(discretize_hamiltonian(sys, BoundaryCondition::graph(diag2(1.0 + e, 1.0 / (1.0 + e))), 16),
                    ToleranceError);
}

TEST_CASE("separated endpoints select integer rotation numbers") {
    HamiltonianSystem sys{1, 0.0, M_PI, [](double) { return Matrix::Zero(2, 2); }};
    Matrix e1 = Matrix::Zero(2, 1);
    e1(0, 0) = 1.0;
    const SymplecticForm form = SymplecticForm::standard(1);
    const auto bc = BoundaryCondition::separated(LagrangianFrame(form, e1), LagrangianFrame(form, e1));
    DiscretizedOperator op = discretize_hamiltonian(sys, bc, 64);
    REQUIRE(op.dim() == 128);
    // The shared endpoint line supports one alternating gauge mode.
    CHECK(op.gauge_dim == 1);

    auto ev = operator_eigs(op);
    std::sort(ev.begin(), ev.end(), [](double a, double b) { return std::abs(a) < std::abs(b); });
    CHECK(std::abs(ev[0]) < 1e-10);  // the constant e1 line
    std::vector<double> pair = {ev[1], ev[2]};
    std::sort(pair.begin(), pair.end());
    CHECK(pair[0] == doctest::Approx(-1.0).epsilon(1e-3));
    CHECK(pair[1] == doctest::Approx(1.0).epsilon(1e-3));
    CHECK(band_count(op.pencil, -0.5, 0.5) == 1);
    CHECK(band_count(op.pencil, 0.5, 1.5) == 1);
}

TEST_CASE("near-zero eigenvalue error drops about fourfold per refinement") {
    // B = b(t) I commutes with J, so the periodic eigenvalues are exactly
    // k - mean(b) (rotation modes, each double).  The one above zero is 0.7,
    // giving an analytic reference for the discretization error.
    HamiltonianSystem sys{1, 0.0, 2.0 * M_PI, [](double t) {
                              const double b =
                                  0.3 + 0.25 * std::sin(t) + 0.1 * std::cos(2.0 * t);
                              return (b * Matrix::Identity(2, 2)).eval();
                          }};
    const auto bc = BoundaryCondition::graph(Matrix::Identity(2, 2));
    const double coarse = next_eig_above(discretize_hamiltonian(sys, bc, 64).pencil, 0.0);
    const double mid = next_eig_above(discretize_hamiltonian(sys, bc, 128).pencil, 0.0);
    const double ratio = std::abs(coarse - 0.7) / std::abs(mid - 0.7);
    CHECK(std::abs(coarse - 0.7) < 2e-3);
    CHECK(ratio > 3.0);
    CHECK(ratio < 5.5);
}

TEST_CASE("count bisection localizes an exactly represented eigenvalue sharply") {
    // x = (0, e^{0.2 sin t}) solves -J x' - B x = 0.8 x exactly, and the
    // discrete pencil inherits the eigenvalue to machine precision at every
    // grid size.  Bisection on count_below must localize it without the
    // gauge directions (carried by the even grid) smearing the count: their
    // elimination images are dropped by rank, not by magnitude.
    HamiltonianSystem sys{1, 0.0, 2.0 * M_PI, [](double t) {
                              Matrix B(2, 2);
                              B << 1.0 + 0.5 * std::sin(t), 0.2 * std::cos(t),
                                   0.2 * std::cos(t), -0.8;
                              return B;
                          }};
    const auto bc = BoundaryCondition::graph(Matrix::Identity(2, 2));
    for (int M : {64, 128}) {
        const auto op = discretize_hamiltonian(sys, bc, M);
        REQUIRE(op.gauge_dim == 2);
        CHECK(std::abs(next_eig_above(op.pencil, 0.0) - 0.8) < 1e-9);
    }
}

TEST_CASE("rotation family: structured and dense flows agree on a frozen value") {
    // A_s = -J d/dt - s on [0.3, 1.5], periodic over 2 pi: the doubly
    // degenerate curve through s = 1 descends, so the flow is -2.
    HamiltonianFamily fam;
    fam.s0 = 0.3;
    fam.s1 = 1.5;
    fam.system = [](double s) {
        return HamiltonianSystem{1, 0.0, 2.0 * M_PI,
                                 [s](double) { return (s * Matrix::Identity(2, 2)).eval(); }};
    };
    const auto bc = BoundaryCondition::graph(Matrix::Identity(2, 2));
    const int M = 48;

    SfOptions opts;
    opts.ktol = discretize_hamiltonian(fam.system(fam.s0), bc, M).recommended_ktol;

    SfReport structured = spectral_flow(structured_path(fam, bc, M), opts);
    SfReport dense = spectral_flow(dense_path(fam, bc, M), opts);
    CHECK(structured.sf == -2);
    CHECK(dense.sf == -2);
    CHECK(structured.count_start == dense.count_start);
    CHECK(structured.count_end == dense.count_end);

    // Grid independence, including a grid that shares no nodes with M = 48.
    CHECK(spectral_flow(structured_path(fam, bc, 97), opts).sf == -2);
}

TEST_CASE("general frame route reproduces the graph route") {
    Rng rng(7120);
    const Matrix S = testutil::random_symplectic(rng, SymplecticForm::standard(1));
    HamiltonianFamily fam;
    fam.s0 = 0.2;
    fam.s1 = 1.3;
    const Matrix B0 = testutil::random_hermitian(rng, 2);
    fam.system = [B0](double s) {
        return HamiltonianSystem{1, 0.0, 2.0 * M_PI,
                                 [B0, s](double t) {
                                     return (s * B0 + 0.3 * std::sin(t) * Matrix::Identity(2, 2)).eval();
                                 }};
    };
    const auto graph_bc = BoundaryCondition::graph(S);
    const auto general_bc = BoundaryCondition::general(graph_bc.lagrangian(1));
    const int M = 32;

    StructuredPencil pg = discretize_hamiltonian(fam.system(0.7), graph_bc, M).pencil;
    StructuredPencil pc = discretize_hamiltonian(fam.system(0.7), general_bc, M).pencil;
    REQUIRE(pg.dim() == pc.dim());
    for (double t : {-1.7, -0.4, 0.25, 2.1})
        CHECK(pg.count_below(t) == pc.count_below(t));

    SfOptions opts;
    opts.ktol = discretize_hamiltonian(fam.system(fam.s0), graph_bc, M).recommended_ktol;
    CHECK(spectral_flow(structured_path(fam, graph_bc, M), opts).sf ==
          spectral_flow(structured_path(fam, general_bc, M), opts).sf);
}

TEST_CASE("graph constraint rejects non-symplectic matrices") {
    CHECK_THROWS_AS(BoundaryCondition::graph(diag2(2.0, 1.0)), StructureError);
}

// ---------------------------------------------------------------------------
// Second order operator: -(G u')' + R u.
// ---------------------------------------------------------------------------

TEST_CASE("periodic Laplacian has squared integer spectrum") {
    SturmLiouvilleSystem sys{1, 2.0 * M_PI, [](double) { return Matrix::Identity(1, 1); },
                             [](double) { return Matrix::Zero(1, 1); }};
    const auto bc = SLBoundary::twisted(Complex(1.0, 0.0), Matrix::Identity(1, 1));

    DiscretizedOperator op = discretize_sturm_liouville(sys, bc, 64);
    REQUIRE(op.dim() == 64);
    auto ev = pencil_eigs(op.stiffness(), op.mass());
    std::sort(ev.begin(), ev.end());
    CHECK(std::abs(ev[0]) < 1e-10);
    CHECK(ev[1] == doctest::Approx(1.0).epsilon(5e-2));
    CHECK(ev[2] == doctest::Approx(1.0).epsilon(5e-2));
    CHECK(ev[3] == doctest::Approx(4.0).epsilon(5e-2));
    CHECK(ev[4] == doctest::Approx(4.0).epsilon(5e-2));

    DiscretizedOperator fine = discretize_sturm_liouville(sys, bc, 256);
    CHECK(fine.pencil.count_below(-0.5) == 0);
    CHECK(band_count(fine.pencil, -0.5, 0.5) == 1);
    CHECK(band_count(fine.pencil, 0.5, 1.5) == 2);
    CHECK(band_count(fine.pencil, 3.5, 4.5) == 2);
}

TEST_CASE("antiperiodic twist with matched potential has a double kernel") {
    SturmLiouvilleSystem sys{1, 2.0 * M_PI, [](double) { return Matrix::Identity(1, 1); },
                             [](double) { return (-0.25 * Matrix::Identity(1, 1)).eval(); }};
    const auto bc = SLBoundary::twisted(Complex(-1.0, 0.0), Matrix::Identity(1, 1));
    DiscretizedOperator op = discretize_sturm_liouville(sys, bc, 128);

    const double tol = op.recommended_ktol;
    CHECK(band_count(op.pencil, -tol, tol) == 2);
    CHECK(op.pencil.count_below(-tol) == 0);
    CHECK(band_count(op.pencil, 1.5, 2.5) == 2);
}

TEST_CASE("indefinite leading coefficient gives a symmetric spectrum") {
    Matrix G = diag2(1.0, -1.0);
    SturmLiouvilleSystem sys{2, 2.0 * M_PI, [G](double) { return G; },
                             [](double) { return Matrix::Zero(2, 2); }};
    const auto bc = SLBoundary::twisted(Complex(1.0, 0.0), Matrix::Identity(2, 2));
    DiscretizedOperator op = discretize_sturm_liouville(sys, bc, 128);
    const int dim = op.dim();
    CHECK(band_count(op.pencil, -0.5, 0.5) == 2);
    for (double x : {0.5, 2.5, 7.3})
        CHECK(op.pencil.count_below(-x) == dim - op.pencil.count_below(x));
}

TEST_CASE("clamped shifted Laplacian has one negative direction") {
    SturmLiouvilleSystem sys{1, M_PI, [](double) { return Matrix::Identity(1, 1); },
                             [](double) { return (-2.5 * Matrix::Identity(1, 1)).eval(); }};
    DiscretizedOperator op = discretize_sturm_liouville(sys, SLBoundary::dirichlet(), 64);
    REQUIRE(op.dim() == 63);
    CHECK(op.pencil.count_below(0.0) == 1);
    CHECK(dense_count_below(op.stiffness(), op.mass(), 0.0) == 1);
}

TEST_CASE("clamped family: both flow routes see the same crossing") {
    SturmLiouvilleFamily fam;
    fam.s0 = 0.0;
    fam.s1 = 1.0;
    fam.system = [](double s) {
        return SturmLiouvilleSystem{1, M_PI, [](double) { return Matrix::Identity(1, 1); },
                                    [s](double) { return (-2.5 * s * Matrix::Identity(1, 1)).eval(); }};
    };
    const auto bc = SLBoundary::dirichlet();
    SfReport a = spectral_flow(structured_path(fam, bc, 64));
    SfReport b = spectral_flow(dense_path(fam, bc, 64));
    CHECK(a.sf == -1);
    CHECK(b.sf == -1);
    CHECK(a.count_end == 1);
}

TEST_CASE("twisted wrap demands a compatible leading coefficient") {
    SturmLiouvilleSystem sys{1, 1.0, [](double t) { return ((1.0 + 0.5 * t) * Matrix::Identity(1, 1)).eval(); },
                             [](double) { return Matrix::Zero(1, 1); }};
    const auto bc = SLBoundary::twisted(Complex(1.0, 0.0), Matrix::Identity(1, 1));
    CHECK_THROWS_AS(discretize_sturm_liouville(sys, bc, 16), StructureError);
}
