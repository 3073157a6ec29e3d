#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "specflow/discretize.hpp"
#include "specflow/symmetry.hpp"
#include "test_util.hpp"

using namespace specflow;
using testutil::Rng;

namespace {

Matrix rot2(double a) {
    Matrix R(2, 2);
    R << std::cos(a), -std::sin(a), std::sin(a), std::cos(a);
    return R;
}

Matrix line_frame(int axis) {
    Matrix u = Matrix::Zero(2, 1);
    u(axis, 0) = 1.0;
    return u;
}

DiscretizedOperator periodic_free(int M) {
    HamiltonianSystem sys{1, 0.0, 2.0 * M_PI, [](double) { return Matrix::Zero(2, 2).eval(); }};
    return discretize_hamiltonian(sys, BoundaryCondition::graph(Matrix::Identity(2, 2)), M);
}

DiscreteSymmetry bare_symmetry(const Matrix& G) {
    DiscreteSymmetry g;
    g.matrix = G;
    g.nodal = G;
    return g;
}

HermitianPath matrix_path(double s0, double s1, int dim, std::function<Matrix(double)> A) {
    HermitianPath p;
    p.s0 = s0;
    p.s1 = s1;
    p.dim = dim;
    p.A = std::move(A);
    return p;
}

}

TEST_CASE("pointwise scalar action is the scalar on nodal vectors") {
    const DiscretizedOperator disc = periodic_free(8);
    const DiscreteSymmetry g = build_symmetry(SymmetrySpec::pointwise(-Matrix::Identity(2, 2)), disc);
    CHECK((g.nodal + Matrix::Identity(disc.dim(), disc.dim())).norm() < 1e-12);
    // The periodic even grid carries the full alternating gauge; the action
    // descends to the reduced space where the dense path lives.
    CHECK(disc.gauge_dim == 2);
    CHECK(g.dim() == disc.dim() - 2);
    CHECK((g.matrix + Matrix::Identity(g.dim(), g.dim())).norm() < 1e-12);
    CHECK((g.adjoint() - g.matrix.adjoint()).norm() == 0.0);
}

TEST_CASE("half shift permutes the nodes and squares to the identity") {
    const DiscretizedOperator disc = periodic_free(8);
    const DiscreteSymmetry g = build_symmetry(SymmetrySpec::shift(Matrix::Identity(2, 2), 2), disc);

    Vector v = Vector::Zero(disc.dim());
    for (int j = 0; j < 8; ++j)
        v.segment(disc.node_offset(j), 2).setConstant(Complex(j, 0.0));
    const Vector gv = g.nodal * v;
    for (int j = 0; j < 8; ++j)
        CHECK(std::abs(gv[disc.node_offset(j)] - Complex((j + 4) % 8, 0.0)) < 1e-14);

    CHECK((g.nodal * g.nodal - Matrix::Identity(disc.dim(), disc.dim())).norm() < 1e-12);
}

TEST_CASE("brake exchange conditions on separated boundaries") {
    const SymplecticForm form = SymplecticForm::standard(1);
    const HamiltonianSystem sys{1, 0.0, M_PI, [](double) { return Matrix::Zero(2, 2).eval(); }};
    const Matrix N = (Matrix(2, 2) << 1, 0, 0, -1).finished();

    const auto good = discretize_hamiltonian(
        sys,
        BoundaryCondition::separated(LagrangianFrame(form, line_frame(0)),
                                     LagrangianFrame(form, line_frame(0))),
        8);
    CHECK_NOTHROW(build_symmetry(SymmetrySpec::brake(N), good));

    const auto bad = discretize_hamiltonian(
        sys,
        BoundaryCondition::separated(LagrangianFrame(form, line_frame(0)),
                                     LagrangianFrame(form, line_frame(1))),
        8);
    CHECK_THROWS_AS(build_symmetry(SymmetrySpec::brake(N), bad), StructureError);
}

TEST_CASE("grid and layout compatibility are hard errors") {
    const DiscretizedOperator disc = periodic_free(8);
    CHECK_THROWS_AS(build_symmetry(SymmetrySpec::shift(Matrix::Identity(2, 2), 3), disc),
                    GridError);

    const SymplecticForm form = SymplecticForm::standard(1);
    const HamiltonianSystem sys{1, 0.0, M_PI, [](double) { return Matrix::Zero(2, 2).eval(); }};
    const auto separated = discretize_hamiltonian(
        sys,
        BoundaryCondition::separated(LagrangianFrame(form, line_frame(0)),
                                     LagrangianFrame(form, line_frame(0))),
        7);
    const Matrix N = (Matrix(2, 2) << 1, 0, 0, -1).finished();
    CHECK_THROWS_AS(build_symmetry(SymmetrySpec::brake(N), separated), GridError);
    CHECK_THROWS_AS(build_symmetry(SymmetrySpec::shift(Matrix::Identity(2, 2), 2), separated),
                    StructureError);
}

TEST_CASE("non-symplectic factors are rejected on first-order operators") {
    const DiscretizedOperator disc = periodic_free(8);
    const Matrix D = (Matrix(2, 2) << 2, 0, 0, 1, 0).finished().topLeftCorner(2, 2);
    CHECK_THROWS_AS(build_symmetry(SymmetrySpec::pointwise(D), disc), StructureError);
    // diag(1,-1) is anti-symplectic, hence fine as a brake factor but not as
    // a pointwise one.
    const Matrix N = (Matrix(2, 2) << 1, 0, 0, -1).finished();
    CHECK_THROWS_AS(build_symmetry(SymmetrySpec::pointwise(N), disc), StructureError);
}

TEST_CASE("equivariance certification of free and brake coefficients") {
    HamiltonianFamily free;
    free.s0 = 0.0;
    free.s1 = 1.0;
    free.system = [](double) {
        return HamiltonianSystem{1, 0.0, 2.0 * M_PI, [](double) { return Matrix::Zero(2, 2).eval(); }};
    };
    const auto bc = BoundaryCondition::graph(Matrix::Identity(2, 2));
    const DiscretizedOperator disc = discretize_hamiltonian(free.system(0.0), bc, 8);
    const DiscreteSymmetry shift = build_symmetry(SymmetrySpec::shift(Matrix::Identity(2, 2), 2), disc);
    const EquivarianceReport rep = check_equivariance(shift, dense_path(free, bc, 8));
    CHECK(rep.passed);
    CHECK(rep.max_residual <= 1e-12);

    const SymplecticForm form = SymplecticForm::standard(1);
    const auto sep = BoundaryCondition::separated(LagrangianFrame(form, line_frame(0)),
                                                  LagrangianFrame(form, line_frame(0)));
    const Matrix N = (Matrix(2, 2) << 1, 0, 0, -1).finished();
    auto family_with = [](std::function<double(double)> c) {
        HamiltonianFamily fam;
        fam.s0 = 0.0;
        fam.s1 = 1.0;
        fam.system = [c](double s) {
            return HamiltonianSystem{1, 0.0, 2.0 * M_PI, [c, s](double t) {
                                         return ((1.0 + s) * c(t) * Matrix::Identity(2, 2)).eval();
                                     }};
        };
        return fam;
    };

    // cos(2 pi - t) = cos t respects the reflection, sin does not.
    const HamiltonianFamily even = family_with([](double t) { return std::cos(t); });
    const DiscretizedOperator disc_even = discretize_hamiltonian(even.system(0.0), sep, 8);
    const DiscreteSymmetry brake = build_symmetry(SymmetrySpec::brake(N), disc_even);
    CHECK(check_equivariance(brake, dense_path(even, sep, 8)).passed);

    const HamiltonianFamily odd = family_with([](double t) { return std::sin(t); });
    const EquivarianceReport bad = check_equivariance(brake, dense_path(odd, sep, 8));
    CHECK_FALSE(bad.passed);
    CHECK(bad.max_residual > 1e-3);
}

TEST_CASE("compress restricts paths exactly") {
    const auto path = matrix_path(0.0, 1.0, 2, [](double s) {
        return (Matrix(2, 2) << 0.0, s, s, 0.0).finished();
    });

    const HermitianPath same = compress(path, Matrix::Identity(2, 2));
    CHECK((same.A(0.3) - path.A(0.3)).norm() < 1e-15);

    Matrix e1 = Matrix::Zero(2, 1);
    e1(0, 0) = 1.0;
    const auto diagpath = matrix_path(0.0, 1.0, 2, [](double s) {
        return (Matrix(2, 2) << s, 0.0, 0.0, 1.0 - s).finished();
    });
    const HermitianPath first = compress(diagpath, e1);
    CHECK(first.dim == 1);
    CHECK(std::abs(first.A(0.7)(0, 0) - Complex(0.7)) < 1e-15);

    Matrix mix(2, 1);
    mix << 1.0 / std::sqrt(2.0), 1.0 / std::sqrt(2.0);
    const HermitianPath along = compress(path, mix);
    CHECK(std::abs(along.A(0.4)(0, 0) - Complex(0.4)) < 1e-14);

    CHECK_THROWS_AS(compress(path, (Matrix(2, 1) << 1.0, 1.0).finished()), StructureError);
}

TEST_CASE("pairing orthogonality report on small equivariance matrices") {
    const Matrix hyper = (Matrix(2, 2) << 2.0, 0.0, 0.0, 0.5).finished();
    const auto dec_hyper = generalized_eigenspaces(hyper);

    // Zero diagonal entries are exactly what the pairing demands: the only
    // exempt pair is (2, 1/2).
    const Matrix swap = (Matrix(2, 2) << 0.0, 1.0, 1.0, 0.0).finished();
    const OrthogonalityReport ok = a_orthogonality_check(swap, dec_hyper);
    CHECK(ok.passed);
    CHECK(ok.pairs_checked == 2);
    CHECK(ok.max_pairing_residual < 1e-14);
    CHECK(ok.kernel_dim == 0);

    const auto dec_id = generalized_eigenspaces(Matrix::Identity(2, 2));
    const OrthogonalityReport trivial = a_orthogonality_check(swap, dec_id);
    CHECK(trivial.passed);
    CHECK(trivial.pairs_checked == 0);

    Matrix phases = Matrix::Zero(2, 2);
    phases(0, 0) = Complex(0.0, 1.0);
    phases(1, 1) = Complex(0.0, -1.0);
    const Matrix signs = (Matrix(2, 2) << 1.0, 0.0, 0.0, -1.0).finished();
    const OrthogonalityReport circle = a_orthogonality_check(signs, generalized_eigenspaces(phases));
    CHECK(circle.passed);
    CHECK(circle.pairs_checked == 1);

    // Kernel splitting across the eigenspaces (here: all of C^2).
    const OrthogonalityReport zero = a_orthogonality_check(Matrix::Zero(2, 2), dec_hyper);
    CHECK(zero.kernel_dim == 2);
    REQUIRE(zero.kernel_split.size() == 2);
    CHECK(zero.kernel_split[0] == 1);
    CHECK(zero.kernel_split[1] == 1);
    CHECK(zero.kernel_decomposes);

    // A non-equivariant operator fails both halves of the report.
    const Matrix ones = Matrix::Ones(2, 2);
    const OrthogonalityReport broken = a_orthogonality_check(ones, dec_hyper);
    CHECK_FALSE(broken.pairing_ok);
    CHECK_FALSE(broken.kernel_decomposes);
    CHECK_FALSE(broken.passed);
}

TEST_CASE("hyperbolic pair flow is the half kernel difference") {
    const Matrix G = (Matrix(2, 2) << 2.0, 0.0, 0.0, 0.5).finished();
    const auto path = matrix_path(0.0, 1.0, 2, [](double s) {
        return (Matrix(2, 2) << 0.0, s, s, 0.0).finished();
    });
    const DecompositionReport rep = decompose_spectral_flow(path, bare_symmetry(G));
    REQUIRE(rep.blocks.size() == 1);
    CHECK_FALSE(rep.blocks[0].on_circle);
    CHECK(rep.blocks[0].kernel_start == 2);
    CHECK(rep.blocks[0].kernel_end == 0);
    CHECK(rep.blocks[0].sf == -1);
    CHECK(rep.hat_dim == 2);
    CHECK(rep.hat_term == -1);
    CHECK(rep.total == -1);
    CHECK(rep.direct.sf == -1);
    CHECK(rep.residual == 0);
}

TEST_CASE("unit-circle blocks carry their own flows") {
    Matrix G = Matrix::Zero(2, 2);
    G(0, 0) = Complex(0.0, 1.0);
    G(1, 1) = Complex(0.0, -1.0);
    const auto path = matrix_path(0.0, 1.0, 2, [](double s) {
        return (Matrix(2, 2) << s - 0.5, 0.0, 0.0, 0.5 - s).finished();
    });
    const DecompositionReport rep = decompose_spectral_flow(path, bare_symmetry(G));
    REQUIRE(rep.blocks.size() == 2);
    CHECK(rep.hat_dim == 0);
    for (const auto& blk : rep.blocks) {
        REQUIRE(blk.eigenvalues.size() == 1);
        const int expected = blk.eigenvalues[0].imag() > 0 ? 1 : -1;
        CHECK(blk.on_circle);
        CHECK(blk.sf == expected);
    }
    CHECK(rep.total == 0);
    CHECK(rep.residual == 0);
}

TEST_CASE("closed path with purely hyperbolic symmetry has zero flow") {
    const Matrix G = (Matrix(2, 2) << 2.0, 0.0, 0.0, 0.5).finished();
    const auto path = matrix_path(0.0, 1.0, 2, [](double s) {
        const double c = 1.0 + s * (1.0 - s);
        return (Matrix(2, 2) << 0.0, c, c, 0.0).finished();
    });
    const DecompositionReport rep = decompose_spectral_flow(path, bare_symmetry(G));
    CHECK(rep.total == 0);
    CHECK(rep.direct.sf == 0);
    CHECK(rep.residual == 0);
}

TEST_CASE("randomized compatible families satisfy the decomposition identity") {
    struct Trial {
        unsigned seed;
        int circle, hyper;
        bool vanishing;
    };
    const Trial trials[] = {
        {911, 2, 1, false}, {912, 1, 2, false}, {913, 3, 2, false}, {914, 2, 0, false},
        {915, 0, 2, false}, {916, 0, 2, true},  {917, 2, 1, true},  {918, 3, 1, false},
    };
    for (const Trial& tr : trials) {
        CAPTURE(tr.seed);
        Rng rng(tr.seed);
        const testutil::CompatibleFamily fam =
            testutil::random_compatible_family(rng, tr.circle, tr.hyper, tr.vanishing);
        const auto path = matrix_path(0.0, 1.0, fam.dim, fam.A);
        const DecompositionReport rep = decompose_spectral_flow(path, bare_symmetry(fam.g));
        CHECK(rep.residual == 0);
        CHECK(rep.hat_dim == fam.hyper_dim);
        CHECK((rep.hat_kernel_end - rep.hat_kernel_start) % 2 == 0);

        int hyper_sum = 0, circle_count = 0;
        for (const auto& blk : rep.blocks) {
            if (blk.on_circle)
                ++circle_count;
            else
                hyper_sum += blk.sf;
        }
        CHECK(circle_count == fam.circle_clusters);
        CHECK(hyper_sum == rep.hat_term);
        if (tr.circle == 0) CHECK(rep.total == rep.hat_term);

        // Block-diagonalization of compatible operators across the grouping.
        const OrthogonalityReport orth =
            a_orthogonality_check(path.A(0.37), generalized_eigenspaces(fam.g));
        CHECK(orth.pairing_ok);
    }
}

TEST_CASE("pointwise rotation symmetry splits a periodic crossing pair") {
    HamiltonianFamily fam;
    fam.s0 = 0.0;
    fam.s1 = 1.0;
    fam.system = [](double s) {
        return HamiltonianSystem{1, 0.0, 2.0 * M_PI, [s](double t) {
                                     return ((0.7 + 0.6 * s + 0.1 * std::sin(t)) *
                                             Matrix::Identity(2, 2))
                                         .eval();
                                 }};
    };
    const auto bc = BoundaryCondition::graph(Matrix::Identity(2, 2));
    const int M = 64;
    const DiscretizedOperator disc = discretize_hamiltonian(fam.system(0.0), bc, M);
    const DiscreteSymmetry g = build_symmetry(SymmetrySpec::pointwise(rot2(2.0 * M_PI / 3.0)), disc);

    DecomposeOptions opts;
    opts.sf.ktol = disc.recommended_ktol;
    const DecompositionReport rep = decompose_spectral_flow(dense_path(fam, bc, M), g, opts);

    // The double eigenvalue k - mean(b) crosses zero once; the rotation
    // eigenmodes u_(+-) split it across the two phase blocks.
    CHECK(rep.direct.sf == -2);
    CHECK(rep.total == -2);
    CHECK(rep.residual == 0);
    CHECK(rep.hat_dim == 0);
    REQUIRE(rep.blocks.size() == 2);
    for (const auto& blk : rep.blocks) {
        CHECK(blk.on_circle);
        CHECK(blk.sf == -1);
        REQUIRE(blk.eigenvalues.size() == 1);
        CHECK(std::abs(std::abs(blk.eigenvalues[0]) - 1.0) < 1e-8);
        CHECK(std::abs(blk.eigenvalues[0].real() - std::cos(2.0 * M_PI / 3.0)) < 1e-6);
    }
}

TEST_CASE("half-period shift separates the crossing pair by parity") {
    HamiltonianFamily fam;
    fam.s0 = 0.5;
    fam.s1 = 1.5;
    fam.system = [](double s) {
        return HamiltonianSystem{1, 0.0, 2.0 * M_PI, [s](double t) {
                                     return ((s + 0.1 * std::cos(2.0 * t)) *
                                             Matrix::Identity(2, 2))
                                         .eval();
                                 }};
    };
    const auto bc = BoundaryCondition::graph(Matrix::Identity(2, 2));
    const int M = 64;
    const DiscretizedOperator disc = discretize_hamiltonian(fam.system(0.5), bc, M);
    const DiscreteSymmetry g = build_symmetry(SymmetrySpec::shift(Matrix::Identity(2, 2), 2), disc);

    DecomposeOptions opts;
    opts.sf.ktol = disc.recommended_ktol;
    const DecompositionReport rep = decompose_spectral_flow(dense_path(fam, bc, M), g, opts);

    // Both crossing modes behave like e^{+-it}, which the half-period shift
    // multiplies by -1: the whole flow sits in the odd block.
    CHECK(rep.direct.sf == -2);
    CHECK(rep.total == -2);
    CHECK(rep.residual == 0);
    REQUIRE(rep.blocks.size() == 2);
    for (const auto& blk : rep.blocks) {
        REQUIRE(blk.eigenvalues.size() == 1);
        const bool odd = blk.eigenvalues[0].real() < 0.0;
        CHECK(blk.sf == (odd ? -2 : 0));
    }
}

TEST_CASE("brake reflection isolates the odd crossing mode") {
    HamiltonianFamily fam;
    fam.s0 = 0.5;
    fam.s1 = 1.5;
    fam.system = [](double s) {
        return HamiltonianSystem{1, 0.0, M_PI,
                                 [s](double) { return (s * Matrix::Identity(2, 2)).eval(); }};
    };
    const SymplecticForm form = SymplecticForm::standard(1);
    const auto bc = BoundaryCondition::separated(LagrangianFrame(form, line_frame(0)),
                                                 LagrangianFrame(form, line_frame(0)));
    const Matrix N = (Matrix(2, 2) << 1, 0, 0, -1).finished();
    const int M = 32;
    const DiscretizedOperator disc = discretize_hamiltonian(fam.system(0.5), bc, M);
    CHECK(disc.gauge_dim == 1);
    const DiscreteSymmetry g = build_symmetry(SymmetrySpec::brake(N), disc);

    DecomposeOptions opts;
    opts.sf.ktol = disc.recommended_ktol;
    const DecompositionReport rep = decompose_spectral_flow(dense_path(fam, bc, M), g, opts);

    // Simple eigenvalues k - s; the crossing solution R(t) e1 satisfies
    // g x = -x, so the flow lives entirely in the -1 block.
    CHECK(rep.direct.sf == -1);
    CHECK(rep.total == -1);
    CHECK(rep.residual == 0);
    REQUIRE(rep.blocks.size() == 2);
    for (const auto& blk : rep.blocks) {
        REQUIRE(blk.eigenvalues.size() == 1);
        const bool odd = blk.eigenvalues[0].real() < 0.0;
        CHECK(blk.sf == (odd ? -1 : 0));
    }
}

TEST_CASE("non-equivariant paths are rejected before decomposition") {
    HamiltonianFamily fam;
    fam.s0 = 0.5;
    fam.s1 = 1.5;
    fam.system = [](double s) {
        return HamiltonianSystem{1, 0.0, M_PI, [s](double t) {
                                     return (s * (1.0 + 0.5 * std::cos(t)) *
                                             Matrix::Identity(2, 2))
                                         .eval();
                                 }};
    };
    const SymplecticForm form = SymplecticForm::standard(1);
    const auto bc = BoundaryCondition::separated(LagrangianFrame(form, line_frame(0)),
                                                 LagrangianFrame(form, line_frame(0)));
    const Matrix N = (Matrix(2, 2) << 1, 0, 0, -1).finished();
    const DiscretizedOperator disc = discretize_hamiltonian(fam.system(0.5), bc, 16);
    const DiscreteSymmetry g = build_symmetry(SymmetrySpec::brake(N), disc);
    CHECK_THROWS_AS(decompose_spectral_flow(dense_path(fam, bc, 16), g), StructureError);
}

TEST_CASE("odd hyperbolic kernel change flags a broken precondition") {
    const Matrix G = (Matrix(2, 2) << 2.0, 0.0, 0.0, 0.5).finished();
    const auto path = matrix_path(0.0, 1.0, 2, [](double s) {
        return (Matrix(2, 2) << s, 0.0, 0.0, 1.0 + s).finished();
    });
    DecomposeOptions loose;
    loose.tol = 100.0;  // force past the certification to reach the parity guard
    CHECK_THROWS_AS(decompose_spectral_flow(path, bare_symmetry(G), loose), IdentityError);
}
