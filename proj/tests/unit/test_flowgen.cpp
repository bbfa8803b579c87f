#include <cmath>
#include <random>

#include <gtest/gtest.h>
#include <unsupported/Eigen/MatrixFunctions>

#include "coordflow/flowgen.hpp"
#include "coordflow/reference.hpp"
#include "helpers.hpp"

using namespace coordflow;
using testing_support::cube;
using testing_support::dense;
using testing_support::random_tt;

namespace {

Matrix ridge_b() {
    Matrix b(3, 3);
    b << 0, 1, 0, -1, 0, 0, 0, 1, 0;
    return b;
}

Vector vec(const Matrix& s) {
    const Index d = s.rows();
    Vector x(d * d);
    for (Index i = 0; i < d; ++i)
        for (Index j = 0; j < d; ++j)
            x[vec_index(i, j, d)] = s(i, j);
    return x;
}

} // namespace

TEST(Flowgen, CFieldDefinition) {
    const auto g = cube(3, 8, 6.0);
    const auto v = random_tt(g, {1, 2, 2, 1}, 1);
    const auto c = c_field(v, 2, 0);
    const auto fv = to_full(v);
    const auto fc = to_full(c);
    const Matrix& dm = g[2].diff_matrix(1);
    for (Index a = 0; a < 8; ++a)
        for (Index b = 0; b < 8; ++b)
            for (Index k = 0; k < 8; ++k) {
                double dv = 0.0;
                for (Index l = 0; l < 8; ++l)
                    dv += dm(k, l) * fv[static_cast<std::size_t>((a * 8 + b) * 8 + l)];
                EXPECT_NEAR(fc[static_cast<std::size_t>((a * 8 + b) * 8 + k)], dv * g[0].node(a), 1e-11);
            }
    EXPECT_THROW(c_field(v, 3, 0), std::out_of_range);
    EXPECT_THROW(c_field(v, 0, -1), std::out_of_range);
    EXPECT_EQ(c_fields(v).size(), 9u);
}

TEST(Flowgen, SystemIsSymmetricPsdWithExpectedInnerProductCount) {
    const auto g = cube(3, 16, 10.0);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto v = random_tt(g, {1, 2, 3, 1}, 10 + seed);
        const auto w = random_tt(g, {1, 3, 2, 1}, 20 + seed);
        const ProjectionFrame frame(v);
        for (auto fn : {Functional::FullMin, Functional::NormalMin}) {
            const auto sys = assemble(v, w, &frame, fn);
            EXPECT_EQ(sys.inner_products, (81 + 9) / 2 + 9);
            EXPECT_LE((sys.a - sys.a.transpose()).norm(), 1e-14 * sys.a.norm());
            Eigen::SelfAdjointEigenSolver<Matrix> eig(sys.a);
            EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-10 * eig.eigenvalues().maxCoeff());
        }
    }
    EXPECT_THROW(assemble(random_tt(g, {1, 1, 1, 1}, 1), random_tt(g, {1, 1, 1, 1}, 2), nullptr,
                          Functional::NormalMin),
                 std::invalid_argument);
}

TEST(Flowgen, GradientMatchesFiniteDifferences) {
    const auto g = cube(3, 16, 10.0);
    std::mt19937_64 rng(99);
    std::normal_distribution<double> nd;
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        const auto v = random_tt(g, {1, 3, 2, 1}, 100 + seed);
        const auto w = random_tt(g, {1, 2, 3, 1}, 200 + seed);
        const ProjectionFrame frame(v);
        for (auto fn : {Functional::FullMin, Functional::NormalMin}) {
            const auto sys = assemble(v, w, &frame, fn);
            Matrix s(3, 3);
            for (Index k = 0; k < 9; ++k)
                s.data()[k] = nd(rng);
            const Vector grad = 2.0 * (sys.a * vec(s) - sys.b);
            Vector fd(9);
            const double h = 1e-3;
            for (Index i = 0; i < 3; ++i)
                for (Index j = 0; j < 3; ++j) {
                    Matrix sp = s, sm = s;
                    sp(i, j) += h;
                    sm(i, j) -= h;
                    fd[vec_index(i, j, 3)] = (generator_cost(v, w, sp, &frame, fn) - generator_cost(v, w, sm, &frame, fn)) /
                                             (2.0 * h);
                }
            EXPECT_LE((fd - grad).norm(), 1e-5 * grad.norm()) << "seed " << seed;
        }
    }
}

TEST(Flowgen, MinimizerMatchesPseudoInverseAndLowersCost) {
    const auto g = cube(3, 16, 10.0);
    const auto v = random_tt(g, {1, 2, 2, 1}, 7);
    const auto w = random_tt(g, {1, 2, 2, 1}, 8);
    const auto sys = assemble(v, w, nullptr, Functional::FullMin);
    const Matrix s = solve_min_norm(sys);
    const Vector pinv = sys.a.completeOrthogonalDecomposition().pseudoInverse() * sys.b;
    EXPECT_LE((vec(s) - pinv).norm(), 1e-6 * pinv.norm());
    const double c0 = generator_cost(v, w, s, nullptr, Functional::FullMin);
    for (int k = 0; k < 9; ++k) {
        Matrix p = s;
        p.data()[k] += 1e-3;
        EXPECT_GE(generator_cost(v, w, p, nullptr, Functional::FullMin), c0);
    }
}

TEST(Flowgen, MinimalNormOnSingularSystem) {
    // Rank-deficient A: the component of the solution in the null space must vanish.
    GeneratorSystem sys;
    Matrix q = Matrix::Identity(4, 4);
    q.col(1) = Vector::Constant(4, 0.5);
    q = q.householderQr().householderQ();
    Vector lam(4);
    lam << 3.0, 1.0, 0.0, 0.0;
    sys.a = q * lam.asDiagonal() * q.transpose();
    sys.b = sys.a * Vector::LinSpaced(4, 1.0, 4.0);
    const Matrix s = solve_min_norm(sys);
    Eigen::JacobiSVD<Matrix> svd(sys.a, Eigen::ComputeFullU | Eigen::ComputeFullV);
    svd.setThreshold(1e-10);
    const Vector expect = svd.solve(sys.b);
    EXPECT_LE((vec(s) - expect).norm(), 1e-12 * expect.norm());
    EXPECT_NEAR(q.col(2).dot(vec(s)), 0.0, 1e-12);
    EXPECT_NEAR(q.col(3).dot(vec(s)), 0.0, 1e-12);
}

TEST(Flowgen, ZeroSystem) {
    GeneratorSystem sys;
    sys.a = Matrix::Zero(4, 4);
    sys.b = Vector::Zero(4);
    EXPECT_EQ(solve_min_norm(sys), Matrix::Zero(2, 2));
    sys.b[0] = 1.0;
    EXPECT_THROW(solve_min_norm(sys), InconsistentSystemError);
    sys.a = Matrix::Zero(5, 5);
    EXPECT_THROW(solve_min_norm(sys), std::invalid_argument);
}

TEST(Flowgen, LinearLiouvilleGeneratorRecoversDrift) {
    const auto g = cube(3, 64, 30.0);
    const GaussianDensity u0{{4.0, 0.25, 4.0}, {1.0, -1.0, 1.0}};
    const auto v = u0.tensor(g);
    const auto op = build_liouville(LinearDrift{ridge_b()}, g, CoordinateMap::identity(3));
    const auto gv = round(apply(op, v), 1e-12);
    const auto sys = assemble(v, gv, nullptr, Functional::FullMin);
    EXPECT_LE((sys.a * vec(ridge_b()) - sys.b).norm(), 1e-8 * sys.b.norm());
    const Matrix s = solve_min_norm(sys);
    EXPECT_LE((s - ridge_b()).norm(), 1e-6);
    EXPECT_LE(generator_cost(v, gv, s, nullptr, Functional::FullMin), 1e-12 * std::pow(norm(gv), 2));
}

TEST(Flowgen, GammaStepEulerAndAb2) {
    const Matrix b = ridge_b();
    auto integrate = [&](Scheme scheme, int steps) {
        FlowState s = FlowState::identity(3);
        for (int k = 0; k < steps; ++k)
            s = gamma_step(s, b, 1.0 / steps, scheme);
        EXPECT_NEAR(s.t, 1.0, 1e-12);
        return s;
    };
    for (auto scheme : {Scheme::Euler, Scheme::AB2}) {
        const FlowState coarse = integrate(scheme, 1000);
        const FlowState fine = integrate(scheme, 2000);
        const double e1 = (coarse.map.gamma() - b.exp()).norm();
        const double e2 = (fine.map.gamma() - b.exp()).norm();
        // Observed order from halving dt.
        if (scheme == Scheme::Euler) {
            EXPECT_LE(e1, 2e-3);
            EXPECT_GE(e1 / e2, 1.8);
        } else {
            EXPECT_LE(e1, 5e-6);
            EXPECT_GE(e1 / e2, 3.5);
        }
        // det e^{tB} = 1 since tr B = 0.
        EXPECT_NEAR(coarse.map.det(), 1.0, 2.0 * e1);
    }
    EXPECT_THROW(gamma_step(FlowState::identity(2), Matrix::Zero(2, 2), 0.0, Scheme::Euler), std::invalid_argument);
    // A step that collapses Gamma is reported.
    EXPECT_THROW(gamma_step(FlowState::identity(2), -Matrix::Identity(2, 2), 1.0, Scheme::Euler), std::runtime_error);
}
