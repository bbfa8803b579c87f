#include <cmath>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "coordflow/linalg.hpp"
#include "coordflow/snapshot.hpp"
#include "coordflow/tensor_train.hpp"
#include "helpers.hpp"

using namespace coordflow;
using testing_support::cube;
using testing_support::dense;
using testing_support::random_tt;

TEST(TensorTrain, ShapeValidation) {
    const auto g = cube(3, 8);
    std::vector<Core> bad{Core(1, 8, 2), Core(3, 8, 1), Core(1, 8, 1)};
    EXPECT_THROW(TensorTrain(g, bad), std::invalid_argument);
    std::vector<Core> edge{Core(2, 8, 1), Core(1, 8, 1), Core(1, 8, 1)};
    EXPECT_THROW(TensorTrain(g, edge), std::invalid_argument);
    std::vector<Core> size{Core(1, 9, 1), Core(1, 8, 1), Core(1, 8, 1)};
    EXPECT_THROW(TensorTrain(g, size), std::invalid_argument);
}

TEST(TensorTrain, RanksAndNorms) {
    const auto v = random_tt(cube(4, 8), {1, 2, 3, 2, 1}, 1);
    EXPECT_EQ(v.ranks(), (std::vector<Index>{1, 2, 3, 2, 1}));
    EXPECT_EQ(v.rank_1norm(), 9);
    EXPECT_EQ(v.max_rank(), 3);
    EXPECT_EQ(v.full_size(), 8 * 8 * 8 * 8);
}

TEST(TensorTrain, FullRoundTrip) {
    const auto g = cube(3, 10);
    const auto v = random_tt(g, {1, 3, 2, 1}, 2);
    const auto full = to_full(v);
    const auto w = from_full(g, full, 1e-13);
    EXPECT_LE((dense(w) - dense(v)).norm(), 1e-11 * dense(v).norm());
    EXPECT_LE(w.ranks()[1], 3);
    EXPECT_LE(w.ranks()[2], 2);
}

TEST(TensorTrain, NodeValueMatchesFullLayout) {
    const auto g = std::vector<PeriodicGrid>{make_grid(8, 1.0), make_grid(10, 2.0), make_grid(12, 3.0)};
    const auto v = random_tt(g, {1, 2, 3, 1}, 3);
    const auto full = to_full(v);
    const std::array<Index, 3> idx{5, 7, 11};
    EXPECT_NEAR(node_value(v, idx), full[static_cast<std::size_t>((5 * 10 + 7) * 12 + 11)], 1e-12);
}

TEST(TensorTrain, ArithmeticMatchesDense) {
    const auto g = cube(3, 8);
    const auto a = random_tt(g, {1, 2, 3, 1}, 4);
    const auto b = random_tt(g, {1, 3, 1, 1}, 5);
    EXPECT_LE((dense(a + b) - (dense(a) + dense(b))).norm(), 1e-12 * dense(a).norm());
    EXPECT_LE((dense(a - b) - (dense(a) - dense(b))).norm(), 1e-12 * dense(a).norm());
    EXPECT_LE((dense(2.5 * a) - 2.5 * dense(a)).norm(), 1e-12 * dense(a).norm());
    EXPECT_EQ((a + b).ranks(), (std::vector<Index>{1, 5, 4, 1}));
    const double vol = cell_volume(g);
    EXPECT_NEAR(inner(a, b), vol * dense(a).dot(dense(b)), 1e-10 * vol * dense(a).norm() * dense(b).norm());
    EXPECT_NEAR(norm(a), std::sqrt(vol) * dense(a).norm(), 1e-12 * norm(a));
    EXPECT_NEAR(integral(a), vol * dense(a).sum(), 1e-10 * vol * dense(a).cwiseAbs().sum());
}

TEST(TensorTrain, SumOfManyTerms) {
    const auto g = cube(3, 8);
    std::vector<TensorTrain> terms;
    Eigen::VectorXd expect = Eigen::VectorXd::Zero(512);
    for (int i = 0; i < 4; ++i) {
        terms.push_back(random_tt(g, {1, 2, 2, 1}, 10 + i));
        expect += dense(terms.back());
    }
    EXPECT_LE((dense(sum(terms)) - expect).norm(), 1e-12 * expect.norm());
}

TEST(TensorTrain, GridMismatchThrows) {
    const auto a = random_tt(cube(3, 8), {1, 1, 1, 1}, 1);
    const auto b = random_tt(cube(3, 10), {1, 1, 1, 1}, 1);
    EXPECT_THROW(add(a, b), std::invalid_argument);
    EXPECT_THROW(inner(a, b), std::invalid_argument);
}

TEST(TensorTrain, OrthogonalizationPreservesTensor) {
    const auto v = random_tt(cube(4, 8), {1, 3, 3, 3, 1}, 7);
    const auto l = left_orthogonalize(v);
    const auto r = right_orthogonalize(v);
    EXPECT_LE((dense(l) - dense(v)).norm(), 1e-12 * dense(v).norm());
    EXPECT_LE((dense(r) - dense(v)).norm(), 1e-12 * dense(v).norm());
    for (Index i = 0; i + 1 < 4; ++i) {
        const Matrix u = l.core(i).left_unfolding();
        EXPECT_LE((u.transpose() * u - Matrix::Identity(u.cols(), u.cols())).norm(), 1e-12);
    }
    for (Index i = 1; i < 4; ++i) {
        const Matrix w = r.core(i).right_unfolding();
        EXPECT_LE((w * w.transpose() - Matrix::Identity(w.rows(), w.rows())).norm(), 1e-12);
    }
}

TEST(TensorTrain, RoundingErrorBound) {
    const auto g = cube(3, 12);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        // A rank-3 tensor plus a small perturbation has decaying singular values.
        const auto big = random_tt(g, {1, 3, 3, 1}, 100 + seed);
        const auto small = random_tt(g, {1, 3, 3, 1}, 200 + seed);
        const auto v = big + 1e-4 * small;
        for (double delta : {1e-2, 1e-4, 1e-6, 1e-10}) {
            const auto w = round(v, delta);
            EXPECT_LE(stable_norm(w - v), delta * norm(v) * (1.0 + 1e-10)) << "seed " << seed << " delta " << delta;
            EXPECT_EQ(w.orthogonality(), Orthogonality::Left);
        }
        EXPECT_LE(round(v, 1e-3).max_rank(), 3);
    }
}

TEST(TensorTrain, RoundingRecoversRankOfRedundantSum) {
    const auto v = random_tt(cube(3, 8), {1, 2, 2, 1}, 9);
    const auto w = round(v + v + v, 1e-12);
    EXPECT_EQ(w.ranks(), (std::vector<Index>{1, 2, 2, 1}));
    EXPECT_LE(stable_norm(w - 3.0 * v), 1e-11 * norm(v));
}

TEST(TensorTrain, RoundingEdgeCases) {
    const auto g = cube(3, 8);
    const auto z = round(TensorTrain::zeros(g), 1e-5);
    EXPECT_EQ(z.rank_1norm(), 4);
    EXPECT_EQ(norm(z), 0.0);
    EXPECT_THROW(round(TensorTrain::zeros(g), -1.0), std::invalid_argument);
    auto v = random_tt(g, {1, 2, 2, 1}, 1);
    std::vector<Core> cores = v.cores();
    cores[1].data()[0] = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(round(TensorTrain(g, cores), 1e-5), std::runtime_error);
    EXPECT_FALSE(all_finite(TensorTrain(g, cores)));
}

TEST(TensorTrain, MaxRankCap) {
    const auto v = random_tt(cube(3, 8), {1, 4, 4, 1}, 11);
    EXPECT_LE(round(v, 0.0, 2).max_rank(), 2);
}

TEST(TensorTrain, ModeOperationsMatchDense) {
    const auto g = cube(3, 8, 3.0);
    const auto v = random_tt(g, {1, 2, 2, 1}, 12);
    const Matrix m = Matrix::Random(8, 8);
    const Matrix eye = Matrix::Identity(8, 8);
    const Eigen::VectorXd expect = testing_support::kron_chain({eye, m, eye}) * dense(v);
    EXPECT_LE((dense(mode_apply(v, 1, m)) - expect).norm(), 1e-12 * expect.norm());
    const Eigen::VectorXd dx = testing_support::kron_chain({eye, eye, g[2].diff_matrix(1)}) * dense(v);
    EXPECT_LE((dense(mode_derivative(v, 2, 1)) - dx).norm(), 1e-11 * dx.norm());
    const Eigen::VectorXd xv = testing_support::kron_chain({Matrix(g[0].nodes().asDiagonal()), eye, eye}) * dense(v);
    EXPECT_LE((dense(mode_coordinate_multiply(v, 0)) - xv).norm(), 1e-12 * xv.norm());
    EXPECT_THROW(mode_apply(v, 3, m), std::out_of_range);
}

TEST(TensorTrain, SeparableConstruction) {
    const auto g = cube(2, 8);
    Vector a = Vector::LinSpaced(8, 1.0, 2.0), b = Vector::LinSpaced(8, -1.0, 1.0);
    std::vector<std::vector<Vector>> terms{{a, b}, {b, a}};
    const std::vector<double> w{2.0, -1.0};
    const auto v = from_separable(g, terms, w);
    const auto full = to_full(v);
    for (Index i = 0; i < 8; ++i)
        for (Index j = 0; j < 8; ++j)
            EXPECT_NEAR(full[static_cast<std::size_t>(i * 8 + j)], 2.0 * a[i] * b[j] - b[i] * a[j], 1e-14);
}

TEST(TensorTrain, EvalPointInterpolates) {
    const double len = 2.0 * std::numbers::pi;
    const auto g = cube(3, 16, len);
    std::vector<std::vector<Vector>> terms(1);
    for (int k = 1; k <= 3; ++k) {
        Vector f(16);
        for (Index j = 0; j < 16; ++j)
            f[j] = std::cos(k * g[0].node(j)) + 0.5;
        terms[0].push_back(f);
    }
    const double w = 1.0;
    const auto v = from_separable(g, terms, std::span<const double>(&w, 1));
    const std::array<double, 3> p{0.3, -1.7, 2.9};
    double expect = 1.0;
    for (int k = 1; k <= 3; ++k)
        expect *= std::cos(k * p[static_cast<std::size_t>(k - 1)]) + 0.5;
    EXPECT_NEAR(eval_point(v, p), expect, 1e-12);
}

TEST(TensorTrain, TruncatedSvdRespectsTolerance) {
    Matrix m = Matrix::Random(40, 7) * Matrix::Random(7, 90);
    for (double eps : {1e-1, 1e-3, 1e-8}) {
        const auto svd = truncated_svd(m, eps * m.norm());
        const Matrix r = svd.u * svd.s.asDiagonal() * svd.vt;
        EXPECT_LE((r - m).norm(), eps * m.norm() * (1.0 + 1e-12));
    }
    EXPECT_LE(truncated_svd(m, 0.0).rank(), 7);
    EXPECT_EQ(truncated_svd(m, 0.0, 3).rank(), 3);
}

// A sampled drift product on which Eigen 3.4.0's divide-and-conquer SVD returns NaN vectors.
TEST(TensorTrain, TruncatedSvdFiniteOnDivideAndConquerFailure) {
    std::ifstream in(std::string(COORDFLOW_TEST_DATA_DIR) + "/svd_nan_200x200.bin", std::ios::binary);
    ASSERT_TRUE(in);
    RowMatrix m(200, 200);
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    ASSERT_TRUE(in);
    ASSERT_TRUE(m.allFinite());
    const Matrix dm = m;
    Matrix u, v;
    Vector s;
    thin_svd(dm, u, s, v);
    ASSERT_TRUE(u.allFinite() && s.allFinite() && v.allFinite());
    EXPECT_LE((u * s.asDiagonal() * v.transpose() - dm).norm(), 1e-12 * dm.norm());
    const auto svd = truncated_svd(m, 1e-10 * m.norm());
    ASSERT_TRUE(svd.u.allFinite() && svd.vt.allFinite());
    EXPECT_LE((svd.u * svd.s.asDiagonal() * svd.vt - dm).norm(), 1e-10 * dm.norm() * (1.0 + 1e-9));
    std::vector<double> flat(m.data(), m.data() + m.size());
    EXPECT_TRUE(all_finite(from_full(cube(2, 200, 30.0), flat, 1e-10, 25)));
}

TEST(Snapshot, TensorRoundTrip) {
    const auto g = std::vector<PeriodicGrid>{make_grid(8, 30.0), make_grid(10, 20.0)};
    const auto v = random_tt(g, {1, 3, 1}, 5);
    Matrix gamma(2, 2);
    gamma << 1.0, 0.5, -0.25, 2.0;
    std::stringstream ss;
    write_snapshot(ss, v, 0.75, gamma);
    write_snapshot(ss, v, 1.5, gamma);
    Snapshot s;
    ASSERT_TRUE(read_snapshot(ss, s));
    const auto& t = std::get<TensorSnapshot>(s);
    EXPECT_EQ(t.time, 0.75);
    EXPECT_EQ(t.gamma, gamma);
    EXPECT_EQ(t.tensor.ranks(), v.ranks());
    EXPECT_EQ(to_full(t.tensor), to_full(v));
    EXPECT_EQ(t.tensor.grid(1).length(), 20.0);
    ASSERT_TRUE(read_snapshot(ss, s));
    EXPECT_EQ(std::get<TensorSnapshot>(s).time, 1.5);
    EXPECT_FALSE(read_snapshot(ss, s));
}

TEST(Snapshot, GridRoundTripAndCorruption) {
    const auto g = cube(2, 8);
    std::vector<double> vals(64);
    for (std::size_t i = 0; i < vals.size(); ++i)
        vals[i] = std::sin(static_cast<double>(i));
    std::stringstream ss;
    write_snapshot(ss, g, vals, 2.0, Matrix::Identity(2, 2));
    const std::string bytes = ss.str();
    Snapshot s;
    std::stringstream in(bytes);
    ASSERT_TRUE(read_snapshot(in, s));
    EXPECT_EQ(std::get<GridSnapshot>(s).values, vals);
    std::stringstream truncated(bytes.substr(0, bytes.size() - 5));
    EXPECT_THROW(read_snapshot(truncated, s), std::runtime_error);
    std::string bad = bytes;
    bad[0] = 'X';
    std::stringstream badin(bad);
    EXPECT_THROW(read_snapshot(badin, s), std::runtime_error);
}
