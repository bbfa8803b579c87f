#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "coordflow/grid.hpp"

using namespace coordflow;

namespace {

Vector sample(const PeriodicGrid& g, double (*f)(double, double), double p) {
    Vector v(g.size());
    for (Index j = 0; j < g.size(); ++j)
        v[j] = f(g.node(j), p);
    return v;
}

} // namespace

TEST(Grid, NodesAndSpacing) {
    const auto g = make_grid(16, 30.0);
    EXPECT_EQ(g.size(), 16);
    EXPECT_DOUBLE_EQ(g.node(0), -15.0);
    EXPECT_DOUBLE_EQ(g.spacing(), 30.0 / 16.0);
    EXPECT_DOUBLE_EQ(g.node(15), -15.0 + 15.0 * 30.0 / 16.0);
}

TEST(Grid, RejectsBadSizes) {
    EXPECT_THROW(make_grid(7, 1.0), std::invalid_argument);
    EXPECT_THROW(make_grid(15, 1.0), std::invalid_argument);
    EXPECT_THROW(make_grid(6, 1.0), std::invalid_argument);
    EXPECT_THROW(make_grid(16, 0.0), std::invalid_argument);
    EXPECT_THROW(make_grid(16, -3.0), std::invalid_argument);
}

TEST(Grid, FirstDerivativeOfFourierModes) {
    const double len = 30.0;
    const auto g = make_grid(32, len);
    for (int k = 1; k < 16; ++k) {
        const double w = 2.0 * std::numbers::pi * k / len;
        Vector s(g.size()), c(g.size());
        for (Index j = 0; j < g.size(); ++j) {
            s[j] = std::sin(w * g.node(j));
            c[j] = std::cos(w * g.node(j));
        }
        EXPECT_LE((g.diff_matrix(1) * s - w * c).cwiseAbs().maxCoeff(), 1e-11 * w) << "k = " << k;
        EXPECT_LE((g.diff_matrix(2) * s + w * w * s).cwiseAbs().maxCoeff(), 1e-10 * w * w) << "k = " << k;
    }
}

TEST(Grid, ConstantsAreAnnihilated) {
    const auto g = make_grid(24, 2.0);
    const Vector one = Vector::Ones(24);
    EXPECT_LE((g.diff_matrix(1) * one).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((g.diff_matrix(2) * one).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Grid, SecondDerivativeIsSquareOfFirst) {
    for (Index n : {8, 16, 64, 200}) {
        const auto g = make_grid(n, 30.0);
        const Matrix sq = g.diff_matrix(1) * g.diff_matrix(1);
        EXPECT_LE((sq - g.diff_matrix(2)).cwiseAbs().maxCoeff(), 1e-11 * std::max(1.0, sq.cwiseAbs().maxCoeff()));
    }
}

TEST(Grid, FirstDerivativeIsSkewSymmetric) {
    const auto g = make_grid(20, 5.0);
    EXPECT_LE((g.diff_matrix(1) + g.diff_matrix(1).transpose()).cwiseAbs().maxCoeff(), 1e-13);
}

TEST(Grid, GaussianDerivativeSpectralAccuracy) {
    const auto g = make_grid(128, 30.0);
    const Vector u = sample(g, [](double x, double) { return std::exp(-x * x); }, 0.0);
    const Vector du = sample(g, [](double x, double) { return -2.0 * x * std::exp(-x * x); }, 0.0);
    EXPECT_LE((g.diff_matrix(1) * u - du).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Grid, DiffMatrixOrderValidation) {
    const auto g = make_grid(8, 1.0);
    EXPECT_THROW(g.diff_matrix(0), std::invalid_argument);
    EXPECT_THROW(g.diff_matrix(3), std::invalid_argument);
    EXPECT_THROW(SpectralDiff(g, 3), std::invalid_argument);
}

TEST(Grid, SpectralDiffApply) {
    const auto g = make_grid(16, 2.0 * std::numbers::pi);
    const Vector s = sample(g, [](double x, double) { return std::sin(3.0 * x); }, 0.0);
    const SpectralDiff d(g, 1);
    const Vector ds = d.apply(std::span<const double>(s.data(), 16));
    for (Index j = 0; j < 16; ++j)
        EXPECT_NEAR(ds[j], 3.0 * std::cos(3.0 * g.node(j)), 1e-12);
    EXPECT_THROW(d.apply(std::span<const double>(s.data(), 15)), std::invalid_argument);
}

TEST(Grid, Wrap) {
    const auto g = make_grid(8, 10.0);
    EXPECT_DOUBLE_EQ(g.wrap(0.0), 0.0);
    EXPECT_DOUBLE_EQ(g.wrap(5.0), -5.0);
    EXPECT_DOUBLE_EQ(g.wrap(-5.0), -5.0);
    EXPECT_NEAR(g.wrap(12.5), 2.5, 1e-14);
    EXPECT_NEAR(g.wrap(-27.0), 3.0, 1e-14);
}

TEST(Grid, TrigInterpolationReproducesBandLimitedFunctions) {
    const double len = 30.0;
    const auto g = make_grid(32, len);
    const double w = 2.0 * std::numbers::pi / len;
    Vector f(g.size());
    for (Index j = 0; j < g.size(); ++j)
        f[j] = 1.0 + std::sin(3.0 * w * g.node(j)) - 0.5 * std::cos(7.0 * w * g.node(j));
    for (double x : {-14.9, -3.3, 0.01, 7.77, 14.99, 31.0}) {
        const double exact = 1.0 + std::sin(3.0 * w * x) - 0.5 * std::cos(7.0 * w * x);
        EXPECT_NEAR(trig_eval(g, std::span<const double>(f.data(), 32), x), exact, 1e-12) << x;
    }
}

TEST(Grid, InterpolationWeightsAreCardinal) {
    const auto g = make_grid(16, 4.0);
    for (Index j = 0; j < 16; ++j) {
        const Vector w = g.interpolation_weights(g.node(j));
        EXPECT_DOUBLE_EQ(w[j], 1.0);
        EXPECT_DOUBLE_EQ(w.sum(), 1.0);
    }
    EXPECT_NEAR(g.interpolation_weights(0.123).sum(), 1.0, 1e-13);
}

TEST(Grid, EqualityAndCellVolume) {
    const auto a = make_grid(16, 2.0);
    const auto b = make_grid(16, 2.0);
    const auto c = make_grid(16, 3.0);
    EXPECT_TRUE(a == b);
    EXPECT_FALSE(a == c);
    const std::vector<PeriodicGrid> gs{a, c};
    EXPECT_DOUBLE_EQ(cell_volume(gs), (2.0 / 16) * (3.0 / 16));
}
