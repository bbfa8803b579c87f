#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include <unsupported/Eigen/MatrixFunctions>

#include "coordflow/flowgen.hpp"
#include "coordflow/integrator.hpp"
#include "coordflow/operators.hpp"
#include "coordflow/tensor_train.hpp"

namespace coordflow {

/// Dense benchmark solution on the full tensor-product grid (row-major, dimension 0 slowest).
struct FullGridSolution {
    std::vector<PeriodicGrid> grids;
    std::vector<double> values;
    double time = 0.0;

    Index dims() const { return static_cast<Index>(grids.size()); }
};

inline constexpr Index max_full_grid_points = Index{1} << 27;

inline void check_full_grid(std::span<const PeriodicGrid> grids) {
    if (grids.empty() || grids.size() > 3)
        throw std::invalid_argument("full-grid solver supports 1 <= d <= 3");
    double points = 1.0;
    for (const auto& g : grids)
        points *= static_cast<double>(g.size());
    if (points > static_cast<double>(max_full_grid_points))
        throw std::length_error("full-grid solver: n^d exceeds 2^27 points");
}

/// fn(x) sampled at every node of the grid.
template <typename Fn>
std::vector<double> sample_full(std::span<const PeriodicGrid> grids, Fn&& fn) {
    std::vector<double> out(static_cast<std::size_t>(full_size(grids)));
    for_each_node(grids, [&](Index flat, std::span<const double> x) { out[static_cast<std::size_t>(flat)] = fn(x); });
    return out;
}

/// Mass of a full-grid field (trapezoidal rule, exact for band-limited data).
inline double full_integral(std::span<const PeriodicGrid> grids, std::span<const double> values) {
    return cell_volume(grids) * std::accumulate(values.begin(), values.end(), 0.0);
}

using FullGridCallback = std::function<void(Index step, double t, const std::vector<double>& values)>;

/**
 * Explicit pseudo-spectral time stepping of u_t = G u with the operator
 * applied densely. AB2 starts with one Euler step. The callback, if set, sees
 * every time level including t = 0.
 */
inline FullGridSolution solve_full(const SeparatedOperator& op, std::vector<double> ic, double dt, double final_time,
                                   Scheme scheme, const FullGridCallback& callback = {}) {
    check_full_grid(op.grids());
    if (static_cast<Index>(ic.size()) != full_size(op.grids()))
        throw std::invalid_argument("solve_full: initial condition size does not match grids");
    StepConfig probe;
    probe.dt = dt;
    probe.final_time = final_time;
    const Index steps = probe.step_count();

    std::vector<double> u = std::move(ic);
    std::vector<double> previous;
    if (callback)
        callback(0, 0.0, u);
    for (Index k = 0; k < steps; ++k) {
        std::vector<double> f = apply_full(op, u);
        if (scheme == Scheme::AB2 && !previous.empty()) {
            for (std::size_t p = 0; p < u.size(); ++p)
                u[p] += dt * (1.5 * f[p] - 0.5 * previous[p]);
        } else {
            for (std::size_t p = 0; p < u.size(); ++p)
                u[p] += dt * f[p];
        }
        previous = std::move(f);
        for (double x : u)
            if (!std::isfinite(x))
                throw IntegrationError(k, "solve_full: non-finite values");
        if (callback)
            callback(k + 1, static_cast<double>(k + 1) * dt, u);
    }
    return {std::vector<PeriodicGrid>(op.grids().begin(), op.grids().end()), std::move(u),
            static_cast<double>(steps) * dt};
}

/// Trigonometric interpolant of full-grid data at an arbitrary point.
inline double trig_eval_multi(std::span<const PeriodicGrid> grids, std::span<const double> values,
                              std::span<const double> x) {
    const Index d = static_cast<Index>(grids.size());
    if (static_cast<Index>(x.size()) != d)
        throw std::invalid_argument("trig_eval_multi: point dimension mismatch");
    // Contract the last dimension first so the running array stays contiguous.
    std::vector<double> cur(values.begin(), values.end());
    for (Index i = d - 1; i >= 0; --i) {
        const auto& g = grids[static_cast<std::size_t>(i)];
        const Vector w = g.interpolation_weights(x[static_cast<std::size_t>(i)]);
        const Index n = g.size();
        const Index outer = static_cast<Index>(cur.size()) / n;
        std::vector<double> next(static_cast<std::size_t>(outer));
        Eigen::Map<const RowMatrix> m(cur.data(), outer, n);
        Eigen::Map<Vector>(next.data(), outer).noalias() = m * w;
        cur = std::move(next);
    }
    return cur.front();
}

struct ErrorOptions {
    std::uint64_t seed = 20240607;
    Index samples = 100000;
    /// Benchmark-grid nodes of largest |u| added to the random sample.
    Index extrema = 2000;
    /// Full-grid comparison when n^d does not exceed this.
    Index full_grid_limit = Index{1} << 20;
    /// Tolerance for the TT copy of the benchmark used at random points.
    double bench_compression = 1e-13;
};

struct ErrorNorms {
    double linf = 0.0;
    double l2 = 0.0;
    Index points = 0;
};

/**
 * Compares the ridge function v(Gamma x) with the benchmark in Cartesian
 * coordinates. v is evaluated by trigonometric interpolation at wrap(Gamma x).
 * On large grids the comparison uses a fixed-seed random sample plus the
 * benchmark's largest-magnitude nodes; the l2 value is then a Monte Carlo
 * estimate.
 */
inline ErrorNorms linf_error(const TensorTrain& v, const Matrix& gamma, const FullGridSolution& bench,
                             const ErrorOptions& options = {}) {
    const Index d = v.dims();
    if (bench.dims() != d || gamma.rows() != d || gamma.cols() != d)
        throw std::invalid_argument("linf_error: dimension mismatch");
    for (Index i = 0; i < d; ++i)
        if (bench.grids[static_cast<std::size_t>(i)].length() != v.grid(i).length())
            throw std::invalid_argument("linf_error: domain mismatch");
    if (static_cast<Index>(bench.values.size()) != full_size(bench.grids))
        throw std::invalid_argument("linf_error: benchmark value count does not match grids");

    const bool identity = gamma.isIdentity(0.0);
    const bool same_grid = v.grids() == bench.grids;
    std::vector<double> y(static_cast<std::size_t>(d));
    auto ridge = [&](std::span<const double> x) {
        if (identity)
            return eval_point(v, x);
        for (Index i = 0; i < d; ++i) {
            double s = 0.0;
            for (Index j = 0; j < d; ++j)
                s += gamma(i, j) * x[static_cast<std::size_t>(j)];
            y[static_cast<std::size_t>(i)] = s;
        }
        return eval_point(v, y);
    };

    ErrorNorms out;
    const Index total = full_size(bench.grids);
    if (total <= options.full_grid_limit) {
        std::vector<double> vfull;
        if (identity && same_grid)
            vfull = to_full(v);
        double sq = 0.0;
        for_each_node(bench.grids, [&](Index flat, std::span<const double> x) {
            const double a = vfull.empty() ? ridge(x) : vfull[static_cast<std::size_t>(flat)];
            const double e = std::abs(a - bench.values[static_cast<std::size_t>(flat)]);
            out.linf = std::max(out.linf, e);
            sq += e * e;
        });
        out.l2 = std::sqrt(sq * cell_volume(bench.grids));
        out.points = total;
        return out;
    }

    const TensorTrain bench_tt = from_full(bench.grids, bench.values, options.bench_compression);
    std::vector<Index> order(static_cast<std::size_t>(total));
    std::iota(order.begin(), order.end(), Index{0});
    const Index top = std::min(options.extrema, total);
    std::partial_sort(order.begin(), order.begin() + top, order.end(), [&](Index a, Index b) {
        return std::abs(bench.values[static_cast<std::size_t>(a)]) > std::abs(bench.values[static_cast<std::size_t>(b)]);
    });

    double volume = 1.0;
    for (const auto& g : bench.grids)
        volume *= g.length();
    double sq = 0.0;
    std::vector<double> x(static_cast<std::size_t>(d));
    std::mt19937_64 rng(options.seed);
    for (Index s = 0; s < options.samples; ++s) {
        for (Index i = 0; i < d; ++i) {
            const double len = bench.grids[static_cast<std::size_t>(i)].length();
            std::uniform_real_distribution<double> dist(-0.5 * len, 0.5 * len);
            x[static_cast<std::size_t>(i)] = dist(rng);
        }
        const double e = std::abs(ridge(x) - eval_point(bench_tt, x));
        out.linf = std::max(out.linf, e);
        sq += e * e;
    }
    for (Index t = 0; t < top; ++t) {
        Index flat = order[static_cast<std::size_t>(t)];
        for (Index i = d - 1; i >= 0; --i) {
            const auto& g = bench.grids[static_cast<std::size_t>(i)];
            x[static_cast<std::size_t>(i)] = g.node(flat % g.size());
            flat /= g.size();
        }
        const double e = std::abs(ridge(x) - bench.values[static_cast<std::size_t>(order[static_cast<std::size_t>(t)])]);
        out.linf = std::max(out.linf, e);
    }
    out.l2 = std::sqrt(volume * sq / static_cast<double>(std::max<Index>(options.samples, 1)));
    out.points = options.samples + top;
    return out;
}

/// Product Gaussian initial density prod_j exp(-(x_j + t_j)^2 / beta_j) / sqrt(pi beta_j).
struct GaussianDensity {
    std::vector<double> beta;
    std::vector<double> shift;

    double operator()(std::span<const double> x) const {
        double e = 0.0, m = 1.0;
        for (std::size_t j = 0; j < beta.size(); ++j) {
            const double z = x[j] + shift[j];
            e += z * z / beta[j];
            m *= std::sqrt(std::numbers::pi * beta[j]);
        }
        return std::exp(-e) / m;
    }

    /// Rank-one tensor train of the density on the given grids.
    TensorTrain tensor(const std::vector<PeriodicGrid>& grids) const {
        if (grids.size() != beta.size() || shift.size() != beta.size())
            throw std::invalid_argument("GaussianDensity: parameter count must equal d");
        std::vector<std::vector<Vector>> terms(1);
        for (std::size_t j = 0; j < beta.size(); ++j) {
            const auto& g = grids[j];
            Vector f(g.size());
            for (Index k = 0; k < g.size(); ++k) {
                const double z = g.node(k) + shift[j];
                f[k] = std::exp(-z * z / beta[j]) / std::sqrt(std::numbers::pi * beta[j]);
            }
            terms[0].push_back(std::move(f));
        }
        const double w = 1.0;
        return from_separable(grids, terms, std::span<const double>(&w, 1));
    }
};

/// u0(e^{tB} x), the exact solution of u_t = (Bx) . grad u on the whole space.
inline FullGridSolution ridge_solution(const GaussianDensity& u0, const Matrix& b, double t,
                                       const std::vector<PeriodicGrid>& grids) {
    check_full_grid(grids);
    const Matrix e = (t * b).exp();
    const Index d = static_cast<Index>(grids.size());
    std::vector<double> z(static_cast<std::size_t>(d));
    auto values = sample_full(grids, [&](std::span<const double> x) {
        for (Index i = 0; i < d; ++i) {
            double s = 0.0;
            for (Index j = 0; j < d; ++j)
                s += e(i, j) * x[static_cast<std::size_t>(j)];
            z[static_cast<std::size_t>(i)] = s;
        }
        return u0(z);
    });
    return {grids, std::move(values), t};
}

} // namespace coordflow
