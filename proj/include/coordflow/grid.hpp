#pragma once

#include <cmath>
#include <memory>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace coordflow {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/**
 * Uniform periodic grid on [-L/2, L/2) with n nodes x_j = -L/2 + j L/n.
 *
 * Grids are immutable. The nodes and the first/second order Fourier
 * differentiation matrices are built once and shared between copies, so a
 * grid can be passed by value into every tensor that lives on it.
 */
class PeriodicGrid {
public:
    PeriodicGrid(Index n, double length) {
        if (n < 8 || n % 2 != 0)
            throw std::invalid_argument("PeriodicGrid: point count must be even and >= 8");
        if (!(length > 0.0) || !std::isfinite(length))
            throw std::invalid_argument("PeriodicGrid: length must be positive");
        auto data = std::make_shared<Data>();
        data->n = n;
        data->length = length;
        const double h = length / static_cast<double>(n);
        data->nodes.resize(n);
        for (Index j = 0; j < n; ++j)
            data->nodes[j] = -0.5 * length + static_cast<double>(j) * h;

        // First-derivative matrix of the band-limited interpolant (even n).
        const double scale = 2.0 * std::numbers::pi / length;
        const double h2pi = 2.0 * std::numbers::pi / static_cast<double>(n);
        data->d1 = Matrix::Zero(n, n);
        for (Index j = 0; j < n; ++j) {
            for (Index k = 0; k < n; ++k) {
                if (j == k)
                    continue;
                const Index m = j - k;
                const double sign = (m % 2 == 0) ? 1.0 : -1.0;
                data->d1(j, k) = scale * 0.5 * sign / std::tan(0.5 * static_cast<double>(m) * h2pi);
            }
        }
        data->d2 = data->d1 * data->d1;
        data_ = std::move(data);
    }

    Index size() const { return data_->n; }
    double length() const { return data_->length; }
    double spacing() const { return data_->length / static_cast<double>(data_->n); }
    /// Trapezoidal quadrature weight, identical for every node.
    double weight() const { return spacing(); }
    const Vector& nodes() const { return data_->nodes; }
    double node(Index j) const { return data_->nodes[j]; }

    /// Differentiation matrix of order 1 or 2 (order 0 is not stored).
    const Matrix& diff_matrix(int order) const {
        if (order == 1)
            return data_->d1;
        if (order == 2)
            return data_->d2;
        throw std::invalid_argument("PeriodicGrid: derivative order must be 1 or 2");
    }

    /// Maps x into the fundamental period [-L/2, L/2).
    double wrap(double x) const {
        const double len = data_->length;
        double r = std::fmod(x + 0.5 * len, len);
        if (r < 0.0)
            r += len;
        if (r >= len)
            r -= len;
        return r - 0.5 * len;
    }

    /**
     * Cardinal weights phi_j(x) of the trigonometric interpolant, so that
     * p(x) = sum_j phi_j(x) f_j. Uses the periodic sinc form
     * sin(n theta / 2) cot(theta / 2) / n with theta = 2 pi (x - x_j) / L.
     */
    Vector interpolation_weights(double x) const {
        const Index n = data_->n;
        Vector w(n);
        const double len = data_->length;
        const double xw = wrap(x);
        const double s = (xw + 0.5 * len) / spacing();
        const double nearest = std::round(s);
        if (std::abs(s - nearest) < 1e-13) {
            w.setZero();
            w[static_cast<Index>(nearest) % n] = 1.0;
            return w;
        }
        const double nd = static_cast<double>(n);
        for (Index j = 0; j < n; ++j) {
            const double theta = 2.0 * std::numbers::pi * (xw - data_->nodes[j]) / len;
            w[j] = std::sin(0.5 * nd * theta) / (nd * std::tan(0.5 * theta));
        }
        return w;
    }

    friend bool operator==(const PeriodicGrid& a, const PeriodicGrid& b) {
        return a.data_ == b.data_ || (a.size() == b.size() && a.length() == b.length());
    }

private:
    struct Data {
        Index n = 0;
        double length = 0.0;
        Vector nodes;
        Matrix d1;
        Matrix d2;
    };
    std::shared_ptr<const Data> data_;
};

inline PeriodicGrid make_grid(Index n, double length) { return PeriodicGrid(n, length); }

/// Dense Fourier differentiation on one periodic grid.
class SpectralDiff {
public:
    SpectralDiff(PeriodicGrid grid, int order) : grid_(std::move(grid)), order_(order) {
        if (order != 1 && order != 2)
            throw std::invalid_argument("SpectralDiff: order must be 1 or 2");
    }

    const PeriodicGrid& grid() const { return grid_; }
    int order() const { return order_; }
    const Matrix& matrix() const { return grid_.diff_matrix(order_); }

    Vector apply(std::span<const double> values) const {
        if (static_cast<Index>(values.size()) != grid_.size())
            throw std::invalid_argument("SpectralDiff::apply: length mismatch");
        Eigen::Map<const Vector> v(values.data(), grid_.size());
        return matrix() * v;
    }

private:
    PeriodicGrid grid_;
    int order_;
};

inline Vector diff_apply(const SpectralDiff& d, std::span<const double> values) { return d.apply(values); }

/// Value of the trigonometric interpolant of `values` at `point` (wrapped into the period).
inline double trig_eval(const PeriodicGrid& grid, std::span<const double> values, double point) {
    if (static_cast<Index>(values.size()) != grid.size())
        throw std::invalid_argument("trig_eval: length mismatch");
    Eigen::Map<const Vector> v(values.data(), grid.size());
    return grid.interpolation_weights(point).dot(v);
}

/// Product of all quadrature weights, i.e. the volume element of the tensor grid.
inline double cell_volume(std::span<const PeriodicGrid> grids) {
    double w = 1.0;
    for (const auto& g : grids)
        w *= g.weight();
    return w;
}

} // namespace coordflow
