#pragma once

#include <iostream>
#include <optional>
#include <stdexcept>
#include <vector>

#include <Eigen/Eigenvalues>

#include "coordflow/operators.hpp"
#include "coordflow/tangent.hpp"
#include "coordflow/tensor_train.hpp"

namespace coordflow {

/// Which quadratic functional the linear flow generator minimizes.
enum class Functional {
    NormalMin,  ///< ||P_N (G v - (Sigma y) . grad v)||^2
    FullMin,    ///< ||G v - (Sigma y) . grad v||^2
};

/// Column-major position of Sigma(i, j) in vec(Sigma).
inline Index vec_index(Index i, Index j, Index d) { return i + d * j; }

/**
 * Normal equations A vec(Sigma) = b of the generator functional. A is the
 * Gram matrix of the fields c_ij = y_j dv/dy_i (projected onto the normal
 * space for NormalMin), so it is symmetric positive semidefinite.
 */
struct GeneratorSystem {
    Matrix a;
    Vector b;
    Functional functional = Functional::FullMin;
    Index inner_products = 0;  ///< number of distinct inner products evaluated
};

/// c_ij(y) = (dv/dy_i) y_j.
inline TensorTrain c_field(const TensorTrain& v, Index i, Index j) {
    if (i < 0 || j < 0 || i >= v.dims() || j >= v.dims())
        throw std::out_of_range("c_field: invalid index");
    return mode_coordinate_multiply(mode_derivative(v, i, 1), j);
}

/// All d^2 fields in vec order.
inline std::vector<TensorTrain> c_fields(const TensorTrain& v) {
    const Index d = v.dims();
    std::vector<TensorTrain> out(static_cast<std::size_t>(d * d));
    for (Index i = 0; i < d; ++i) {
        const TensorTrain di = mode_derivative(v, i, 1);
        for (Index j = 0; j < d; ++j)
            out[static_cast<std::size_t>(vec_index(i, j, d))] = mode_coordinate_multiply(di, j);
    }
    return out;
}

/**
 * Assembles A and b. `op_output` is G_y(v), already rounded. The frame is
 * required for NormalMin and ignored for FullMin. Symmetry is used, so
 * (d^4 + d^2)/2 + d^2 inner products are evaluated.
 */
inline GeneratorSystem assemble(const TensorTrain& v, const TensorTrain& op_output, const ProjectionFrame* frame,
                                Functional functional, double delta_sys = 1e-12) {
    const Index d = v.dims();
    const Index m = d * d;
    std::vector<TensorTrain> fields = c_fields(v);
    TensorTrain g = op_output;
    if (functional == Functional::NormalMin) {
        if (frame == nullptr)
            throw std::invalid_argument("assemble: NormalMin requires a projection frame");
        for (auto& f : fields)
            f = round(normal_component(*frame, f), delta_sys);
        g = round(normal_component(*frame, g), delta_sys);
    }
    GeneratorSystem sys;
    sys.functional = functional;
    sys.a = Matrix::Zero(m, m);
    sys.b = Vector::Zero(m);
    for (Index p = 0; p < m; ++p) {
        for (Index q = p; q < m; ++q) {
            const double val = inner(fields[static_cast<std::size_t>(p)], fields[static_cast<std::size_t>(q)]);
            sys.a(p, q) = val;
            sys.a(q, p) = val;
            ++sys.inner_products;
        }
        sys.b[p] = inner(g, fields[static_cast<std::size_t>(p)]);
        ++sys.inner_products;
    }
    return sys;
}

/// Raised when A vanishes but b does not.
class InconsistentSystemError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/**
 * Minimal-norm least-squares solution of A vec(Sigma) = b through the
 * symmetric eigendecomposition of A; eigenvalues below rcond * lambda_max
 * are discarded. Returns Sigma as a d x d matrix.
 */
inline Matrix solve_min_norm(const GeneratorSystem& sys, double rcond = 1e-10) {
    if (!(rcond > 0.0 && rcond < 1.0))
        throw std::invalid_argument("solve_min_norm: rcond must lie in (0, 1)");
    const Index m = sys.a.rows();
    const auto d = static_cast<Index>(std::llround(std::sqrt(static_cast<double>(m))));
    if (d * d != m || sys.b.size() != m)
        throw std::invalid_argument("solve_min_norm: A must be d^2 x d^2 and b of length d^2");
    Eigen::SelfAdjointEigenSolver<Matrix> eig(sys.a);
    const Vector& lambda = eig.eigenvalues();
    const double lmax = lambda.cwiseAbs().maxCoeff();
    Vector x = Vector::Zero(m);
    if (lmax == 0.0) {
        if (sys.b.norm() > rcond)
            throw InconsistentSystemError("solve_min_norm: A is zero but b is not");
    } else {
        const Vector qb = eig.eigenvectors().transpose() * sys.b;
        for (Index k = 0; k < m; ++k)
            if (lambda[k] > rcond * lmax)
                x += (qb[k] / lambda[k]) * eig.eigenvectors().col(k);
    }
    Matrix sigma(d, d);
    for (Index i = 0; i < d; ++i)
        for (Index j = 0; j < d; ++j)
            sigma(i, j) = x[vec_index(i, j, d)];
    return sigma;
}

/// Q = G v - sum_ij Sigma_ij c_ij as an unrounded tensor.
inline TensorTrain generator_residual(const TensorTrain& v, const TensorTrain& op_output, const Matrix& sigma) {
    const Index d = v.dims();
    std::vector<TensorTrain> parts{op_output};
    for (Index i = 0; i < d; ++i) {
        TensorTrain di;
        bool have = false;
        for (Index j = 0; j < d; ++j) {
            if (sigma(i, j) == 0.0)
                continue;
            if (!have) {
                di = mode_derivative(v, i, 1);
                have = true;
            }
            parts.push_back(scale(mode_coordinate_multiply(di, j), -sigma(i, j)));
        }
    }
    return sum(parts);
}

/// The functional evaluated directly from tensors, independent of A and b.
inline double generator_cost(const TensorTrain& v, const TensorTrain& op_output, const Matrix& sigma,
                             const ProjectionFrame* frame, Functional functional) {
    TensorTrain q = generator_residual(v, op_output, sigma);
    if (functional == Functional::NormalMin) {
        if (frame == nullptr)
            throw std::invalid_argument("generator_cost: NormalMin requires a projection frame");
        q = normal_component(*frame, q);
    }
    const double n = stable_norm(q);
    return n * n;
}

enum class Scheme { Euler, AB2 };

/// Linear coordinate flow state: Gamma(t), the generator used last, and the AB2 history.
struct FlowState {
    CoordinateMap map;
    Matrix sigma;
    double t = 0.0;
    std::optional<Matrix> previous_rate;  ///< Sigma_{k-1} Gamma_{k-1}

    static FlowState identity(Index d) {
        return {CoordinateMap::identity(d), Matrix::Zero(d, d), 0.0, std::nullopt};
    }

    bool ill_conditioned() const { return map.condition() > 1e8; }
};

/// One explicit step of dGamma/dt = Sigma Gamma. AB2 falls back to Euler without history.
inline FlowState gamma_step(const FlowState& state, const Matrix& sigma, double dt, Scheme scheme) {
    if (!(dt > 0.0))
        throw std::invalid_argument("gamma_step: dt must be positive");
    const Matrix& gamma = state.map.gamma();
    const Matrix rate = sigma * gamma;
    Matrix next;
    if (scheme == Scheme::AB2 && state.previous_rate)
        next = gamma + dt * (1.5 * rate - 0.5 * *state.previous_rate);
    else
        next = gamma + dt * rate;
    FlowState out{CoordinateMap(next), sigma, state.t + dt, rate};
    if (out.ill_conditioned())
        std::cerr << "coordflow: warning: Gamma condition number " << out.map.condition() << " at t = " << out.t
                  << '\n';
    return out;
}

} // namespace coordflow
