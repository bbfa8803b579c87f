#pragma once

#include <random>
#include <vector>

#include <unsupported/Eigen/KroneckerProduct>

#include "coordflow/operators.hpp"
#include "coordflow/tensor_train.hpp"

namespace testing_support {

using namespace coordflow;

inline std::vector<PeriodicGrid> cube(Index d, Index n, double length = 2.0 * 3.141592653589793) {
    return std::vector<PeriodicGrid>(static_cast<std::size_t>(d), make_grid(n, length));
}

inline TensorTrain random_tt(const std::vector<PeriodicGrid>& grids, const std::vector<Index>& ranks,
                             std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    std::vector<Core> cores;
    for (std::size_t i = 0; i < grids.size(); ++i) {
        Core c(ranks[i], grids[i].size(), ranks[i + 1]);
        for (double& x : c.data())
            x = nd(rng);
        cores.push_back(std::move(c));
    }
    return TensorTrain(grids, std::move(cores));
}

inline Eigen::VectorXd dense(const TensorTrain& v) {
    const auto f = to_full(v);
    return Eigen::Map<const Eigen::VectorXd>(f.data(), static_cast<Index>(f.size()));
}

inline Matrix kron_chain(const std::vector<Matrix>& mats) {
    Matrix k = mats.front();
    for (std::size_t i = 1; i < mats.size(); ++i) {
        Matrix next = Eigen::kroneckerProduct(k, mats[i]).eval();
        k = std::move(next);
    }
    return k;
}

/// Dense matrix of a separated operator, assembled from Kronecker products.
inline Matrix dense_operator(const SeparatedOperator& op) {
    const auto& grids = op.grids();
    const Index total = full_size(grids);
    Matrix out = Matrix::Zero(total, total);
    for (const auto& term : op.terms()) {
        std::vector<Matrix> pre, post;
        Eigen::VectorXd diag = Eigen::VectorXd::Ones(1);
        for (std::size_t i = 0; i < grids.size(); ++i) {
            const auto& f = term.factors[i];
            const Index n = grids[i].size();
            Matrix dm = f.deriv_order > 0 ? grids[i].diff_matrix(f.deriv_order) : Matrix::Identity(n, n);
            const bool dtm = f.order == ApplyOrder::DifferentiateThenMultiply;
            pre.push_back(f.deriv_order > 0 && dtm ? dm : Matrix::Identity(n, n));
            post.push_back(f.deriv_order > 0 && !dtm ? dm : Matrix::Identity(n, n));
            Eigen::VectorXd c = f.has_coeff() ? Eigen::VectorXd(f.coeff) : Eigen::VectorXd::Ones(n);
            Eigen::VectorXd next = Eigen::kroneckerProduct(diag, c).eval();
            diag = std::move(next);
        }
        if (term.has_field())
            for (Index p = 0; p < total; ++p)
                diag[p] *= (*term.field)[static_cast<std::size_t>(p)];
        out += term.weight * kron_chain(post) * diag.asDiagonal() * kron_chain(pre);
    }
    return out;
}

} // namespace testing_support
