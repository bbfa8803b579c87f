#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "coordflow/linalg.hpp"
#include "coordflow/tensor_train.hpp"

namespace coordflow {

/// Raised when a projection frame is requested at a rank-deficient point.
class DegenerateFrameError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/**
 * Left- and right-orthogonal factorizations of a manifold point v_r, used to
 * project onto the tangent space of the fixed-rank TT manifold at v_r.
 *
 * Both sweeps use SVDs with the sign convention "largest-magnitude entry of
 * each singular vector is nonnegative", so the frame is deterministic.
 */
class ProjectionFrame {
public:
    explicit ProjectionFrame(const TensorTrain& v, double degeneracy_tol = 1e-13) : reference_(v) {
        const Index d = v.dims();
        TensorTrain r = right_orthogonalize(v);
        auto cores = r.cores();
        const auto first = cores.front().data();
        const double nrm = Eigen::Map<const Vector>(first.data(), static_cast<Index>(first.size())).norm();
        if (nrm == 0.0)
            throw DegenerateFrameError("ProjectionFrame: zero tensor has no tangent space");
        const auto ranks = v.ranks();
        min_singular_value_ = nrm;

        for (Index i = 0; i + 1 < d; ++i) {
            Core& c = cores[static_cast<std::size_t>(i)];
            TruncatedSvd svd = truncated_svd(c.left_unfolding(), -1.0);
            check_bond(svd.s, ranks[static_cast<std::size_t>(i + 1)], nrm, degeneracy_tol, i + 1);
            fix_signs(svd);
            c = Core::from_left_unfolding(svd.u, c.rank_left(), c.size());
            Core& next = cores[static_cast<std::size_t>(i + 1)];
            const RowMatrix carry = svd.s.asDiagonal() * svd.vt;
            const RowMatrix nr = carry * next.right_unfolding();
            next = Core::from_right_unfolding(nr, next.size(), next.rank_right());
        }
        left_ = TensorTrain(v.grids(), cores, Orthogonality::Left);

        for (Index i = d - 1; i > 0; --i) {
            Core& c = cores[static_cast<std::size_t>(i)];
            TruncatedSvd svd = truncated_svd(c.right_unfolding().transpose(), -1.0);
            fix_signs(svd);
            c = Core::from_right_unfolding(svd.u.transpose(), c.size(), c.rank_right());
            Core& prev = cores[static_cast<std::size_t>(i - 1)];
            const RowMatrix carry = svd.vt.transpose() * svd.s.asDiagonal();
            const RowMatrix pl = prev.left_unfolding() * carry;
            prev = Core::from_left_unfolding(pl, prev.rank_left(), prev.size());
        }
        right_ = TensorTrain(v.grids(), std::move(cores), Orthogonality::Right);
    }

    const TensorTrain& reference() const { return reference_; }
    /// Cores 0..d-2 left-orthogonal, last core carries the norm.
    const TensorTrain& left() const { return left_; }
    /// Cores 1..d-1 right-orthogonal, first core carries the norm.
    const TensorTrain& right() const { return right_; }
    std::vector<Index> ranks() const { return reference_.ranks(); }
    double min_singular_value() const { return min_singular_value_; }

private:
    void check_bond(const Vector& s, Index rank, double nrm, double tol, Index bond) {
        if (s.size() < rank || s[rank - 1] < tol * nrm)
            throw DegenerateFrameError("ProjectionFrame: rank-deficient bond " + std::to_string(bond));
        min_singular_value_ = std::min(min_singular_value_, s[rank - 1]);
    }

    TensorTrain reference_;
    TensorTrain left_;
    TensorTrain right_;
    double min_singular_value_ = 0.0;
};

/**
 * P_T(v_r) w: sum over cores k of U_{<k} dC_k V_{>k}, where dC_k is the local
 * projection of w, made gauge-orthogonal to U_k for k < d-1. Output ranks are
 * at most 2 r.
 */
inline TensorTrain tangent_project(const ProjectionFrame& frame, const TensorTrain& w) {
    const TensorTrain& u = frame.left();
    const TensorTrain& v = frame.right();
    if (w.dims() != u.dims() || !w.same_grids(u))
        throw std::invalid_argument("tangent_project: grid mismatch");
    const Index d = w.dims();

    // left[b]: contraction of cores < b of U with w, shape r_b x rw_b.
    std::vector<RowMatrix> left(static_cast<std::size_t>(d + 1));
    left[0] = RowMatrix::Ones(1, 1);
    for (Index b = 0; b + 1 < d; ++b) {
        const Core& cu = u.core(b);
        const Core& cw = w.core(b);
        const RowMatrix g = left[static_cast<std::size_t>(b)] * cw.right_unfolding();
        const Eigen::Map<const RowMatrix> gl(g.data(), cu.rank_left() * cu.size(), cw.rank_right());
        left[static_cast<std::size_t>(b + 1)] = cu.left_unfolding().transpose() * gl;
    }
    // right[b]: contraction of cores >= b of V with w, shape r_b x rw_b.
    std::vector<RowMatrix> right(static_cast<std::size_t>(d + 1));
    right[static_cast<std::size_t>(d)] = RowMatrix::Ones(1, 1);
    for (Index b = d - 1; b > 0; --b) {
        const Core& cv = v.core(b);
        const Core& cw = w.core(b);
        const RowMatrix h = cw.left_unfolding() * right[static_cast<std::size_t>(b + 1)].transpose();
        const Eigen::Map<const RowMatrix> hr(h.data(), cw.rank_left(), cw.size() * cv.rank_right());
        right[static_cast<std::size_t>(b)] = cv.right_unfolding() * hr.transpose();
    }

    std::vector<RowMatrix> delta(static_cast<std::size_t>(d));
    for (Index k = 0; k < d; ++k) {
        const Core& cw = w.core(k);
        const Index n = cw.size();
        const RowMatrix t = left[static_cast<std::size_t>(k)] * cw.right_unfolding();
        const Index rk = left[static_cast<std::size_t>(k)].rows();
        const Eigen::Map<const RowMatrix> tl(t.data(), rk * n, cw.rank_right());
        RowMatrix wk = tl * right[static_cast<std::size_t>(k + 1)].transpose();
        if (k + 1 < d) {
            const auto uk = u.core(k).left_unfolding();
            wk -= uk * (uk.transpose() * wk);
        }
        delta[static_cast<std::size_t>(k)] = std::move(wk);
    }

    if (d == 1)
        return TensorTrain(w.grids(), {Core::from_left_unfolding(delta[0], 1, w.core(0).size())});

    std::vector<Core> cores;
    for (Index k = 0; k < d; ++k) {
        const Index n = w.core(k).size();
        const auto& dk = delta[static_cast<std::size_t>(k)];
        if (k == 0) {
            const Core& uk = u.core(0);
            const Index r1 = uk.rank_right();
            Core c(1, n, 2 * r1);
            for (Index j = 0; j < n; ++j)
                for (Index b = 0; b < r1; ++b) {
                    c(0, j, b) = uk(0, j, b);
                    c(0, j, r1 + b) = dk(j, b);
                }
            cores.push_back(std::move(c));
        } else if (k == d - 1) {
            const Core& vk = v.core(k);
            const Index r0 = vk.rank_left();
            Core c(2 * r0, n, 1);
            for (Index a = 0; a < r0; ++a)
                for (Index j = 0; j < n; ++j) {
                    c(a, j, 0) = dk(a * n + j, 0);
                    c(r0 + a, j, 0) = vk(a, j, 0);
                }
            cores.push_back(std::move(c));
        } else {
            const Core& uk = u.core(k);
            const Core& vk = v.core(k);
            const Index r0 = uk.rank_left();
            const Index r1 = uk.rank_right();
            Core c(2 * r0, n, 2 * r1);
            for (Index a = 0; a < r0; ++a)
                for (Index j = 0; j < n; ++j)
                    for (Index b = 0; b < r1; ++b) {
                        c(a, j, b) = uk(a, j, b);
                        c(a, j, r1 + b) = dk(a * n + j, b);
                        c(r0 + a, j, r1 + b) = vk(a, j, b);
                    }
            cores.push_back(std::move(c));
        }
    }
    return TensorTrain(w.grids(), std::move(cores));
}

/// w - P_T w.
inline TensorTrain normal_component(const ProjectionFrame& frame, const TensorTrain& w) {
    return w - tangent_project(frame, w);
}

/// ||w - P_T w|| in the grid L2 norm.
inline double normal_norm(const ProjectionFrame& frame, const TensorTrain& w) {
    return stable_norm(normal_component(frame, w));
}

} // namespace coordflow
