#pragma once

#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "coordflow/grid.hpp"
#include "coordflow/linalg.hpp"

namespace coordflow {

/// Order-3 tensor-train core of shape (r_left, n, r_right), stored row-major.
class Core {
public:
    Core() = default;
    Core(Index r_left, Index n, Index r_right)
        : r_left_(r_left), n_(n), r_right_(r_right),
          data_(static_cast<std::size_t>(r_left * n * r_right), 0.0) {}

    Index rank_left() const { return r_left_; }
    Index size() const { return n_; }
    Index rank_right() const { return r_right_; }

    double& operator()(Index a, Index j, Index b) { return data_[index(a, j, b)]; }
    double operator()(Index a, Index j, Index b) const { return data_[index(a, j, b)]; }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }

    /// (r_left * n) x r_right unfolding; row index a * n + j.
    Eigen::Map<RowMatrix> left_unfolding() { return {data_.data(), r_left_ * n_, r_right_}; }
    Eigen::Map<const RowMatrix> left_unfolding() const { return {data_.data(), r_left_ * n_, r_right_}; }

    /// r_left x (n * r_right) unfolding; column index j * r_right + b.
    Eigen::Map<RowMatrix> right_unfolding() { return {data_.data(), r_left_, n_ * r_right_}; }
    Eigen::Map<const RowMatrix> right_unfolding() const { return {data_.data(), r_left_, n_ * r_right_}; }

    /// n x r_right block of all fibres that share the left index a.
    Eigen::Map<RowMatrix> block(Index a) { return {data_.data() + a * n_ * r_right_, n_, r_right_}; }
    Eigen::Map<const RowMatrix> block(Index a) const { return {data_.data() + a * n_ * r_right_, n_, r_right_}; }

    static Core from_left_unfolding(const Eigen::Ref<const RowMatrix>& m, Index r_left, Index n) {
        Core c(r_left, n, m.cols());
        c.left_unfolding() = m;
        return c;
    }

    static Core from_right_unfolding(const Eigen::Ref<const RowMatrix>& m, Index n, Index r_right) {
        Core c(m.rows(), n, r_right);
        c.right_unfolding() = m;
        return c;
    }

private:
    std::size_t index(Index a, Index j, Index b) const {
        return static_cast<std::size_t>((a * n_ + j) * r_right_ + b);
    }

    Index r_left_ = 0;
    Index n_ = 0;
    Index r_right_ = 0;
    std::vector<double> data_;
};

enum class Orthogonality { None, Left, Right };

/**
 * Discrete functional tensor train: nodal values of a d-variate function on
 * a tensor product of periodic grids, v(y_1, ..., y_d) = C_1(y_1) ... C_d(y_d).
 *
 * Values are immutable from the outside; every operation below returns a new
 * tensor. The zero tensor has all interior ranks equal to one and zero cores.
 */
class TensorTrain {
public:
    TensorTrain() = default;

    TensorTrain(std::vector<PeriodicGrid> grids, std::vector<Core> cores,
                Orthogonality ortho = Orthogonality::None)
        : grids_(std::move(grids)), cores_(std::move(cores)), ortho_(ortho) {
        if (grids_.empty() || grids_.size() != cores_.size())
            throw std::invalid_argument("TensorTrain: need one core per grid");
        for (std::size_t i = 0; i < cores_.size(); ++i) {
            if (cores_[i].size() != grids_[i].size())
                throw std::invalid_argument("TensorTrain: core " + std::to_string(i) + " does not match its grid");
            if (i > 0 && cores_[i - 1].rank_right() != cores_[i].rank_left())
                throw std::invalid_argument("TensorTrain: inconsistent ranks at bond " + std::to_string(i));
        }
        if (cores_.front().rank_left() != 1 || cores_.back().rank_right() != 1)
            throw std::invalid_argument("TensorTrain: boundary ranks must be 1");
    }

    static TensorTrain zeros(std::vector<PeriodicGrid> grids) {
        std::vector<Core> cores;
        for (const auto& g : grids)
            cores.emplace_back(1, g.size(), 1);
        return {std::move(grids), std::move(cores)};
    }

    static TensorTrain constant(std::vector<PeriodicGrid> grids, double value) {
        std::vector<Core> cores;
        for (std::size_t i = 0; i < grids.size(); ++i) {
            Core c(1, grids[i].size(), 1);
            for (Index j = 0; j < c.size(); ++j)
                c(0, j, 0) = (i == 0) ? value : 1.0;
            cores.push_back(std::move(c));
        }
        return {std::move(grids), std::move(cores)};
    }

    Index dims() const { return static_cast<Index>(cores_.size()); }
    const std::vector<PeriodicGrid>& grids() const { return grids_; }
    const PeriodicGrid& grid(Index i) const { return grids_[static_cast<std::size_t>(i)]; }
    const std::vector<Core>& cores() const { return cores_; }
    const Core& core(Index i) const { return cores_[static_cast<std::size_t>(i)]; }
    Orthogonality orthogonality() const { return ortho_; }

    /// (r_0, ..., r_d) with r_0 = r_d = 1.
    std::vector<Index> ranks() const {
        std::vector<Index> r;
        r.reserve(cores_.size() + 1);
        r.push_back(cores_.front().rank_left());
        for (const auto& c : cores_)
            r.push_back(c.rank_right());
        return r;
    }

    Index rank_1norm() const {
        const auto r = ranks();
        return std::accumulate(r.begin(), r.end(), Index{0});
    }

    Index max_rank() const {
        Index m = 1;
        for (const auto& c : cores_)
            m = std::max(m, c.rank_right());
        return m;
    }

    Index full_size() const {
        Index s = 1;
        for (const auto& g : grids_)
            s *= g.size();
        return s;
    }

    bool same_grids(const TensorTrain& other) const { return grids_ == other.grids_; }

private:
    std::vector<PeriodicGrid> grids_;
    std::vector<Core> cores_;
    Orthogonality ortho_ = Orthogonality::None;
};

/// Time and rank vector of a tensor, as reported per step.
struct RankProfile {
    double time = 0.0;
    std::vector<Index> ranks;
    Index rank_1norm = 0;
};

inline RankProfile rank_profile(const TensorTrain& v, double time) {
    return {time, v.ranks(), v.rank_1norm()};
}

namespace detail {

inline void require_same_grids(const TensorTrain& a, const TensorTrain& b, const char* what) {
    if (a.dims() != b.dims() || !a.same_grids(b))
        throw std::invalid_argument(std::string(what) + ": grid mismatch");
}

inline void require_mode(const TensorTrain& v, Index i, const char* what) {
    if (i < 0 || i >= v.dims())
        throw std::out_of_range(std::string(what) + ": invalid dimension index");
}

} // namespace detail

/**
 * Exact tensor train of sum_k w_k prod_i g_i^{(k)}(y_i), with interior ranks K.
 * `terms[k][i]` holds the node values of the k-th product in dimension i.
 */
inline TensorTrain from_separable(const std::vector<PeriodicGrid>& grids,
                                  const std::vector<std::vector<Vector>>& terms,
                                  std::span<const double> weights) {
    if (terms.size() != weights.size())
        throw std::invalid_argument("from_separable: one weight per term required");
    if (terms.empty())
        return TensorTrain::zeros(grids);
    const Index d = static_cast<Index>(grids.size());
    const Index rank = static_cast<Index>(terms.size());
    for (const auto& term : terms) {
        if (static_cast<Index>(term.size()) != d)
            throw std::invalid_argument("from_separable: term dimension mismatch");
        for (Index i = 0; i < d; ++i)
            if (term[static_cast<std::size_t>(i)].size() != grids[static_cast<std::size_t>(i)].size())
                throw std::invalid_argument("from_separable: factor length mismatch");
    }
    std::vector<Core> cores;
    for (Index i = 0; i < d; ++i) {
        const Index n = grids[static_cast<std::size_t>(i)].size();
        const Index rl = (i == 0) ? 1 : rank;
        const Index rr = (i == d - 1) ? 1 : rank;
        Core c(rl, n, rr);
        for (Index k = 0; k < rank; ++k) {
            const Vector& g = terms[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)];
            const double w = (i == 0) ? weights[static_cast<std::size_t>(k)] : 1.0;
            const Index a = (i == 0) ? 0 : k;
            const Index b = (i == d - 1) ? 0 : k;
            for (Index j = 0; j < n; ++j)
                c(a, j, b) += w * g[j];
        }
        cores.push_back(std::move(c));
    }
    return {grids, std::move(cores)};
}

/// Block-structured exact sum of several tensors on identical grids.
inline TensorTrain sum(std::span<const TensorTrain> terms) {
    if (terms.empty())
        throw std::invalid_argument("sum: no terms");
    const TensorTrain& first = terms.front();
    for (const auto& t : terms)
        detail::require_same_grids(first, t, "sum");
    if (terms.size() == 1)
        return first;
    const Index d = first.dims();
    std::vector<Core> cores;
    for (Index i = 0; i < d; ++i) {
        Index rl = 0, rr = 0;
        for (const auto& t : terms) {
            rl += (i == 0) ? 0 : t.core(i).rank_left();
            rr += (i == d - 1) ? 0 : t.core(i).rank_right();
        }
        if (i == 0)
            rl = 1;
        if (i == d - 1)
            rr = 1;
        const Index n = first.grid(i).size();
        Core c(rl, n, rr);
        Index off_l = 0, off_r = 0;
        for (const auto& t : terms) {
            const Core& src = t.core(i);
            const Index ol = (i == 0) ? 0 : off_l;
            const Index orr = (i == d - 1) ? 0 : off_r;
            for (Index a = 0; a < src.rank_left(); ++a)
                for (Index j = 0; j < n; ++j)
                    for (Index b = 0; b < src.rank_right(); ++b)
                        c(ol + a, j, orr + b) += src(a, j, b);
            off_l += src.rank_left();
            off_r += src.rank_right();
        }
        cores.push_back(std::move(c));
    }
    return {first.grids(), std::move(cores)};
}

inline TensorTrain add(const TensorTrain& a, const TensorTrain& b) {
    const TensorTrain pair[] = {a, b};
    return sum(pair);
}

inline TensorTrain scale(const TensorTrain& a, double c) {
    auto cores = a.cores();
    for (double& x : cores.front().data())
        x *= c;
    const auto ortho = (a.orthogonality() == Orthogonality::Right) ? Orthogonality::Right : Orthogonality::None;
    return {a.grids(), std::move(cores), ortho};
}

inline TensorTrain operator+(const TensorTrain& a, const TensorTrain& b) { return add(a, b); }
inline TensorTrain operator-(const TensorTrain& a, const TensorTrain& b) { return add(a, scale(b, -1.0)); }
inline TensorTrain operator*(double c, const TensorTrain& a) { return scale(a, c); }

/// Applies an n x n matrix to every mode-i fibre; ranks are unchanged.
inline TensorTrain mode_apply(const TensorTrain& v, Index i, const Matrix& m) {
    detail::require_mode(v, i, "mode_apply");
    auto cores = v.cores();
    Core& c = cores[static_cast<std::size_t>(i)];
    if (m.rows() != c.size() || m.cols() != c.size())
        throw std::invalid_argument("mode_apply: matrix size mismatch");
    for (Index a = 0; a < c.rank_left(); ++a) {
        RowMatrix tmp = m * c.block(a);
        c.block(a) = tmp;
    }
    return {v.grids(), std::move(cores)};
}

/// Multiplies every mode-i fibre pointwise by `coeff`.
inline TensorTrain mode_scale(const TensorTrain& v, Index i, const Vector& coeff) {
    detail::require_mode(v, i, "mode_scale");
    auto cores = v.cores();
    Core& c = cores[static_cast<std::size_t>(i)];
    if (coeff.size() != c.size())
        throw std::invalid_argument("mode_scale: coefficient length mismatch");
    for (Index a = 0; a < c.rank_left(); ++a)
        c.block(a).array().colwise() *= coeff.array();
    return {v.grids(), std::move(cores)};
}

inline TensorTrain mode_derivative(const TensorTrain& v, Index i, int order) {
    detail::require_mode(v, i, "mode_derivative");
    return mode_apply(v, i, v.grid(i).diff_matrix(order));
}

inline TensorTrain mode_coordinate_multiply(const TensorTrain& v, Index j) {
    detail::require_mode(v, j, "mode_coordinate_multiply");
    return mode_scale(v, j, v.grid(j).nodes());
}

/// QR sweep making cores 0..d-2 left-orthogonal; the norm ends up in the last core.
inline TensorTrain left_orthogonalize(const TensorTrain& v) {
    auto cores = v.cores();
    const Index d = v.dims();
    for (Index i = 0; i + 1 < d; ++i) {
        Core& c = cores[static_cast<std::size_t>(i)];
        const RowMatrix l = c.left_unfolding();
        Eigen::HouseholderQR<Matrix> qr(l);
        const Index k = std::min(l.rows(), l.cols());
        const RowMatrix q = qr.householderQ() * Matrix::Identity(l.rows(), k);
        const Matrix r = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
        const Index n = c.size();
        c = Core::from_left_unfolding(q, c.rank_left(), n);
        Core& next = cores[static_cast<std::size_t>(i + 1)];
        const RowMatrix nr = r * next.right_unfolding();
        next = Core::from_right_unfolding(nr, next.size(), next.rank_right());
    }
    return {v.grids(), std::move(cores), Orthogonality::Left};
}

/// QR sweep making cores 1..d-1 right-orthogonal; the norm ends up in the first core.
inline TensorTrain right_orthogonalize(const TensorTrain& v) {
    auto cores = v.cores();
    for (Index i = v.dims() - 1; i > 0; --i) {
        Core& c = cores[static_cast<std::size_t>(i)];
        const RowMatrix rt = c.right_unfolding().transpose();
        Eigen::HouseholderQR<Matrix> qr(rt);
        const Index k = std::min(rt.rows(), rt.cols());
        const Matrix q = qr.householderQ() * Matrix::Identity(rt.rows(), k);
        const Matrix r = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
        c = Core::from_right_unfolding(q.transpose(), c.size(), c.rank_right());
        Core& prev = cores[static_cast<std::size_t>(i - 1)];
        const RowMatrix pl = prev.left_unfolding() * r.transpose();
        prev = Core::from_left_unfolding(pl, prev.rank_left(), prev.size());
    }
    return {v.grids(), std::move(cores), Orthogonality::Right};
}

/// Plain Frobenius inner product of the nodal arrays (no quadrature weights).
inline double frobenius_inner(const TensorTrain& a, const TensorTrain& b) {
    detail::require_same_grids(a, b, "inner");
    RowMatrix e = RowMatrix::Ones(1, 1);
    for (Index i = 0; i < a.dims(); ++i) {
        const Core& ca = a.core(i);
        const Core& cb = b.core(i);
        const RowMatrix g = e * cb.right_unfolding();
        const Eigen::Map<const RowMatrix> gl(g.data(), ca.rank_left() * ca.size(), cb.rank_right());
        e = ca.left_unfolding().transpose() * gl;
    }
    return e(0, 0);
}

/// Quadrature-weighted L2 inner product on the grid.
inline double inner(const TensorTrain& a, const TensorTrain& b) {
    return cell_volume(a.grids()) * frobenius_inner(a, b);
}

inline double norm(const TensorTrain& v) { return std::sqrt(std::max(0.0, inner(v, v))); }

/// Norm computed from a right-orthogonalized copy; accurate for tensors that are differences.
inline double stable_norm(const TensorTrain& v) {
    const TensorTrain r = right_orthogonalize(v);
    const auto data = r.core(0).data();
    return std::sqrt(cell_volume(v.grids())) * Eigen::Map<const Vector>(data.data(), static_cast<Index>(data.size())).norm();
}

/// Quadrature approximation of the integral of v over the periodic box.
inline double integral(const TensorTrain& v) {
    RowMatrix row = RowMatrix::Ones(1, 1);
    for (const auto& c : v.cores()) {
        RowMatrix m = RowMatrix::Zero(c.rank_left(), c.rank_right());
        for (Index a = 0; a < c.rank_left(); ++a)
            m.row(a) = c.block(a).colwise().sum();
        row = row * m;
    }
    return cell_volume(v.grids()) * row(0, 0);
}

/**
 * Rounds v to relative accuracy delta in the grid L2 norm: a right-to-left
 * QR sweep followed by a left-to-right truncated SVD sweep with per-bond
 * tolerance delta * ||v|| / sqrt(d - 1). The result is left-orthogonal.
 * delta = 0 removes only directions below 1e-14 * ||v||.
 */
inline TensorTrain round(const TensorTrain& v, double delta,
                         Index max_rank = std::numeric_limits<Index>::max()) {
    if (delta < 0.0)
        throw std::invalid_argument("round: tolerance must be nonnegative");
    const Index d = v.dims();
    TensorTrain r = right_orthogonalize(v);
    auto cores = r.cores();
    const double nrm = Eigen::Map<const Vector>(cores.front().data().data(),
                                                static_cast<Index>(cores.front().data().size()))
                           .norm();
    if (nrm == 0.0 || !std::isfinite(nrm)) {
        if (!std::isfinite(nrm))
            throw std::runtime_error("round: non-finite tensor entries");
        return TensorTrain::zeros(v.grids());
    }
    if (d == 1)
        return {v.grids(), std::move(cores), Orthogonality::Left};
    const double eps = std::max(delta, 1e-14) * nrm / std::sqrt(static_cast<double>(d - 1));
    for (Index i = 0; i + 1 < d; ++i) {
        Core& c = cores[static_cast<std::size_t>(i)];
        TruncatedSvd svd = truncated_svd(c.left_unfolding(), eps, max_rank);
        fix_signs(svd);
        c = Core::from_left_unfolding(svd.u, c.rank_left(), c.size());
        Core& next = cores[static_cast<std::size_t>(i + 1)];
        const RowMatrix carry = svd.s.asDiagonal() * svd.vt;
        const RowMatrix nr = carry * next.right_unfolding();
        next = Core::from_right_unfolding(nr, next.size(), next.rank_right());
    }
    return {v.grids(), std::move(cores), Orthogonality::Left};
}

/// All nodal values, row-major with dimension 0 varying slowest.
inline std::vector<double> to_full(const TensorTrain& v) {
    RowMatrix acc = RowMatrix::Ones(1, 1);
    Index rows = 1;
    for (const auto& c : v.cores()) {
        const RowMatrix next = acc * c.right_unfolding();
        rows *= c.size();
        acc = Eigen::Map<const RowMatrix>(next.data(), rows, c.rank_right());
    }
    return {acc.data(), acc.data() + acc.size()};
}

/// TT-SVD of a full row-major array to relative accuracy delta (grid L2 norm).
inline TensorTrain from_full(const std::vector<PeriodicGrid>& grids, std::span<const double> values,
                             double delta, Index max_rank = std::numeric_limits<Index>::max()) {
    Index total = 1;
    for (const auto& g : grids)
        total *= g.size();
    if (static_cast<Index>(values.size()) != total)
        throw std::invalid_argument("from_full: value count does not match grids");
    const Index d = static_cast<Index>(grids.size());
    const double nrm = Eigen::Map<const Vector>(values.data(), total).norm();
    if (nrm == 0.0)
        return TensorTrain::zeros(grids);
    if (!std::isfinite(nrm))
        throw std::runtime_error("from_full: non-finite values");
    const double eps = std::max(delta, 1e-14) * nrm / std::sqrt(static_cast<double>(std::max<Index>(1, d - 1)));
    std::vector<Core> cores;
    RowMatrix rest = Eigen::Map<const RowMatrix>(values.data(), 1, total);
    Index r_left = 1;
    for (Index i = 0; i + 1 < d; ++i) {
        const Index n = grids[static_cast<std::size_t>(i)].size();
        const Index cols = rest.size() / (r_left * n);
        const Eigen::Map<const RowMatrix> m(rest.data(), r_left * n, cols);
        TruncatedSvd svd = truncated_svd(m, eps, max_rank);
        fix_signs(svd);
        cores.push_back(Core::from_left_unfolding(svd.u, r_left, n));
        rest = svd.s.asDiagonal() * svd.vt;
        r_left = svd.rank();
    }
    const Index n_last = grids.back().size();
    cores.push_back(Core::from_right_unfolding(Eigen::Map<const RowMatrix>(rest.data(), r_left, n_last), n_last, 1));
    return {grids, std::move(cores), Orthogonality::Left};
}

/// Evaluates the trigonometric interpolant of v at an arbitrary point (wrapped per dimension).
inline double eval_point(const TensorTrain& v, std::span<const double> y) {
    if (static_cast<Index>(y.size()) != v.dims())
        throw std::invalid_argument("eval_point: point dimension mismatch");
    RowMatrix row = RowMatrix::Ones(1, 1);
    for (Index i = 0; i < v.dims(); ++i) {
        const Core& c = v.core(i);
        const Vector w = v.grid(i).interpolation_weights(y[static_cast<std::size_t>(i)]);
        RowMatrix m(c.rank_left(), c.rank_right());
        for (Index a = 0; a < c.rank_left(); ++a)
            m.row(a) = w.transpose() * c.block(a);
        row = row * m;
    }
    return row(0, 0);
}

/// Value at a grid node given by per-dimension indices.
inline double node_value(const TensorTrain& v, std::span<const Index> idx) {
    RowMatrix row = RowMatrix::Ones(1, 1);
    for (Index i = 0; i < v.dims(); ++i) {
        const Core& c = v.core(i);
        RowMatrix m(c.rank_left(), c.rank_right());
        for (Index a = 0; a < c.rank_left(); ++a)
            m.row(a) = c.block(a).row(idx[static_cast<std::size_t>(i)]);
        row = row * m;
    }
    return row(0, 0);
}

inline bool all_finite(const TensorTrain& v) {
    for (const auto& c : v.cores())
        for (double x : c.data())
            if (!std::isfinite(x))
                return false;
    return true;
}

} // namespace coordflow
