#pragma once

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "coordflow/grid.hpp"

namespace coordflow {

/// Thin SVD factors U * diag(S) * Vt truncated to `rank` columns.
struct TruncatedSvd {
    Matrix u;
    Vector s;
    Matrix vt;
    Index rank() const { return s.size(); }
};

/// Smallest rank whose discarded tail satisfies sqrt(sum_{i>=rank} s_i^2) <= eps, clamped to [1, max_rank].
inline Index truncation_rank(const Vector& s, double eps, Index max_rank) {
    const Index m = s.size();
    Index rank = m;
    double tail = 0.0;
    while (rank > 1) {
        const double next = tail + s[rank - 1] * s[rank - 1];
        if (std::sqrt(next) > eps)
            break;
        tail = next;
        --rank;
    }
    return std::clamp<Index>(rank, 1, std::max<Index>(1, max_rank));
}

/**
 * Thin SVD of a dense matrix. Eigen 3.4.0's divide-and-conquer SVD can return
 * NaN singular vectors for some finite inputs; those fall back to Jacobi.
 */
inline void thin_svd(const Matrix& m, Matrix& u, Vector& s, Matrix& v) {
    Eigen::BDCSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (svd.singularValues().allFinite() && svd.matrixU().allFinite() && svd.matrixV().allFinite()) {
        u = svd.matrixU();
        s = svd.singularValues();
        v = svd.matrixV();
        return;
    }
    Eigen::JacobiSVD<Matrix> jac(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    u = jac.matrixU();
    s = jac.singularValues();
    v = jac.matrixV();
}

/**
 * SVD of a dense matrix truncated to absolute Frobenius tolerance `eps`.
 * Strongly rectangular inputs are reduced by a Householder QR first.
 */
template <typename Derived>
TruncatedSvd truncated_svd(const Eigen::MatrixBase<Derived>& m, double eps,
                           Index max_rank = std::numeric_limits<Index>::max()) {
    const Index rows = m.rows();
    const Index cols = m.cols();
    Matrix u, vt, w;
    Vector s;
    if (cols > 2 * rows) {
        Eigen::HouseholderQR<Matrix> qr(m.transpose());
        const Matrix r = qr.matrixQR().topRows(rows).template triangularView<Eigen::Upper>();
        thin_svd(r.transpose(), u, s, w);
        const Matrix q = qr.householderQ() * Matrix::Identity(cols, rows);
        vt = (q * w).transpose();
    } else if (rows > 2 * cols) {
        Eigen::HouseholderQR<Matrix> qr(m);
        const Matrix r = qr.matrixQR().topRows(cols).template triangularView<Eigen::Upper>();
        thin_svd(r, w, s, vt);
        const Matrix q = qr.householderQ() * Matrix::Identity(rows, cols);
        u = q * w;
        vt.transposeInPlace();
    } else {
        thin_svd(m, u, s, w);
        vt = w.transpose();
    }
    Index rank = truncation_rank(s, eps, max_rank);
    // A nonnegative tolerance also drops singular values at roundoff level.
    if (eps >= 0.0 && s.size() > 0) {
        const double floor = s[0] * std::numeric_limits<double>::epsilon() * static_cast<double>(std::max(rows, cols));
        while (rank > 1 && s[rank - 1] <= floor)
            --rank;
    }
    TruncatedSvd out;
    out.u = u.leftCols(rank);
    out.s = s.head(rank);
    out.vt = vt.topRows(rank);
    return out;
}

/// Flips singular pairs so that the largest-magnitude entry of each left vector is nonnegative.
inline void fix_signs(TruncatedSvd& svd) {
    for (Index c = 0; c < svd.u.cols(); ++c) {
        Index arg = 0;
        svd.u.col(c).cwiseAbs().maxCoeff(&arg);
        if (svd.u(arg, c) < 0.0) {
            svd.u.col(c) *= -1.0;
            svd.vt.row(c) *= -1.0;
        }
    }
}

} // namespace coordflow
