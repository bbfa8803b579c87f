#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <stdexcept>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/LU>

#include "coordflow/grid.hpp"
#include "coordflow/tensor_train.hpp"

namespace coordflow {

// ---------------------------------------------------------------------------
// Coordinate maps

/// The linear coordinate flow y = Gamma x together with Gamma^{-1} and det(Gamma).
class CoordinateMap {
public:
    explicit CoordinateMap(Matrix gamma) : gamma_(std::move(gamma)) {
        if (gamma_.rows() != gamma_.cols() || gamma_.rows() == 0)
            throw std::invalid_argument("CoordinateMap: Gamma must be square");
        if (!gamma_.allFinite())
            throw std::runtime_error("CoordinateMap: Gamma has non-finite entries");
        Eigen::JacobiSVD<Matrix> svd(gamma_);
        const auto& s = svd.singularValues();
        if (s(s.size() - 1) <= 1e-14 * s(0))
            throw std::runtime_error("CoordinateMap: Gamma is numerically singular");
        condition_ = s(0) / s(s.size() - 1);
        Eigen::PartialPivLU<Matrix> lu(gamma_);
        inverse_ = lu.inverse();
        det_ = lu.determinant();
    }

    static CoordinateMap identity(Index d) { return CoordinateMap(Matrix::Identity(d, d)); }

    Index dims() const { return gamma_.rows(); }
    const Matrix& gamma() const { return gamma_; }
    const Matrix& inverse() const { return inverse_; }
    double det() const { return det_; }
    double condition() const { return condition_; }
    bool is_identity() const { return gamma_ == Matrix::Identity(dims(), dims()); }

private:
    Matrix gamma_;
    Matrix inverse_;
    double det_ = 1.0;
    double condition_ = 1.0;
};

// ---------------------------------------------------------------------------
// Separated operators

enum class ApplyOrder { MultiplyThenDifferentiate, DifferentiateThenMultiply };

/// One-dimensional factor: a diagonal coefficient composed with a spectral derivative.
struct OperatorFactor {
    Vector coeff;           ///< node values; all ones for "no coefficient"
    int deriv_order = 0;    ///< 0, 1 or 2
    ApplyOrder order = ApplyOrder::DifferentiateThenMultiply;

    static OperatorFactor identity(Index n) { return {Vector::Ones(n), 0, ApplyOrder::DifferentiateThenMultiply}; }

    bool has_coeff() const { return (coeff.array() != 1.0).any(); }
    bool is_identity() const { return deriv_order == 0 && !has_coeff(); }

    /// The n x n matrix this factor applies to one fibre.
    Matrix matrix(const PeriodicGrid& grid) const {
        if (deriv_order == 0)
            return coeff.asDiagonal();
        const Matrix& d = grid.diff_matrix(deriv_order);
        if (order == ApplyOrder::MultiplyThenDifferentiate)
            return d * coeff.asDiagonal();
        return coeff.asDiagonal() * d;
    }

    friend bool operator==(const OperatorFactor& a, const OperatorFactor& b) {
        return a.deriv_order == b.deriv_order && a.coeff == b.coeff &&
               (a.deriv_order == 0 || a.order == b.order);
    }
};

/**
 * One term of a separated operator: weight * (x)_i factor_i. A term may also
 * carry a non-separable coefficient sampled on the full grid; it is applied at
 * the multiplication stage, i.e. after the differentiate-then-multiply
 * derivatives and before the multiply-then-differentiate ones.
 */
struct OperatorTerm {
    double weight = 1.0;
    std::vector<OperatorFactor> factors;
    std::shared_ptr<const std::vector<double>> field;

    bool has_field() const { return static_cast<bool>(field); }

    friend bool operator==(const OperatorTerm& a, const OperatorTerm& b) {
        if (a.weight != b.weight || a.factors != b.factors || a.has_field() != b.has_field())
            return false;
        return !a.has_field() || *a.field == *b.field;
    }
};

/// Linear operator as a sum of per-dimension factor products.
class SeparatedOperator {
public:
    explicit SeparatedOperator(std::vector<PeriodicGrid> grids) : grids_(std::move(grids)) {}

    Index dims() const { return static_cast<Index>(grids_.size()); }
    const std::vector<PeriodicGrid>& grids() const { return grids_; }
    const std::vector<OperatorTerm>& terms() const { return terms_; }
    Index size() const { return static_cast<Index>(terms_.size()); }

    /// Tolerance and rank bound used to compress products with sampled fields.
    double field_tolerance = 1e-10;
    Index max_field_rank = 25;

    /// A term whose factors are all identity except the ones given.
    OperatorTerm make_term(double weight) const {
        OperatorTerm t;
        t.weight = weight;
        for (const auto& g : grids_)
            t.factors.push_back(OperatorFactor::identity(g.size()));
        return t;
    }

    void add_term(OperatorTerm term) {
        if (static_cast<Index>(term.factors.size()) != dims())
            throw std::invalid_argument("SeparatedOperator: term needs one factor per dimension");
        for (Index i = 0; i < dims(); ++i) {
            const auto& f = term.factors[static_cast<std::size_t>(i)];
            if (f.coeff.size() != grids_[static_cast<std::size_t>(i)].size())
                throw std::invalid_argument("SeparatedOperator: coefficient length mismatch");
            if (f.deriv_order < 0 || f.deriv_order > 2)
                throw std::invalid_argument("SeparatedOperator: derivative order must be 0, 1 or 2");
        }
        if (term.has_field()) {
            Index total = 1;
            for (const auto& g : grids_)
                total *= g.size();
            if (static_cast<Index>(term.field->size()) != total)
                throw std::invalid_argument("SeparatedOperator: sampled field size mismatch");
        }
        terms_.push_back(std::move(term));
    }

private:
    std::vector<PeriodicGrid> grids_;
    std::vector<OperatorTerm> terms_;
};

// ---------------------------------------------------------------------------
// Full-grid helpers (row-major arrays, dimension 0 slowest)

inline Index full_size(std::span<const PeriodicGrid> grids) {
    Index s = 1;
    for (const auto& g : grids)
        s *= g.size();
    return s;
}

/// values <- (I x ... x M x ... x I) values, M acting on dimension i.
inline void full_mode_apply(std::vector<double>& values, std::span<const PeriodicGrid> grids, Index i,
                            const Matrix& m) {
    Index prefix = 1, suffix = 1;
    for (Index k = 0; k < static_cast<Index>(grids.size()); ++k) {
        if (k < i)
            prefix *= grids[static_cast<std::size_t>(k)].size();
        if (k > i)
            suffix *= grids[static_cast<std::size_t>(k)].size();
    }
    const Index n = grids[static_cast<std::size_t>(i)].size();
    RowMatrix tmp(n, suffix);
    for (Index p = 0; p < prefix; ++p) {
        Eigen::Map<RowMatrix> block(values.data() + p * n * suffix, n, suffix);
        tmp.noalias() = m * block;
        block = tmp;
    }
}

inline void full_mode_scale(std::vector<double>& values, std::span<const PeriodicGrid> grids, Index i,
                            const Vector& coeff) {
    Index prefix = 1, suffix = 1;
    for (Index k = 0; k < static_cast<Index>(grids.size()); ++k) {
        if (k < i)
            prefix *= grids[static_cast<std::size_t>(k)].size();
        if (k > i)
            suffix *= grids[static_cast<std::size_t>(k)].size();
    }
    const Index n = grids[static_cast<std::size_t>(i)].size();
    for (Index p = 0; p < prefix; ++p) {
        Eigen::Map<RowMatrix> block(values.data() + p * n * suffix, n, suffix);
        block.array().colwise() *= coeff.array();
    }
}

/// Calls fn(flat_index, y) for every node y of the tensor grid, in row-major order.
template <typename Fn>
void for_each_node(std::span<const PeriodicGrid> grids, Fn&& fn) {
    const Index d = static_cast<Index>(grids.size());
    std::vector<Index> idx(static_cast<std::size_t>(d), 0);
    std::vector<double> y(static_cast<std::size_t>(d));
    const Index total = full_size(grids);
    for (Index i = 0; i < d; ++i)
        y[static_cast<std::size_t>(i)] = grids[static_cast<std::size_t>(i)].node(0);
    for (Index flat = 0; flat < total; ++flat) {
        fn(flat, std::span<const double>(y));
        for (Index k = d - 1; k >= 0; --k) {
            auto& ik = idx[static_cast<std::size_t>(k)];
            if (++ik < grids[static_cast<std::size_t>(k)].size()) {
                y[static_cast<std::size_t>(k)] = grids[static_cast<std::size_t>(k)].node(ik);
                break;
            }
            ik = 0;
            y[static_cast<std::size_t>(k)] = grids[static_cast<std::size_t>(k)].node(0);
        }
    }
}

namespace detail {

/// Applies one term to a full array in three stages: derivatives, multiplication, derivatives.
inline std::vector<double> apply_term_full(const OperatorTerm& term, std::span<const PeriodicGrid> grids,
                                           std::vector<double> values) {
    const Index d = static_cast<Index>(grids.size());
    for (Index i = 0; i < d; ++i) {
        const auto& f = term.factors[static_cast<std::size_t>(i)];
        if (f.deriv_order > 0 && f.order == ApplyOrder::DifferentiateThenMultiply)
            full_mode_apply(values, grids, i, grids[static_cast<std::size_t>(i)].diff_matrix(f.deriv_order));
    }
    for (Index i = 0; i < d; ++i) {
        const auto& f = term.factors[static_cast<std::size_t>(i)];
        if (f.has_coeff())
            full_mode_scale(values, grids, i, f.coeff);
    }
    if (term.has_field()) {
        const auto& field = *term.field;
        for (std::size_t k = 0; k < values.size(); ++k)
            values[k] *= field[k];
    }
    for (Index i = 0; i < d; ++i) {
        const auto& f = term.factors[static_cast<std::size_t>(i)];
        if (f.deriv_order > 0 && f.order == ApplyOrder::MultiplyThenDifferentiate)
            full_mode_apply(values, grids, i, grids[static_cast<std::size_t>(i)].diff_matrix(f.deriv_order));
    }
    return values;
}

} // namespace detail

/// Dense application to a full-grid array (benchmark path and test oracle support).
inline std::vector<double> apply_full(const SeparatedOperator& op, std::span<const double> values) {
    if (static_cast<Index>(values.size()) != full_size(op.grids()))
        throw std::invalid_argument("apply_full: value count does not match grids");
    std::vector<double> out(values.size(), 0.0);
    const std::vector<double> input(values.begin(), values.end());
    for (const auto& term : op.terms()) {
        const auto r = detail::apply_term_full(term, op.grids(), input);
        for (std::size_t k = 0; k < out.size(); ++k)
            out[k] += term.weight * r[k];
    }
    return out;
}

/**
 * G v as an unrounded tensor train. Purely separable terms keep the ranks of
 * v; terms with a sampled field are accumulated on the full grid and
 * compressed once to the operator's field tolerance. Output ranks are at most
 * (number of separable terms) * r plus the rank of the compressed field part.
 */
inline TensorTrain apply(const SeparatedOperator& op, const TensorTrain& v) {
    if (op.dims() != v.dims() || op.grids() != v.grids())
        throw std::invalid_argument("apply: grid mismatch");
    std::vector<TensorTrain> parts;
    std::vector<double> field_acc;
    std::optional<std::vector<double>> full_v;
    for (const auto& term : op.terms()) {
        if (term.weight == 0.0)
            continue;
        if (!term.has_field()) {
            TensorTrain w = v;
            for (Index i = 0; i < v.dims(); ++i) {
                const auto& f = term.factors[static_cast<std::size_t>(i)];
                if (f.is_identity())
                    continue;
                if (f.deriv_order == 0)
                    w = mode_scale(w, i, f.coeff);
                else
                    w = mode_apply(w, i, f.matrix(v.grid(i)));
            }
            parts.push_back(scale(w, term.weight));
            continue;
        }
        // Pre-derivatives and separable coefficients stay in TT form before expanding.
        bool plain = true;
        TensorTrain w = v;
        for (Index i = 0; i < v.dims(); ++i) {
            const auto& f = term.factors[static_cast<std::size_t>(i)];
            if (f.deriv_order > 0 && f.order == ApplyOrder::DifferentiateThenMultiply) {
                w = mode_derivative(w, i, f.deriv_order);
                plain = false;
            }
            if (f.has_coeff()) {
                w = mode_scale(w, i, f.coeff);
                plain = false;
            }
        }
        std::vector<double> values;
        if (plain) {
            if (!full_v)
                full_v = to_full(v);
            values = *full_v;
        } else {
            values = to_full(w);
        }
        const auto& field = *term.field;
        for (std::size_t k = 0; k < values.size(); ++k)
            values[k] *= term.weight * field[k];
        for (Index i = 0; i < v.dims(); ++i) {
            const auto& f = term.factors[static_cast<std::size_t>(i)];
            if (f.deriv_order > 0 && f.order == ApplyOrder::MultiplyThenDifferentiate)
                full_mode_apply(values, v.grids(), i, v.grid(i).diff_matrix(f.deriv_order));
        }
        if (field_acc.empty())
            field_acc = std::move(values);
        else
            for (std::size_t k = 0; k < field_acc.size(); ++k)
                field_acc[k] += values[k];
    }
    if (!field_acc.empty())
        parts.push_back(from_full(v.grids(), field_acc, op.field_tolerance, op.max_field_rank));
    if (parts.empty())
        return TensorTrain::zeros(v.grids());
    return sum(parts);
}

// ---------------------------------------------------------------------------
// PDE descriptions

using ScalarFunction = std::function<double(double)>;

/// f(x) = B x.
struct LinearDrift {
    Matrix matrix;
};

/// f_k(x) = sum_p w_p prod_i factors_i(x_i), one list of products per component.
struct SeparableDrift {
    struct Product {
        double weight = 1.0;
        std::vector<ScalarFunction> factors;
    };
    std::vector<std::vector<Product>> components;

    double component(Index k, std::span<const double> x) const {
        double s = 0.0;
        for (const auto& p : components[static_cast<std::size_t>(k)]) {
            double prod = p.weight;
            for (std::size_t i = 0; i < p.factors.size(); ++i)
                prod *= p.factors[i](x[i]);
            s += prod;
        }
        return s;
    }
};

using Drift = std::variant<LinearDrift, SeparableDrift>;

/// Diagonal diffusion D_ii(x) = sigma * profile_i(x_{variable_i}).
struct DiagonalDiffusion {
    struct Entry {
        Index variable = 0;
        ScalarFunction profile;
    };
    double sigma = 0.0;
    std::vector<Entry> entries;
};

enum class PdeKind { Liouville, FokkerPlanck };

/// Everything needed to rebuild G_y for a new coordinate map.
struct OperatorSpec {
    PdeKind kind = PdeKind::Liouville;
    Drift drift;
    DiagonalDiffusion diffusion;
    double field_tolerance = 1e-10;
    Index max_field_rank = 25;
};

/// Gamma B Gamma^{-1}, the linear drift seen in y coordinates.
inline Matrix transformed_drift_matrix(const Matrix& b, const CoordinateMap& map) {
    return map.gamma() * b * map.inverse();
}

namespace detail {

inline void require_dims(std::span<const PeriodicGrid> grids, const CoordinateMap& map, const char* what) {
    if (map.dims() != static_cast<Index>(grids.size()))
        throw std::invalid_argument(std::string(what) + ": map and grid dimensions differ");
}

/// Samples fn(x) at x = wrap(Gamma^{-1} y) for every node y.
template <typename Fn>
std::vector<double> sample_pullback(std::span<const PeriodicGrid> grids, const CoordinateMap& map, Fn&& fn) {
    const Index d = static_cast<Index>(grids.size());
    std::vector<double> out(static_cast<std::size_t>(full_size(grids)));
    const Matrix& inv = map.inverse();
    std::vector<double> x(static_cast<std::size_t>(d));
    for_each_node(grids, [&](Index flat, std::span<const double> y) {
        for (Index i = 0; i < d; ++i) {
            double s = 0.0;
            for (Index j = 0; j < d; ++j)
                s += inv(i, j) * y[static_cast<std::size_t>(j)];
            x[static_cast<std::size_t>(i)] = grids[static_cast<std::size_t>(i)].wrap(s);
        }
        out[static_cast<std::size_t>(flat)] = fn(std::span<const double>(x));
    });
    return out;
}

inline bool all_zero(const std::vector<double>& v) {
    for (double x : v)
        if (x != 0.0)
            return false;
    return true;
}

/// Transformed components g_k(y) = sum_l Gamma_kl f_l(Gamma^{-1} y) sampled on the grid.
inline std::vector<std::vector<double>> sample_transformed_drift(const SeparableDrift& drift,
                                                                 std::span<const PeriodicGrid> grids,
                                                                 const CoordinateMap& map) {
    const Index d = static_cast<Index>(grids.size());
    std::vector<std::vector<double>> comps(static_cast<std::size_t>(d));
    for (Index l = 0; l < d; ++l)
        comps[static_cast<std::size_t>(l)] =
            sample_pullback(grids, map, [&](std::span<const double> x) { return drift.component(l, x); });
    std::vector<std::vector<double>> out(static_cast<std::size_t>(d),
                                         std::vector<double>(comps.front().size(), 0.0));
    for (Index k = 0; k < d; ++k)
        for (Index l = 0; l < d; ++l) {
            const double g = map.gamma()(k, l);
            if (g == 0.0)
                continue;
            auto& dst = out[static_cast<std::size_t>(k)];
            const auto& src = comps[static_cast<std::size_t>(l)];
            for (std::size_t p = 0; p < dst.size(); ++p)
                dst[p] += g * src[p];
        }
    return out;
}

inline void check_separable_drift(const SeparableDrift& drift, Index d) {
    if (static_cast<Index>(drift.components.size()) != d)
        throw std::invalid_argument("drift: one component per dimension required");
    for (const auto& comp : drift.components)
        for (const auto& p : comp)
            if (static_cast<Index>(p.factors.size()) != d)
                throw std::invalid_argument("drift: each product needs one factor per dimension");
}

inline Vector sample_nodes(const PeriodicGrid& g, const ScalarFunction& f) {
    Vector v(g.size());
    for (Index j = 0; j < g.size(); ++j)
        v[j] = f(g.node(j));
    return v;
}

/// Adds the drift terms. Advective form: sign * g . grad v; divergence form: sign * div(g v).
inline void add_drift_terms(SeparatedOperator& op, const Drift& drift, const CoordinateMap& map,
                            ApplyOrder order, double sign) {
    const auto& grids = op.grids();
    const Index d = op.dims();
    if (const auto* lin = std::get_if<LinearDrift>(&drift)) {
        if (lin->matrix.rows() != d || lin->matrix.cols() != d)
            throw std::invalid_argument("drift: B must be d x d");
        const Matrix m = transformed_drift_matrix(lin->matrix, map);
        const double cutoff = 1e-14 * m.cwiseAbs().maxCoeff();
        for (Index k = 0; k < d; ++k) {
            for (Index j = 0; j < d; ++j) {
                if (std::abs(m(k, j)) <= cutoff)
                    continue;
                OperatorTerm t = op.make_term(sign * m(k, j));
                auto& fk = t.factors[static_cast<std::size_t>(k)];
                fk.deriv_order = 1;
                fk.order = order;
                t.factors[static_cast<std::size_t>(j)].coeff = grids[static_cast<std::size_t>(j)].nodes();
                op.add_term(std::move(t));
            }
        }
        return;
    }
    const auto& sep = std::get<SeparableDrift>(drift);
    check_separable_drift(sep, d);
    if (map.is_identity()) {
        for (Index k = 0; k < d; ++k) {
            for (const auto& p : sep.components[static_cast<std::size_t>(k)]) {
                OperatorTerm t = op.make_term(sign * p.weight);
                for (Index i = 0; i < d; ++i)
                    t.factors[static_cast<std::size_t>(i)].coeff =
                        sample_nodes(grids[static_cast<std::size_t>(i)], p.factors[static_cast<std::size_t>(i)]);
                auto& fk = t.factors[static_cast<std::size_t>(k)];
                fk.deriv_order = 1;
                fk.order = order;
                op.add_term(std::move(t));
            }
        }
        return;
    }
    auto comps = sample_transformed_drift(sep, grids, map);
    for (Index k = 0; k < d; ++k) {
        auto& g = comps[static_cast<std::size_t>(k)];
        if (all_zero(g))
            continue;
        OperatorTerm t = op.make_term(sign);
        auto& fk = t.factors[static_cast<std::size_t>(k)];
        fk.deriv_order = 1;
        fk.order = order;
        t.field = std::make_shared<const std::vector<double>>(std::move(g));
        op.add_term(std::move(t));
    }
}

} // namespace detail

/// G_y v = (Gamma f(Gamma^{-1} y)) . grad_y v, the Liouville operator u_t = f . grad u in y coordinates.
inline SeparatedOperator build_liouville(const Drift& drift, const std::vector<PeriodicGrid>& grids,
                                         const CoordinateMap& map, double field_tolerance = 1e-10,
                                         Index max_field_rank = 25) {
    detail::require_dims(grids, map, "build_liouville");
    SeparatedOperator op(grids);
    op.field_tolerance = field_tolerance;
    op.max_field_rank = max_field_rank;
    detail::add_drift_terms(op, drift, map, ApplyOrder::DifferentiateThenMultiply, 1.0);
    return op;
}

/// -div_y(g v) with g(y) = Gamma f(Gamma^{-1} y): the transport part of the Fokker-Planck operator.
inline SeparatedOperator build_divergence_drift(const Drift& drift, const std::vector<PeriodicGrid>& grids,
                                                const CoordinateMap& map, double field_tolerance = 1e-10,
                                                Index max_field_rank = 25) {
    detail::require_dims(grids, map, "build_divergence_drift");
    SeparatedOperator op(grids);
    op.field_tolerance = field_tolerance;
    op.max_field_rank = max_field_rank;
    detail::add_drift_terms(op, drift, map, ApplyOrder::MultiplyThenDifferentiate, -1.0);
    return op;
}

/**
 * Fokker-Planck operator -div(f u) + sum_i d^2(D_ii u)/dx_i^2 written in
 * y = Gamma x. The diffusion part becomes sum_{k,l} d_k d_l (W_kl v) with
 * W_kl(y) = sum_i Gamma_ki Gamma_li D_ii(Gamma^{-1} y).
 */
inline SeparatedOperator build_fokker_planck(const Drift& drift, const DiagonalDiffusion& diffusion,
                                             const std::vector<PeriodicGrid>& grids, const CoordinateMap& map,
                                             double field_tolerance = 1e-10, Index max_field_rank = 25) {
    SeparatedOperator op = build_divergence_drift(drift, grids, map, field_tolerance, max_field_rank);
    const Index d = op.dims();
    if (diffusion.sigma == 0.0)
        return op;
    if (static_cast<Index>(diffusion.entries.size()) != d)
        throw std::invalid_argument("build_fokker_planck: only diagonal diffusion with one entry per dimension");
    for (const auto& e : diffusion.entries)
        if (e.variable < 0 || e.variable >= d)
            throw std::invalid_argument("build_fokker_planck: diffusion variable index out of range");

    if (map.is_identity()) {
        for (Index i = 0; i < d; ++i) {
            const auto& e = diffusion.entries[static_cast<std::size_t>(i)];
            OperatorTerm t = op.make_term(diffusion.sigma);
            t.factors[static_cast<std::size_t>(e.variable)].coeff =
                detail::sample_nodes(grids[static_cast<std::size_t>(e.variable)], e.profile);
            auto& fi = t.factors[static_cast<std::size_t>(i)];
            fi.deriv_order = 2;
            fi.order = ApplyOrder::MultiplyThenDifferentiate;
            op.add_term(std::move(t));
        }
        return op;
    }

    std::vector<std::vector<double>> entry_fields;
    for (const auto& e : diffusion.entries)
        entry_fields.push_back(detail::sample_pullback(grids, map, [&](std::span<const double> x) {
            return diffusion.sigma * e.profile(x[static_cast<std::size_t>(e.variable)]);
        }));
    const Matrix& g = map.gamma();
    for (Index k = 0; k < d; ++k) {
        for (Index l = k; l < d; ++l) {
            std::vector<double> w(entry_fields.front().size(), 0.0);
            for (Index i = 0; i < d; ++i) {
                const double c = g(k, i) * g(l, i);
                if (c == 0.0)
                    continue;
                const auto& src = entry_fields[static_cast<std::size_t>(i)];
                for (std::size_t p = 0; p < w.size(); ++p)
                    w[p] += c * src[p];
            }
            if (detail::all_zero(w))
                continue;
            OperatorTerm t = op.make_term(k == l ? 1.0 : 2.0);
            if (k == l) {
                t.factors[static_cast<std::size_t>(k)].deriv_order = 2;
                t.factors[static_cast<std::size_t>(k)].order = ApplyOrder::MultiplyThenDifferentiate;
            } else {
                for (Index m : {k, l}) {
                    t.factors[static_cast<std::size_t>(m)].deriv_order = 1;
                    t.factors[static_cast<std::size_t>(m)].order = ApplyOrder::MultiplyThenDifferentiate;
                }
            }
            t.field = std::make_shared<const std::vector<double>>(std::move(w));
            op.add_term(std::move(t));
        }
    }
    return op;
}

/// Rebuilds G_y for the current map: closed form where possible, sampled fields otherwise.
inline SeparatedOperator transform_refresh(const OperatorSpec& spec, const std::vector<PeriodicGrid>& grids,
                                           const CoordinateMap& map) {
    if (spec.kind == PdeKind::Liouville)
        return build_liouville(spec.drift, grids, map, spec.field_tolerance, spec.max_field_rank);
    return build_fokker_planck(spec.drift, spec.diffusion, grids, map, spec.field_tolerance, spec.max_field_rank);
}

} // namespace coordflow
