#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "coordflow/flowgen.hpp"
#include "coordflow/operators.hpp"
#include "coordflow/tangent.hpp"
#include "coordflow/tensor_train.hpp"

namespace coordflow {

enum class Coordinates { Fixed, Adaptive };

enum class RankControl {
    StepTruncation,  ///< round every step to relative tolerance delta
    NormalTrigger,   ///< keep ranks fixed while ||P_N Q|| stays below a threshold
};

struct StepConfig {
    double dt = 1e-3;
    double final_time = 1.0;
    double delta = 1e-5;
    Scheme scheme = Scheme::AB2;
    Coordinates coordinates = Coordinates::Fixed;
    Functional functional = Functional::FullMin;
    RankControl rank_control = RankControl::StepTruncation;
    /// Threshold for RankControl::NormalTrigger; <= 0 means delta * ||v|| / dt.
    double epsilon_monitor = 0.0;
    Index refresh_every = 1;    ///< operator rebuild cadence (steps)
    Index generator_every = 1;  ///< Sigma recomputation cadence (steps)
    double rcond = 1e-10;
    double delta_sys = 1e-12;
    bool monitor_normal = true;

    Index step_count() const {
        if (!(dt > 0.0) || !(final_time >= 0.0))
            throw std::invalid_argument("StepConfig: dt must be positive and T nonnegative");
        const double steps = final_time / dt;
        const double rounded = std::round(steps);
        if (std::abs(steps - rounded) > 1e-9 * std::max(1.0, steps))
            throw std::invalid_argument("StepConfig: T / dt must be an integer");
        return static_cast<Index>(rounded);
    }

    void validate() const {
        (void)step_count();
        if (delta < 0.0)
            throw std::invalid_argument("StepConfig: delta must be nonnegative");
        if (refresh_every < 1 || generator_every < 1)
            throw std::invalid_argument("StepConfig: cadences must be >= 1");
    }
};

/// Diagnostics emitted once per time level.
struct StepRecord {
    Index step = 0;
    double t = 0.0;
    std::vector<Index> ranks;
    Index rank_1norm = 0;
    double normal_norm = std::numeric_limits<double>::quiet_NaN();
    double mass = 0.0;
    double cost_value = 0.0;
    Matrix gamma;
    Matrix sigma;
};

/// Wraps any failure inside the time loop with the step at which it happened.
class IntegrationError : public std::runtime_error {
public:
    IntegrationError(Index step, const std::string& what)
        : std::runtime_error("step " + std::to_string(step) + ": " + what), step_(step) {}
    Index step() const { return step_; }

private:
    Index step_;
};

/// G_y(v) - (Sigma y) . grad_y v, rounded to delta_sys.
inline TensorTrain rhs(const TensorTrain& v, const SeparatedOperator& op, const Matrix& sigma,
                       double delta_sys = 1e-12) {
    if (sigma.rows() != v.dims() || sigma.cols() != v.dims())
        throw std::invalid_argument("rhs: Sigma must be d x d");
    const TensorTrain g = apply(op, v);
    if (sigma.isZero(0.0))
        return round(g, delta_sys);
    return round(generator_residual(v, round(g, delta_sys), sigma), delta_sys);
}

/**
 * Explicit step followed by truncation: the ranks of the result are whatever
 * rounding to `delta` leaves, which is the rank-adaptive mechanism.
 * `previous` enables AB2; without it the step is forward Euler.
 */
inline TensorTrain step_truncation(const TensorTrain& v, const TensorTrain& current, const TensorTrain* previous,
                                   double dt, double delta, Scheme scheme,
                                   Index max_rank = std::numeric_limits<Index>::max()) {
    TensorTrain next;
    if (scheme == Scheme::AB2 && previous != nullptr) {
        const TensorTrain parts[] = {v, scale(current, 1.5 * dt), scale(*previous, -0.5 * dt)};
        next = round(sum(parts), delta, max_rank);
    } else {
        next = round(add(v, scale(current, dt)), delta, max_rank);
    }
    if (!all_finite(next))
        throw std::runtime_error("step_truncation: non-finite values");
    return next;
}

using OperatorBuilder = std::function<SeparatedOperator(const CoordinateMap&)>;
using RecordSink = std::function<void(const StepRecord&, const TensorTrain&, const FlowState&)>;

struct RunResult {
    TensorTrain v;
    FlowState flow;
    std::vector<StepRecord> records;
};

/**
 * Time integration along a linear coordinate flow. Per step: refresh G_y for
 * the current Gamma, solve for Sigma (adaptive mode only), form
 * Q = G_y v - (Sigma y) . grad v, record diagnostics, then advance v by step
 * truncation and Gamma by the same multistep scheme. In fixed mode Sigma = 0
 * and Gamma = I throughout. Records are produced for t_0, ..., t_N.
 */
inline RunResult run(const StepConfig& cfg, const TensorTrain& ic, const OperatorBuilder& builder,
                     const RecordSink& sink = {}) {
    cfg.validate();
    const Index steps = cfg.step_count();
    const Index d = ic.dims();
    RunResult result{round(ic, cfg.delta), FlowState::identity(d), {}};
    TensorTrain& v = result.v;
    FlowState& flow = result.flow;

    std::optional<SeparatedOperator> op;
    std::optional<TensorTrain> previous_rhs;
    Matrix sigma = Matrix::Zero(d, d);

    for (Index k = 0; k <= steps; ++k) {
        try {
            if (!op || k % cfg.refresh_every == 0)
                op = builder(flow.map);
            const TensorTrain g = round(apply(*op, v), cfg.delta_sys);

            std::optional<ProjectionFrame> frame;
            const bool need_frame = cfg.monitor_normal || cfg.rank_control == RankControl::NormalTrigger ||
                                    (cfg.coordinates == Coordinates::Adaptive &&
                                     cfg.functional == Functional::NormalMin);
            if (need_frame) {
                try {
                    frame.emplace(v);
                } catch (const DegenerateFrameError&) {
                    if (cfg.coordinates == Coordinates::Adaptive && cfg.functional == Functional::NormalMin)
                        throw;
                }
            }

            if (cfg.coordinates == Coordinates::Adaptive && k % cfg.generator_every == 0) {
                const GeneratorSystem sys =
                    assemble(v, g, frame ? &*frame : nullptr, cfg.functional, cfg.delta_sys);
                sigma = solve_min_norm(sys, cfg.rcond);
            }

            const TensorTrain q = sigma.isZero(0.0) ? g : round(generator_residual(v, g, sigma), cfg.delta_sys);

            StepRecord rec;
            rec.step = k;
            rec.t = static_cast<double>(k) * cfg.dt;
            rec.ranks = v.ranks();
            rec.rank_1norm = v.rank_1norm();
            double qn = std::numeric_limits<double>::quiet_NaN();
            if (frame)
                qn = normal_norm(*frame, q);
            rec.normal_norm = qn;
            rec.mass = integral(v) / flow.map.det();
            if (cfg.functional == Functional::NormalMin) {
                rec.cost_value = qn * qn;
            } else {
                const double n = stable_norm(q);
                rec.cost_value = n * n;
            }
            rec.gamma = flow.map.gamma();
            rec.sigma = sigma;
            if (sink)
                sink(rec, v, flow);
            result.records.push_back(std::move(rec));

            if (k == steps)
                break;

            Index cap = std::numeric_limits<Index>::max();
            double delta = cfg.delta;
            if (cfg.rank_control == RankControl::NormalTrigger && frame) {
                const double eps = cfg.epsilon_monitor > 0.0 ? cfg.epsilon_monitor : cfg.delta * norm(v) / cfg.dt;
                if (qn < eps) {
                    cap = v.max_rank();
                    delta = 0.0;
                }
            }
            TensorTrain next = step_truncation(v, q, previous_rhs ? &*previous_rhs : nullptr, cfg.dt, delta,
                                               cfg.scheme, cap);
            previous_rhs = q;
            if (cfg.coordinates == Coordinates::Adaptive)
                flow = gamma_step(flow, sigma, cfg.dt, cfg.scheme);
            else
                flow.t += cfg.dt;
            v = std::move(next);
        } catch (const IntegrationError&) {
            throw;
        } catch (const std::exception& e) {
            throw IntegrationError(k, e.what());
        }
    }
    return result;
}

} // namespace coordflow
