#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "coordflow/config.hpp"
#include "coordflow/integrator.hpp"
#include "coordflow/operators.hpp"
#include "coordflow/reference.hpp"
#include "coordflow/snapshot.hpp"

namespace coordflow {

/// Stream function profile theta(x) = cos(a x / L) / cos(a / 2) - cosh(a x / L) / cosh(a / 2).
struct StreamProfile {
    double length = 30.0;
    double alpha = 4.73;

    double value(double x) const {
        const double s = alpha * x / length;
        return std::cos(s) / std::cos(0.5 * alpha) - std::cosh(s) / std::cosh(0.5 * alpha);
    }
    double derivative(double x) const {
        const double s = alpha * x / length;
        return (alpha / length) * (-std::sin(s) / std::cos(0.5 * alpha) - std::sinh(s) / std::cosh(0.5 * alpha));
    }
};

/// f = (theta(x1) theta'(x2), -theta'(x1) theta(x2)).
inline SeparableDrift vortex_drift(const StreamProfile& p) {
    auto th = [p](double x) { return p.value(x); };
    auto dth = [p](double x) { return p.derivative(x); };
    SeparableDrift drift;
    drift.components.push_back({{1.0, {th, dth}}});
    drift.components.push_back({{-1.0, {dth, th}}});
    return drift;
}

/// D = sigma diag(exp(-x2^2), exp(-x3^2), exp(-x1^2)).
inline DiagonalDiffusion cyclic_gaussian_diffusion(double sigma) {
    auto g = [](double x) { return std::exp(-x * x); };
    return {sigma, {{1, g}, {2, g}, {0, g}}};
}

struct Problem {
    std::vector<PeriodicGrid> grids;
    OperatorSpec spec;
    GaussianDensity initial;
    std::optional<Matrix> linear_drift;

    SeparatedOperator cartesian_operator() const {
        return transform_refresh(spec, grids, CoordinateMap::identity(static_cast<Index>(grids.size())));
    }
};

inline Problem build_problem(const ExperimentConfig& c) {
    Problem p;
    for (Index i = 0; i < c.d; ++i)
        p.grids.push_back(make_grid(c.n[static_cast<std::size_t>(i)], c.length[static_cast<std::size_t>(i)]));
    p.initial = {c.ic_beta, c.ic_shift};
    p.spec.field_tolerance = c.delta_op;
    p.spec.max_field_rank = c.max_operator_rank;
    if (c.pde == PdeName::Liouville2d) {
        p.spec.kind = PdeKind::Liouville;
        p.spec.drift = vortex_drift({c.stream_length, c.stream_alpha});
        return p;
    }
    Matrix b(c.d, c.d);
    for (Index i = 0; i < c.d; ++i)
        for (Index j = 0; j < c.d; ++j)
            b(i, j) = c.drift_b[static_cast<std::size_t>(i * c.d + j)];
    p.linear_drift = b;
    p.spec.drift = LinearDrift{b};
    if (c.pde == PdeName::Liouville3d) {
        p.spec.kind = PdeKind::Liouville;
    } else {
        p.spec.kind = PdeKind::FokkerPlanck;
        p.spec.diffusion = cyclic_gaussian_diffusion(c.sigma);
    }
    return p;
}

/// Exclusive ownership of an output directory for the lifetime of the object.
class DirectoryLock {
public:
    explicit DirectoryLock(const std::filesystem::path& dir) : path_(dir / ".lock") {
        std::filesystem::create_directories(dir);
        std::FILE* f = std::fopen(path_.c_str(), "wx");
        if (!f)
            throw std::runtime_error("output directory is locked by another run: " + dir.string());
        std::fclose(f);
    }
    DirectoryLock(const DirectoryLock&) = delete;
    DirectoryLock& operator=(const DirectoryLock&) = delete;
    ~DirectoryLock() {
        std::error_code ec;
        std::filesystem::remove(path_, ec);
    }

private:
    std::filesystem::path path_;
};

namespace detail {

class CsvWriter {
public:
    explicit CsvWriter(const std::filesystem::path& path) : os_(path) {
        if (!os_)
            throw std::runtime_error("cannot open " + path.string());
    }
    CsvWriter& header(const std::vector<std::string>& cols) {
        for (std::size_t i = 0; i < cols.size(); ++i)
            os_ << (i ? "," : "") << cols[i];
        os_ << '\n';
        return *this;
    }
    CsvWriter& row(const std::vector<double>& vals) {
        for (std::size_t i = 0; i < vals.size(); ++i)
            os_ << (i ? "," : "") << fmt_real(vals[i]);
        os_ << '\n';
        return *this;
    }
    void flush() { os_.flush(); }

private:
    std::ofstream os_;
};

inline std::vector<std::string> matrix_columns(const char* prefix, Index d) {
    std::vector<std::string> cols{"t"};
    for (Index i = 0; i < d; ++i)
        for (Index j = 0; j < d; ++j)
            cols.push_back(std::string(prefix) + "_" + std::to_string(i + 1) + std::to_string(j + 1));
    return cols;
}

inline std::vector<double> matrix_row(double t, const Matrix& m) {
    std::vector<double> r{t};
    for (Index i = 0; i < m.rows(); ++i)
        for (Index j = 0; j < m.cols(); ++j)
            r.push_back(m(i, j));
    return r;
}

inline bool same_time(double a, double b) { return std::abs(a - b) <= 1e-9 * std::max(1.0, std::abs(b)); }

/// Nearest time level to t on the step grid.
inline Index step_of(double t, double dt) { return static_cast<Index>(std::llround(t / dt)); }

/**
 * Writes two slices at the given time: the tensor on the y grid and the ridge
 * function v(Gamma x) on the Cartesian grid. Columns: the two varying
 * coordinates followed by the value; other coordinates are held at the
 * configured slice values.
 */
inline void write_slices(const std::filesystem::path& dir, Index step, const TensorTrain& v, const Matrix& gamma,
                         const ExperimentConfig& c) {
    const Index a = c.slice_axes[0], b = c.slice_axes[1];
    const auto& ga = v.grid(a);
    const auto& gb = v.grid(b);
    const std::string suffix = std::to_string(step) + ".csv";
    CsvWriter ys(dir / ("slice_y_" + suffix));
    CsvWriter xs(dir / ("slice_x_" + suffix));
    ys.header({"y" + std::to_string(a + 1), "y" + std::to_string(b + 1), "v"});
    xs.header({"x" + std::to_string(a + 1), "x" + std::to_string(b + 1), "u"});
    std::vector<double> p(c.slice_values);
    std::vector<double> y(p.size());
    for (Index i = 0; i < ga.size(); ++i) {
        for (Index j = 0; j < gb.size(); ++j) {
            p[static_cast<std::size_t>(a)] = ga.node(i);
            p[static_cast<std::size_t>(b)] = gb.node(j);
            ys.row({ga.node(i), gb.node(j), eval_point(v, p)});
            for (Index r = 0; r < c.d; ++r) {
                double s = 0.0;
                for (Index k = 0; k < c.d; ++k)
                    s += gamma(r, k) * p[static_cast<std::size_t>(k)];
                y[static_cast<std::size_t>(r)] = s;
            }
            xs.row({ga.node(i), gb.node(j), eval_point(v, y)});
        }
    }
}

} // namespace detail

/// Benchmark records keyed by time, read from a snapshot file written by run_benchmark.
class BenchmarkSeries {
public:
    BenchmarkSeries() = default;
    explicit BenchmarkSeries(const std::string& path) {
        for (auto& s : read_snapshots(path)) {
            if (auto* g = std::get_if<GridSnapshot>(&s))
                records_.push_back({std::move(g->grids), std::move(g->values), g->time});
            else
                throw std::runtime_error("benchmark file holds a tensor-train record: " + path);
        }
    }
    const FullGridSolution* at(double t) const {
        for (const auto& r : records_)
            if (detail::same_time(r.time, t))
                return &r;
        return nullptr;
    }
    bool empty() const { return records_.empty(); }

private:
    std::vector<FullGridSolution> records_;
};

struct RunOptions {
    std::optional<std::string> output_dir;
    std::optional<std::string> benchmark;
    std::optional<std::uint64_t> seed;
};

struct ExperimentOutcome {
    RunResult result;
    std::vector<std::pair<double, ErrorNorms>> errors;
};

/**
 * Runs one experiment and writes steps.csv, gamma.csv, sigma.csv, error.csv,
 * snapshots.bin, final.bin and slice CSVs into the output directory. Errors
 * are computed against the analytic solution for liouville3d and against the
 * benchmark file otherwise (error.csv holds only the header when neither is
 * available). On an integration failure the last good state is written to
 * last_good.bin and the exception propagates.
 */
inline ExperimentOutcome run_experiment(ExperimentConfig cfg, const RunOptions& opts = {}) {
    namespace fs = std::filesystem;
    using namespace detail;
    if (opts.output_dir)
        cfg.output_dir = *opts.output_dir;
    if (opts.seed)
        cfg.seed = *opts.seed;
    const fs::path dir(cfg.output_dir);
    DirectoryLock lock(dir);
    {
        std::ofstream(dir / "config.txt") << to_text(cfg);
    }

    const Problem prob = build_problem(cfg);
    const Index d = cfg.d;
    BenchmarkSeries bench;
    if (opts.benchmark)
        bench = BenchmarkSeries(*opts.benchmark);
    ErrorOptions eopt;
    eopt.seed = cfg.seed;

    CsvWriter steps(dir / "steps.csv");
    {
        std::vector<std::string> cols{"t"};
        for (Index i = 1; i < d; ++i)
            cols.push_back("r_" + std::to_string(i));
        for (const char* s : {"rank_1norm", "normal_norm", "mass", "cost_value"})
            cols.emplace_back(s);
        steps.header(cols);
    }
    CsvWriter gamma_csv(dir / "gamma.csv");
    gamma_csv.header(matrix_columns("gamma", d));
    CsvWriter sigma_csv(dir / "sigma.csv");
    sigma_csv.header(matrix_columns("sigma", d));
    CsvWriter error_csv(dir / "error.csv");
    error_csv.header({"t", "linf", "l2"});
    std::ofstream snaps(dir / "snapshots.bin", std::ios::binary);

    std::vector<Index> slice_steps;
    for (double t : cfg.slice_times)
        slice_steps.push_back(step_of(t, cfg.dt));

    std::vector<std::pair<double, ErrorNorms>> errors;
    std::optional<TensorTrain> last_v;
    Matrix last_gamma = Matrix::Identity(d, d);
    double last_t = 0.0;
    auto sink = [&](const StepRecord& rec, const TensorTrain& v, const FlowState& flow) {
        std::vector<double> row{rec.t};
        for (Index i = 1; i < d; ++i)
            row.push_back(static_cast<double>(rec.ranks[static_cast<std::size_t>(i)]));
        row.insert(row.end(), {static_cast<double>(rec.rank_1norm), rec.normal_norm, rec.mass, rec.cost_value});
        steps.row(row);
        gamma_csv.row(matrix_row(rec.t, rec.gamma));
        sigma_csv.row(matrix_row(rec.t, rec.sigma));
        if (rec.step % cfg.error_cadence == 0 || rec.step == cfg.step_config().step_count()) {
            write_snapshot(snaps, v, rec.t, rec.gamma);
            snaps.flush();
            std::optional<FullGridSolution> exact;
            const FullGridSolution* ref = nullptr;
            if (cfg.pde == PdeName::Liouville3d) {
                exact = ridge_solution(prob.initial, *prob.linear_drift, rec.t, prob.grids);
                ref = &*exact;
            } else {
                ref = bench.at(rec.t);
            }
            if (ref) {
                const ErrorNorms e = linf_error(v, flow.map.gamma(), *ref, eopt);
                error_csv.row({rec.t, e.linf, e.l2});
                error_csv.flush();
                errors.emplace_back(rec.t, e);
            }
            steps.flush();
            gamma_csv.flush();
        }
        if (std::find(slice_steps.begin(), slice_steps.end(), rec.step) != slice_steps.end())
            write_slices(dir, rec.step, v, rec.gamma, cfg);
        last_v = v;
        last_gamma = rec.gamma;
        last_t = rec.t;
    };

    std::optional<RunResult> result;
    try {
        result = run(cfg.step_config(), prob.initial.tensor(prob.grids),
                     [&](const CoordinateMap& m) { return transform_refresh(prob.spec, prob.grids, m); }, sink);
    } catch (...) {
        steps.flush();
        if (last_v) {
            std::ofstream lg(dir / "last_good.bin", std::ios::binary);
            write_snapshot(lg, *last_v, last_t, last_gamma);
        }
        throw;
    }
    std::ofstream fin(dir / "final.bin", std::ios::binary);
    write_snapshot(fin, result->v, result->records.back().t, result->flow.map.gamma());
    return {std::move(*result), std::move(errors)};
}

/**
 * Full-grid benchmark of the configured problem in Cartesian coordinates with
 * step bench.dt. Records are written at every multiple of error_cadence * dt.
 */
inline FullGridSolution run_benchmark(const ExperimentConfig& cfg, const std::string& path) {
    const Problem prob = build_problem(cfg);
    const double every = static_cast<double>(cfg.error_cadence) * cfg.dt;
    const double ratio = every / cfg.bench_dt;
    if (std::abs(ratio - std::round(ratio)) > 1e-9 * ratio)
        throw ConfigError("bench.dt", "error_cadence * dt must be a multiple of bench.dt");
    const Index stride = static_cast<Index>(std::llround(ratio));
    const Index total = StepConfig{cfg.bench_dt, cfg.final_time}.step_count();
    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw std::runtime_error("cannot open " + path);
    const Matrix eye = Matrix::Identity(cfg.d, cfg.d);
    auto cb = [&](Index step, double t, const std::vector<double>& values) {
        if (step % stride == 0 || step == total) {
            write_snapshot(os, prob.grids, values, t, eye);
            os.flush();
        }
    };
    return solve_full(prob.cartesian_operator(), sample_full(prob.grids, prob.initial), cfg.bench_dt,
                      cfg.final_time, cfg.scheme, cb);
}

/// Recomputes error.csv for a finished run directory from its snapshots.bin.
inline std::vector<std::pair<double, ErrorNorms>> compare_run(const std::string& run_dir,
                                                              const std::string& bench_path,
                                                              std::uint64_t seed = 0) {
    namespace fs = std::filesystem;
    const BenchmarkSeries bench(bench_path);
    ErrorOptions eopt;
    eopt.seed = seed;
    std::vector<std::pair<double, ErrorNorms>> out;
    detail::CsvWriter csv(fs::path(run_dir) / "error.csv");
    csv.header({"t", "linf", "l2"});
    for (const auto& s : read_snapshots((fs::path(run_dir) / "snapshots.bin").string())) {
        const auto* tt = std::get_if<TensorSnapshot>(&s);
        if (!tt)
            continue;
        const FullGridSolution* ref = bench.at(tt->time);
        if (!ref)
            continue;
        const ErrorNorms e = linf_error(tt->tensor, tt->gamma, *ref, eopt);
        csv.row({tt->time, e.linf, e.l2});
        out.emplace_back(tt->time, e);
    }
    return out;
}

} // namespace coordflow
