#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "coordflow/flowgen.hpp"
#include "coordflow/integrator.hpp"

namespace coordflow {

enum class PdeName { Liouville2d, Liouville3d, FokkerPlanck3d };

/// Experiment description. Matrices are stored row-major.
struct ExperimentConfig {
    std::string name;
    PdeName pde = PdeName::Liouville3d;
    Index d = 3;
    std::vector<Index> n;
    std::vector<double> length;
    double dt = 0.0;
    double final_time = 0.0;
    double delta = 0.0;
    double delta_op = 1e-10;
    double delta_sys = 1e-12;
    double rcond = 1e-10;
    Index max_operator_rank = 25;
    Scheme scheme = Scheme::AB2;
    Coordinates coordinates = Coordinates::Fixed;
    Functional functional = Functional::FullMin;
    RankControl rank_control = RankControl::StepTruncation;
    double epsilon_monitor = 0.0;
    Index refresh_every = 1;
    Index generator_every = 1;
    std::vector<double> ic_beta;
    std::vector<double> ic_shift;
    std::vector<double> drift_b;
    double stream_length = 0.0;
    double stream_alpha = 0.0;
    double sigma = 0.0;
    std::string output_dir;
    Index error_cadence = 100;
    std::uint64_t seed = 0;
    std::vector<Index> slice_axes{0, 1};
    std::vector<double> slice_values;
    std::vector<double> slice_times;
    double bench_dt = 0.0;

    bool operator==(const ExperimentConfig&) const = default;

    StepConfig step_config() const {
        StepConfig s;
        s.dt = dt;
        s.final_time = final_time;
        s.delta = delta;
        s.scheme = scheme;
        s.coordinates = coordinates;
        s.functional = functional;
        s.rank_control = rank_control;
        s.epsilon_monitor = epsilon_monitor;
        s.refresh_every = refresh_every;
        s.generator_every = generator_every;
        s.rcond = rcond;
        s.delta_sys = delta_sys;
        return s;
    }
};

/// Raised for malformed configuration; the message names the offending key.
class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string key, const std::string& what)
        : std::runtime_error("config key '" + key + "': " + what), key_(std::move(key)) {}
    const std::string& key() const { return key_; }

private:
    std::string key_;
};

namespace detail {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

/// Accepts plain floating point literals and simple fractions such as 1/4.
inline double parse_real(const std::string& key, const std::string& text) {
    const std::string t = trim(text);
    const auto slash = t.find('/');
    auto one = [&](const std::string& s) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(s, &used);
        } catch (const std::exception&) {
            throw ConfigError(key, "expected a number, got '" + t + "'");
        }
        if (used != s.size())
            throw ConfigError(key, "expected a number, got '" + t + "'");
        return v;
    };
    if (slash == std::string::npos)
        return one(t);
    const double den = one(trim(t.substr(slash + 1)));
    if (den == 0.0)
        throw ConfigError(key, "division by zero");
    return one(trim(t.substr(0, slash))) / den;
}

inline Index parse_integer(const std::string& key, const std::string& text) {
    const std::string t = trim(text);
    std::size_t used = 0;
    long long v = 0;
    try {
        v = std::stoll(t, &used);
    } catch (const std::exception&) {
        throw ConfigError(key, "expected an integer, got '" + t + "'");
    }
    if (used != t.size())
        throw ConfigError(key, "expected an integer, got '" + t + "'");
    return static_cast<Index>(v);
}

inline std::vector<std::string> split_list(const std::string& key, const std::string& text) {
    const std::string t = trim(text);
    if (t.size() < 2 || t.front() != '[' || t.back() != ']')
        throw ConfigError(key, "expected a list such as [1, 2, 3]");
    std::vector<std::string> items;
    const std::string body = trim(std::string_view(t).substr(1, t.size() - 2));
    if (body.empty())
        return items;
    std::stringstream ss(body);
    std::string item;
    while (std::getline(ss, item, ','))
        items.push_back(trim(item));
    return items;
}

inline std::vector<double> parse_real_list(const std::string& key, const std::string& text) {
    std::vector<double> out;
    for (const auto& s : split_list(key, text))
        out.push_back(parse_real(key, s));
    return out;
}

inline std::vector<Index> parse_integer_list(const std::string& key, const std::string& text) {
    std::vector<Index> out;
    for (const auto& s : split_list(key, text))
        out.push_back(parse_integer(key, s));
    return out;
}

inline std::string fmt_real(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

template <typename T>
std::string fmt_list(const std::vector<T>& v) {
    std::string s = "[";
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i)
            s += ", ";
        if constexpr (std::is_floating_point_v<T>)
            s += fmt_real(v[i]);
        else
            s += std::to_string(v[i]);
    }
    return s + "]";
}

inline const char* pde_text(PdeName p) {
    switch (p) {
    case PdeName::Liouville2d: return "liouville2d";
    case PdeName::Liouville3d: return "liouville3d";
    case PdeName::FokkerPlanck3d: return "fokker_planck3d";
    }
    return "";
}

/// Scalar or per-dimension list; a scalar is broadcast to d entries.
template <typename T, typename Parse>
std::vector<T> parse_broadcast(const std::string& key, const std::string& text, Index d, Parse parse) {
    const std::string t = trim(text);
    if (!t.empty() && t.front() == '[') {
        std::vector<T> out;
        for (const auto& s : split_list(key, t))
            out.push_back(parse(key, s));
        if (static_cast<Index>(out.size()) != d)
            throw ConfigError(key, "expected " + std::to_string(d) + " entries");
        return out;
    }
    return std::vector<T>(static_cast<std::size_t>(d), parse(key, t));
}

} // namespace detail

/**
 * Parses "key = value" lines. A "[section]" header prefixes following keys
 * with "section.". '#' starts a comment. Lists use brackets; numbers may be
 * written as fractions (1/4).
 */
inline ExperimentConfig parse_config(std::string_view text) {
    using namespace detail;
    std::map<std::string, std::string> kv;
    std::string section;
    std::istringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos)
            line.erase(hash);
        const std::string t = trim(line);
        if (t.empty())
            continue;
        if (t.front() == '[' && t.back() == ']' && t.find('=') == std::string::npos) {
            section = trim(std::string_view(t).substr(1, t.size() - 2));
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno), "expected 'key = value'");
        std::string key = trim(std::string_view(t).substr(0, eq));
        if (!section.empty())
            key = section + "." + key;
        if (kv.count(key))
            throw ConfigError(key, "duplicate key");
        kv[key] = trim(std::string_view(t).substr(eq + 1));
    }

    static const std::vector<std::string> known = {
        "name", "pde", "d", "grid.n", "grid.L", "dt", "T", "delta", "delta_op", "delta_sys", "rcond",
        "max_operator_rank", "scheme", "coordinates", "functional", "rank_control", "epsilon_monitor",
        "refresh_every", "generator_every", "ic.beta", "ic.t", "drift.B", "drift.stream_L", "drift.alpha",
        "diffusion.sigma", "output_dir", "error_cadence", "seed", "slice.axes", "slice.values", "slice.times",
        "bench.dt"};
    for (const auto& [k, v] : kv)
        if (std::find(known.begin(), known.end(), k) == known.end())
            throw ConfigError(k, "unknown key");

    auto require = [&](const std::string& key) -> const std::string& {
        const auto it = kv.find(key);
        if (it == kv.end())
            throw ConfigError(key, "missing required key");
        return it->second;
    };
    auto get = [&](const std::string& key) -> std::optional<std::string> {
        const auto it = kv.find(key);
        if (it == kv.end())
            return std::nullopt;
        return it->second;
    };

    ExperimentConfig c;
    c.name = require("name");
    const std::string pde = require("pde");
    if (pde == "liouville2d")
        c.pde = PdeName::Liouville2d;
    else if (pde == "liouville3d")
        c.pde = PdeName::Liouville3d;
    else if (pde == "fokker_planck3d")
        c.pde = PdeName::FokkerPlanck3d;
    else
        throw ConfigError("pde", "expected liouville2d, liouville3d or fokker_planck3d");
    c.d = c.pde == PdeName::Liouville2d ? 2 : 3;
    if (auto v = get("d"); v && parse_integer("d", *v) != c.d)
        throw ConfigError("d", "inconsistent with pde");

    c.n = parse_broadcast<Index>("grid.n", require("grid.n"), c.d, parse_integer);
    c.length = parse_broadcast<double>("grid.L", require("grid.L"), c.d, parse_real);
    for (Index x : c.n)
        if (x < 8 || x % 2 != 0)
            throw ConfigError("grid.n", "grid sizes must be even and >= 8");
    for (double x : c.length)
        if (!(x > 0.0))
            throw ConfigError("grid.L", "must be positive");

    c.dt = parse_real("dt", require("dt"));
    if (!(c.dt > 0.0))
        throw ConfigError("dt", "must be positive");
    c.final_time = parse_real("T", require("T"));
    if (!(c.final_time >= 0.0))
        throw ConfigError("T", "must be nonnegative");
    c.delta = parse_real("delta", require("delta"));
    if (!(c.delta >= 0.0))
        throw ConfigError("delta", "must be nonnegative");
    try {
        (void)c.step_config().step_count();
    } catch (const std::invalid_argument&) {
        throw ConfigError("T", "T / dt must be an integer");
    }

    auto positive_real = [&](const std::string& key, double& field) {
        if (auto v = get(key)) {
            field = parse_real(key, *v);
            if (!(field > 0.0))
                throw ConfigError(key, "must be positive");
        }
    };
    auto positive_int = [&](const std::string& key, Index& field) {
        if (auto v = get(key)) {
            field = parse_integer(key, *v);
            if (field < 1)
                throw ConfigError(key, "must be >= 1");
        }
    };
    positive_real("delta_op", c.delta_op);
    positive_real("delta_sys", c.delta_sys);
    positive_real("rcond", c.rcond);
    positive_int("max_operator_rank", c.max_operator_rank);
    positive_int("refresh_every", c.refresh_every);
    positive_int("generator_every", c.generator_every);
    positive_int("error_cadence", c.error_cadence);
    if (auto v = get("epsilon_monitor")) {
        c.epsilon_monitor = parse_real("epsilon_monitor", *v);
        if (c.epsilon_monitor < 0.0)
            throw ConfigError("epsilon_monitor", "must be nonnegative");
    }

    if (auto v = get("scheme")) {
        if (*v == "euler")
            c.scheme = Scheme::Euler;
        else if (*v == "ab2")
            c.scheme = Scheme::AB2;
        else
            throw ConfigError("scheme", "expected euler or ab2");
    }
    if (auto v = get("coordinates")) {
        if (*v == "fixed")
            c.coordinates = Coordinates::Fixed;
        else if (*v == "adaptive")
            c.coordinates = Coordinates::Adaptive;
        else
            throw ConfigError("coordinates", "expected fixed or adaptive");
    }
    if (auto v = get("functional")) {
        if (*v == "normal_min")
            c.functional = Functional::NormalMin;
        else if (*v == "full_min")
            c.functional = Functional::FullMin;
        else
            throw ConfigError("functional", "expected normal_min or full_min");
    }
    if (auto v = get("rank_control")) {
        if (*v == "step_truncation")
            c.rank_control = RankControl::StepTruncation;
        else if (*v == "normal_trigger")
            c.rank_control = RankControl::NormalTrigger;
        else
            throw ConfigError("rank_control", "expected step_truncation or normal_trigger");
    }

    c.ic_beta = parse_real_list("ic.beta", require("ic.beta"));
    c.ic_shift = parse_real_list("ic.t", require("ic.t"));
    if (static_cast<Index>(c.ic_beta.size()) != c.d)
        throw ConfigError("ic.beta", "expected " + std::to_string(c.d) + " entries");
    if (static_cast<Index>(c.ic_shift.size()) != c.d)
        throw ConfigError("ic.t", "expected " + std::to_string(c.d) + " entries");
    for (double b : c.ic_beta)
        if (!(b > 0.0))
            throw ConfigError("ic.beta", "entries must be positive");

    if (c.pde == PdeName::Liouville2d) {
        if (get("drift.B"))
            throw ConfigError("drift.B", "not used by liouville2d");
        c.stream_alpha = parse_real("drift.alpha", require("drift.alpha"));
        c.stream_length = c.length.front();
        positive_real("drift.stream_L", c.stream_length);
    } else {
        for (const char* k : {"drift.alpha", "drift.stream_L"})
            if (get(k))
                throw ConfigError(k, "only used by liouville2d");
        c.drift_b = parse_real_list("drift.B", require("drift.B"));
        if (static_cast<Index>(c.drift_b.size()) != c.d * c.d)
            throw ConfigError("drift.B", "expected " + std::to_string(c.d * c.d) + " entries (row-major)");
    }
    if (c.pde == PdeName::FokkerPlanck3d) {
        c.sigma = parse_real("diffusion.sigma", require("diffusion.sigma"));
        if (c.sigma < 0.0)
            throw ConfigError("diffusion.sigma", "must be nonnegative");
    } else if (get("diffusion.sigma")) {
        throw ConfigError("diffusion.sigma", "only used by fokker_planck3d");
    }

    c.output_dir = get("output_dir").value_or("out/" + c.name);
    if (auto v = get("seed")) {
        const Index s = parse_integer("seed", *v);
        if (s < 0)
            throw ConfigError("seed", "must be nonnegative");
        c.seed = static_cast<std::uint64_t>(s);
    }
    if (auto v = get("slice.axes")) {
        c.slice_axes = parse_integer_list("slice.axes", *v);
        if (c.slice_axes.size() != 2 || c.slice_axes[0] == c.slice_axes[1] || c.slice_axes[0] < 0 ||
            c.slice_axes[1] < 0 || c.slice_axes[0] >= c.d || c.slice_axes[1] >= c.d)
            throw ConfigError("slice.axes", "expected two distinct dimension indices");
    }
    c.slice_values.assign(static_cast<std::size_t>(c.d), 0.0);
    if (auto v = get("slice.values")) {
        c.slice_values = parse_real_list("slice.values", *v);
        if (static_cast<Index>(c.slice_values.size()) != c.d)
            throw ConfigError("slice.values", "expected " + std::to_string(c.d) + " entries");
    }
    c.slice_times = {0.0, c.final_time};
    if (auto v = get("slice.times")) {
        c.slice_times = parse_real_list("slice.times", *v);
        for (double t : c.slice_times)
            if (t < 0.0 || t > c.final_time)
                throw ConfigError("slice.times", "times must lie in [0, T]");
    }
    c.bench_dt = c.dt;
    positive_real("bench.dt", c.bench_dt);
    return c;
}

/// Canonical text form; parse_config(to_text(c)) == c.
inline std::string to_text(const ExperimentConfig& c) {
    using namespace detail;
    std::ostringstream os;
    os << "name = " << c.name << "\n";
    os << "pde = " << pde_text(c.pde) << "\n";
    os << "d = " << c.d << "\n";
    os << "grid.n = " << fmt_list(c.n) << "\n";
    os << "grid.L = " << fmt_list(c.length) << "\n";
    os << "dt = " << fmt_real(c.dt) << "\n";
    os << "T = " << fmt_real(c.final_time) << "\n";
    os << "delta = " << fmt_real(c.delta) << "\n";
    os << "delta_op = " << fmt_real(c.delta_op) << "\n";
    os << "delta_sys = " << fmt_real(c.delta_sys) << "\n";
    os << "rcond = " << fmt_real(c.rcond) << "\n";
    os << "max_operator_rank = " << c.max_operator_rank << "\n";
    os << "scheme = " << (c.scheme == Scheme::Euler ? "euler" : "ab2") << "\n";
    os << "coordinates = " << (c.coordinates == Coordinates::Fixed ? "fixed" : "adaptive") << "\n";
    os << "functional = " << (c.functional == Functional::FullMin ? "full_min" : "normal_min") << "\n";
    os << "rank_control = "
       << (c.rank_control == RankControl::StepTruncation ? "step_truncation" : "normal_trigger") << "\n";
    os << "epsilon_monitor = " << fmt_real(c.epsilon_monitor) << "\n";
    os << "refresh_every = " << c.refresh_every << "\n";
    os << "generator_every = " << c.generator_every << "\n";
    os << "ic.beta = " << fmt_list(c.ic_beta) << "\n";
    os << "ic.t = " << fmt_list(c.ic_shift) << "\n";
    if (c.pde == PdeName::Liouville2d) {
        os << "drift.alpha = " << fmt_real(c.stream_alpha) << "\n";
        os << "drift.stream_L = " << fmt_real(c.stream_length) << "\n";
    } else {
        os << "drift.B = " << fmt_list(c.drift_b) << "\n";
    }
    if (c.pde == PdeName::FokkerPlanck3d)
        os << "diffusion.sigma = " << fmt_real(c.sigma) << "\n";
    os << "output_dir = " << c.output_dir << "\n";
    os << "error_cadence = " << c.error_cadence << "\n";
    os << "seed = " << c.seed << "\n";
    os << "slice.axes = " << fmt_list(c.slice_axes) << "\n";
    os << "slice.values = " << fmt_list(c.slice_values) << "\n";
    os << "slice.times = " << fmt_list(c.slice_times) << "\n";
    os << "bench.dt = " << fmt_real(c.bench_dt) << "\n";
    return os.str();
}

} // namespace coordflow
