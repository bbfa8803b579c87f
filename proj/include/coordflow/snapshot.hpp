#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "coordflow/tensor_train.hpp"

namespace coordflow {

// Binary snapshot record, all fields little-endian:
//   char[8]      magic "CFSNAP1\0"
//   int64        kind (0 = tensor train, 1 = full grid)
//   int64        d
//   int64[d+1]   ranks (all 1 for a full grid)
//   int64[d]     n_i
//   float64[d]   L_i
//   float64      t
//   float64[d*d] Gamma, row-major
//   float64[...] payload: TT cores in order, each row-major (r_{i-1}, n_i, r_i);
//                or the full grid, row-major with dimension 0 slowest
// A file may hold several records back to back.

enum class SnapshotKind : std::int64_t { TensorTrain = 0, FullGrid = 1 };

struct TensorSnapshot {
    TensorTrain tensor;
    double time = 0.0;
    Matrix gamma;
};

struct GridSnapshot {
    std::vector<PeriodicGrid> grids;
    std::vector<double> values;
    double time = 0.0;
    Matrix gamma;
};

using Snapshot = std::variant<TensorSnapshot, GridSnapshot>;

namespace detail {

inline constexpr std::array<char, 8> snapshot_magic{'C', 'F', 'S', 'N', 'A', 'P', '1', '\0'};

template <typename T>
void write_le(std::ostream& os, T value) {
    static_assert(sizeof(T) == 8);
    std::uint64_t bits;
    std::memcpy(&bits, &value, 8);
    if constexpr (std::endian::native == std::endian::big)
        bits = __builtin_bswap64(bits);
    os.write(reinterpret_cast<const char*>(&bits), 8);
}

template <typename T>
T read_le(std::istream& is) {
    static_assert(sizeof(T) == 8);
    std::uint64_t bits = 0;
    if (!is.read(reinterpret_cast<char*>(&bits), 8))
        throw std::runtime_error("snapshot: truncated record");
    if constexpr (std::endian::native == std::endian::big)
        bits = __builtin_bswap64(bits);
    T value;
    std::memcpy(&value, &bits, 8);
    return value;
}

inline void write_header(std::ostream& os, SnapshotKind kind, const std::vector<PeriodicGrid>& grids,
                         const std::vector<Index>& ranks, double time, const Matrix& gamma) {
    const auto d = static_cast<std::int64_t>(grids.size());
    if (gamma.rows() != d || gamma.cols() != d)
        throw std::invalid_argument("snapshot: Gamma must be d x d");
    os.write(snapshot_magic.data(), 8);
    write_le<std::int64_t>(os, static_cast<std::int64_t>(kind));
    write_le<std::int64_t>(os, d);
    for (Index r : ranks)
        write_le<std::int64_t>(os, static_cast<std::int64_t>(r));
    for (const auto& g : grids)
        write_le<std::int64_t>(os, static_cast<std::int64_t>(g.size()));
    for (const auto& g : grids)
        write_le<double>(os, g.length());
    write_le<double>(os, time);
    for (Index i = 0; i < d; ++i)
        for (Index j = 0; j < d; ++j)
            write_le<double>(os, gamma(i, j));
}

} // namespace detail

inline void write_snapshot(std::ostream& os, const TensorTrain& v, double time, const Matrix& gamma) {
    detail::write_header(os, SnapshotKind::TensorTrain, v.grids(), v.ranks(), time, gamma);
    for (const auto& c : v.cores())
        for (double x : c.data())
            detail::write_le<double>(os, x);
}

inline void write_snapshot(std::ostream& os, const std::vector<PeriodicGrid>& grids,
                           std::span<const double> values, double time, const Matrix& gamma) {
    std::vector<Index> ranks(grids.size() + 1, 1);
    detail::write_header(os, SnapshotKind::FullGrid, grids, ranks, time, gamma);
    for (double x : values)
        detail::write_le<double>(os, x);
}

/// Reads one record; returns false at a clean end of stream.
inline bool read_snapshot(std::istream& is, Snapshot& out) {
    std::array<char, 8> magic{};
    is.read(magic.data(), 8);
    if (is.gcount() == 0 && is.eof())
        return false;
    if (is.gcount() != 8 || magic != detail::snapshot_magic)
        throw std::runtime_error("snapshot: bad magic");
    const auto kind = static_cast<SnapshotKind>(detail::read_le<std::int64_t>(is));
    const auto d = detail::read_le<std::int64_t>(is);
    if (d < 1 || d > 64)
        throw std::runtime_error("snapshot: implausible dimension");
    std::vector<Index> ranks(static_cast<std::size_t>(d + 1));
    for (auto& r : ranks)
        r = detail::read_le<std::int64_t>(is);
    std::vector<Index> n(static_cast<std::size_t>(d));
    for (auto& x : n)
        x = detail::read_le<std::int64_t>(is);
    std::vector<PeriodicGrid> grids;
    for (std::int64_t i = 0; i < d; ++i)
        grids.emplace_back(n[static_cast<std::size_t>(i)], detail::read_le<double>(is));
    const double time = detail::read_le<double>(is);
    Matrix gamma(d, d);
    for (Index i = 0; i < d; ++i)
        for (Index j = 0; j < d; ++j)
            gamma(i, j) = detail::read_le<double>(is);
    if (kind == SnapshotKind::TensorTrain) {
        std::vector<Core> cores;
        for (std::int64_t i = 0; i < d; ++i) {
            Core c(ranks[static_cast<std::size_t>(i)], n[static_cast<std::size_t>(i)],
                   ranks[static_cast<std::size_t>(i + 1)]);
            for (double& x : c.data())
                x = detail::read_le<double>(is);
            cores.push_back(std::move(c));
        }
        out = TensorSnapshot{TensorTrain(std::move(grids), std::move(cores)), time, gamma};
    } else if (kind == SnapshotKind::FullGrid) {
        Index total = 1;
        for (Index x : n)
            total *= x;
        std::vector<double> values(static_cast<std::size_t>(total));
        for (double& x : values)
            x = detail::read_le<double>(is);
        out = GridSnapshot{std::move(grids), std::move(values), time, gamma};
    } else {
        throw std::runtime_error("snapshot: unknown record kind");
    }
    return true;
}

inline std::vector<Snapshot> read_snapshots(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("snapshot: cannot open " + path);
    std::vector<Snapshot> out;
    Snapshot s;
    while (read_snapshot(in, s))
        out.push_back(std::move(s));
    return out;
}

} // namespace coordflow
