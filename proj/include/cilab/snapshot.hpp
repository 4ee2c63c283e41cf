#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

#include "field.hpp"

namespace cilab {

constexpr std::uint32_t snapshot_version = 1;

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = (v >> (8 * i)) & 0xff;
    os.write(reinterpret_cast<char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("snapshot truncated");
    return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
}

inline void put_f64(std::ostream& os, double x) {
    std::uint64_t u = std::bit_cast<std::uint64_t>(x);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = (u >> (8 * i)) & 0xff;
    os.write(reinterpret_cast<char*>(b), 8);
}

inline double get_f64(std::istream& is) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) throw std::runtime_error("snapshot truncated");
    std::uint64_t u = 0;
    for (int i = 0; i < 8; ++i) u |= std::uint64_t(b[i]) << (8 * i);
    return std::bit_cast<double>(u);
}

}  // namespace detail

// "EULR", version, n, components, then each component x1-fastest as LE f64
template <int C>
void write_snapshot(const std::string& path, const Field<C>& f) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path);
    os.write("EULR", 4);
    detail::put_u32(os, snapshot_version);
    detail::put_u32(os, std::uint32_t(f.grid.n));
    detail::put_u32(os, std::uint32_t(C));
    for (int c = 0; c < C; ++c)
        for (double x : f[c]) detail::put_f64(os, x);
}

template <int C>
Field<C> read_snapshot(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "EULR", 4) != 0) throw std::runtime_error("bad snapshot magic in " + path);
    if (detail::get_u32(is) != snapshot_version) throw std::runtime_error("unsupported snapshot version");
    int n = int(detail::get_u32(is));
    if (int(detail::get_u32(is)) != C) throw std::runtime_error("snapshot component count mismatch");
    Field<C> f{Grid(n)};
    for (int c = 0; c < C; ++c)
        for (auto& x : f[c]) x = detail::get_f64(is);
    return f;
}

}  // namespace cilab
