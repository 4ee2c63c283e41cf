#pragma once

#include <cmath>
#include <cstddef>
#include <cstdlib>
#include <numbers>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace cilab {

constexpr double two_pi = 2.0 * std::numbers::pi;

struct Grid {
    int n = 8;
    double dealias_fraction = 2.0 / 3.0;

    Grid() = default;
    explicit Grid(int n_, double frac = 2.0 / 3.0) : n(n_), dealias_fraction(frac) {
        if (n < 8 || (n & (n - 1)) != 0)
            throw std::invalid_argument("grid size must be a power of two >= 8, got " + std::to_string(n));
        if (!(frac > 0.0 && frac <= 1.0))
            throw std::invalid_argument("dealias fraction must lie in (0,1]");
    }

    double h() const { return two_pi / n; }
    std::size_t size() const { return std::size_t(n) * n * n; }
    std::size_t idx(int i1, int i2, int i3) const { return std::size_t(i1) + std::size_t(n) * (i2 + std::size_t(n) * i3); }
    double x(int i) const { return i * h(); }
    // largest retained |k_i| in dealiased products
    int kcut() const { return int(std::floor(dealias_fraction * n / 2.0)); }

    bool operator==(const Grid& o) const { return n == o.n && dealias_fraction == o.dealias_fraction; }
};

inline int thread_cap() {
    int hw = int(std::thread::hardware_concurrency());
    if (hw < 1) hw = 1;
    if (const char* s = std::getenv("CILAB_THREADS")) {
        int v = std::atoi(s);
        if (v >= 1) return std::min(v, hw);
    }
    return hw;
}

// Static block partition; results are independent of the thread count as long
// as fn(i) only writes to slot i.
template <class Fn>
void parallel_for(std::size_t count, Fn&& fn) {
    int nt = thread_cap();
    if (nt <= 1 || count < 4096) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::size_t chunk = (count + nt - 1) / nt;
    for (int t = 0; t < nt; ++t) {
        std::size_t lo = t * chunk, hi = std::min(count, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn] {
            for (std::size_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace cilab
