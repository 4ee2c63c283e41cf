#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "field.hpp"

namespace cilab {

inline double bump(double s) { return std::abs(s) < 1.0 ? std::exp(-1.0 / (1.0 - s * s)) : 0.0; }

// taps w[j], j = -r..r, sampling ψ(jh/ℓ) and renormalized to unit discrete mass
inline std::vector<double> mollifier_taps(double ell, double h) {
    int r = int(std::ceil(ell / h));
    std::vector<double> w(2 * r + 1);
    double s = 0;
    for (int j = -r; j <= r; ++j) s += (w[j + r] = bump(j * h / ell));
    for (auto& x : w) x /= s;
    return w;
}

namespace detail {

inline void convolve_axis(std::vector<double>& v, const Grid& g, int axis, const std::vector<double>& w) {
    int n = g.n, r = int(w.size() / 2);
    std::vector<double> line(n), out(n);
    std::size_t stride = axis == 0 ? 1 : (axis == 1 ? std::size_t(n) : std::size_t(n) * n);
    for (int b = 0; b < n; ++b)
        for (int a = 0; a < n; ++a) {
            std::size_t base;
            if (axis == 0) base = g.idx(0, a, b);
            else if (axis == 1) base = g.idx(a, 0, b);
            else base = g.idx(a, b, 0);
            for (int i = 0; i < n; ++i) line[i] = v[base + i * stride];
            for (int i = 0; i < n; ++i) {
                double s = 0;
                for (int j = -r; j <= r; ++j) s += w[j + r] * line[((i - j) % n + n) % n];
                out[i] = s;
            }
            for (int i = 0; i < n; ++i) v[base + i * stride] = out[i];
        }
}

}  // namespace detail

// Spatial mollification f∗ψ_ℓ by separable circular convolution. When ℓ < 2h the
// kernel cannot be resolved; f is returned unchanged and *skipped is set.
template <int C>
Field<C> mollify(const Field<C>& f, double ell, bool* skipped = nullptr) {
    if (!(ell > 0.0)) throw std::invalid_argument("mollification length must be positive");
    double h = f.grid.h();
    if (skipped) *skipped = false;
    if (ell < 2.0 * h) {
        if (skipped) *skipped = true;
        return f;
    }
    auto w = mollifier_taps(ell, h);
    Field<C> out = f;
    for (int c = 0; c < C; ++c)
        for (int a = 0; a < 3; ++a) detail::convolve_axis(out[c], f.grid, a, w);
    return out;
}

}  // namespace cilab
