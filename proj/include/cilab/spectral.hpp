#pragma once

#include <fftw3.h>

#include <complex>
#include <cstring>
#include <map>
#include <mutex>
#include <stdexcept>
#include <vector>

#include "field.hpp"

namespace cilab {

using cplx = std::complex<double>;
using Coeffs = std::vector<cplx>;

namespace detail {

struct PlanPair {
    fftw_plan fwd = nullptr;
    fftw_plan bwd = nullptr;
};

inline std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
}

// FFTW_ESTIMATE keeps the chosen algorithm, and therefore the bits, identical across runs.
inline PlanPair plans_for(int n) {
    static std::map<int, PlanPair> cache;
    std::lock_guard<std::mutex> lock(planner_mutex());
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;
    std::size_t nr = std::size_t(n) * n * n, nc = std::size_t(n) * n * (n / 2 + 1);
    double* r = fftw_alloc_real(nr);
    fftw_complex* c = fftw_alloc_complex(nc);
    PlanPair pp;
    pp.fwd = fftw_plan_dft_r2c_3d(n, n, n, r, c, FFTW_ESTIMATE);
    pp.bwd = fftw_plan_dft_c2r_3d(n, n, n, c, r, FFTW_ESTIMATE);
    fftw_free(r);
    fftw_free(c);
    cache[n] = pp;
    return pp;
}

}  // namespace detail

// Index helper for the half-spectrum: storage is [i3][i2][m1], m1 in [0, n/2].
struct Modes {
    int n, nh;
    explicit Modes(int n_) : n(n_), nh(n_ / 2 + 1) {}
    std::size_t size() const { return std::size_t(n) * n * nh; }
    std::size_t idx(int m1, int m2, int m3) const { return std::size_t(m1) + std::size_t(nh) * (m2 + std::size_t(n) * m3); }
    int wave(int m) const { return m <= n / 2 ? m : m - n; }
    bool nyquist(int m) const { return m == n / 2; }

    // visits (index, k1, k2, k3, keff) where keff zeroes Nyquist components
    template <class Fn>
    void each(Fn&& fn) const {
        for (int m3 = 0; m3 < n; ++m3)
            for (int m2 = 0; m2 < n; ++m2)
                for (int m1 = 0; m1 < nh; ++m1) {
                    int k[3] = {wave(m1), wave(m2), wave(m3)};
                    double ke[3] = {nyquist(m1) ? 0.0 : double(k[0]), nyquist(m2) ? 0.0 : double(k[1]),
                                    nyquist(m3) ? 0.0 : double(k[2])};
                    fn(idx(m1, m2, m3), k, ke);
                }
    }
};

inline Coeffs forward(const Grid& g, const std::vector<double>& v) {
    auto pp = detail::plans_for(g.n);
    std::size_t nr = g.size();
    Modes M(g.n);
    double* r = fftw_alloc_real(nr);
    fftw_complex* c = fftw_alloc_complex(M.size());
    std::memcpy(r, v.data(), nr * sizeof(double));
    fftw_execute_dft_r2c(pp.fwd, r, c);
    Coeffs out(M.size());
    double s = 1.0 / double(nr);
    for (std::size_t i = 0; i < M.size(); ++i) out[i] = cplx(c[i][0], c[i][1]) * s;
    fftw_free(r);
    fftw_free(c);
    return out;
}

inline std::vector<double> inverse(const Grid& g, const Coeffs& in) {
    auto pp = detail::plans_for(g.n);
    std::size_t nr = g.size();
    Modes M(g.n);
    double* r = fftw_alloc_real(nr);
    fftw_complex* c = fftw_alloc_complex(M.size());
    for (std::size_t i = 0; i < M.size(); ++i) {
        c[i][0] = in[i].real();
        c[i][1] = in[i].imag();
    }
    fftw_execute_dft_c2r(pp.bwd, c, r);
    std::vector<double> out(r, r + nr);
    fftw_free(r);
    fftw_free(c);
    return out;
}

template <int C>
std::array<Coeffs, C> forward(const Field<C>& f) {
    std::array<Coeffs, C> out;
    for (int c = 0; c < C; ++c) out[c] = forward(f.grid, f[c]);
    return out;
}

template <int C>
Field<C> inverse(const Grid& g, const std::array<Coeffs, C>& in) {
    Field<C> out;
    out.grid = g;
    for (int c = 0; c < C; ++c) out[c] = inverse(g, in[c]);
    return out;
}

// (i k)^order along one axis; odd orders drop the Nyquist mode
inline cplx derivative_symbol(const int* k, int axis, int order, int n) {
    int kk = k[axis];
    if (order % 2 == 1 && (kk == n / 2 || kk == -n / 2)) return 0.0;
    cplx s = 1.0;
    for (int o = 0; o < order; ++o) s *= cplx(0.0, double(kk));
    return s;
}

template <int C>
Field<C> spectral_derivative(const Field<C>& f, int axis, int order = 1) {
    if (axis < 1 || axis > 3) throw std::invalid_argument("axis must be 1, 2 or 3");
    if (order < 1 || order > 16) throw std::invalid_argument("derivative order out of range");
    // (n/2)^order must stay far from overflow; 16th order at n = 2^12 is ~1e53
    Modes M(f.grid.n);
    Field<C> out;
    out.grid = f.grid;
    for (int c = 0; c < C; ++c) {
        Coeffs h = forward(f.grid, f[c]);
        M.each([&](std::size_t i, const int* k, const double*) { h[i] *= derivative_symbol(k, axis - 1, order, M.n); });
        out[c] = inverse(f.grid, h);
    }
    return out;
}

inline VectorField gradient(const ScalarField& f) {
    Modes M(f.grid.n);
    Coeffs h = forward(f.grid, f[0]);
    std::array<Coeffs, 3> g{h, h, h};
    M.each([&](std::size_t i, const int*, const double* ke) {
        for (int a = 0; a < 3; ++a) g[a][i] = h[i] * cplx(0.0, ke[a]);
    });
    return inverse<3>(f.grid, g);
}

// J[m][j] = ∂_j u_m
inline std::array<VectorField, 3> jacobian(const VectorField& u) {
    std::array<VectorField, 3> J;
    for (int m = 0; m < 3; ++m) {
        ScalarField s;
        s.grid = u.grid;
        s[0] = u[m];
        J[m] = gradient(s);
    }
    return J;
}

inline ScalarField divergence(const VectorField& u) {
    Modes M(u.grid.n);
    auto h = forward(u);
    Coeffs d(M.size());
    M.each([&](std::size_t i, const int*, const double* ke) {
        d[i] = cplx(0.0, 1.0) * (ke[0] * h[0][i] + ke[1] * h[1][i] + ke[2] * h[2][i]);
    });
    ScalarField out;
    out.grid = u.grid;
    out[0] = inverse(u.grid, d);
    return out;
}

// row divergence: (div T)_i = Σ_j ∂_j T_ij
inline VectorField divergence(const TensorField& T) {
    Modes M(T.grid.n);
    auto h = forward(T);
    std::array<Coeffs, 3> d;
    for (auto& x : d) x.assign(M.size(), 0.0);
    M.each([&](std::size_t i, const int*, const double* ke) {
        for (int r = 0; r < 3; ++r) {
            cplx s = 0.0;
            for (int j = 0; j < 3; ++j) s += ke[j] * h[sym_index(r, j)][i];
            d[r][i] = cplx(0.0, 1.0) * s;
        }
    });
    return inverse<3>(T.grid, d);
}

inline VectorField curl(const VectorField& u) {
    Modes M(u.grid.n);
    auto h = forward(u);
    std::array<Coeffs, 3> d;
    for (auto& x : d) x.assign(M.size(), 0.0);
    const cplx I(0.0, 1.0);
    M.each([&](std::size_t i, const int*, const double* ke) {
        d[0][i] = I * (ke[1] * h[2][i] - ke[2] * h[1][i]);
        d[1][i] = I * (ke[2] * h[0][i] - ke[0] * h[2][i]);
        d[2][i] = I * (ke[0] * h[1][i] - ke[1] * h[0][i]);
    });
    return inverse<3>(u.grid, d);
}

inline void leray_in_place(std::array<Coeffs, 3>& h, int n) {
    Modes M(n);
    M.each([&](std::size_t i, const int* k, const double* ke) {
        if (k[0] == 0 && k[1] == 0 && k[2] == 0) {
            for (int a = 0; a < 3; ++a) h[a][i] = 0.0;
            return;
        }
        double k2 = ke[0] * ke[0] + ke[1] * ke[1] + ke[2] * ke[2];
        if (k2 == 0.0) return;
        cplx kd = (ke[0] * h[0][i] + ke[1] * h[1][i] + ke[2] * h[2][i]) / k2;
        for (int a = 0; a < 3; ++a) h[a][i] -= ke[a] * kd;
    });
}

inline VectorField leray_project(const VectorField& u) {
    auto h = forward(u);
    leray_in_place(h, u.grid.n);
    return inverse<3>(u.grid, h);
}

// zero-mean solution of Δu = f − ⟨f⟩ with Δ = div∘grad on the grid
template <int C>
Field<C> inverse_laplacian(const Field<C>& f) {
    Modes M(f.grid.n);
    Field<C> out;
    out.grid = f.grid;
    for (int c = 0; c < C; ++c) {
        Coeffs h = forward(f.grid, f[c]);
        M.each([&](std::size_t i, const int*, const double* ke) {
            double k2 = ke[0] * ke[0] + ke[1] * ke[1] + ke[2] * ke[2];
            h[i] = k2 == 0.0 ? cplx(0.0) : -h[i] / k2;
        });
        out[c] = inverse(f.grid, h);
    }
    return out;
}

// 2/3-rule truncation: keep modes with every |k_i| <= grid.kcut()
template <int C>
Field<C> dealias(const Field<C>& f) {
    Modes M(f.grid.n);
    int kc = f.grid.kcut();
    Field<C> out;
    out.grid = f.grid;
    for (int c = 0; c < C; ++c) {
        Coeffs h = forward(f.grid, f[c]);
        M.each([&](std::size_t i, const int* k, const double*) {
            if (std::abs(k[0]) > kc || std::abs(k[1]) > kc || std::abs(k[2]) > kc) h[i] = 0.0;
        });
        out[c] = inverse(f.grid, h);
    }
    return out;
}

// largest |k_i| carrying energy above tol relative to the peak coefficient
template <int C>
int spectral_extent(const Field<C>& f, double tol = 1e-13) {
    Modes M(f.grid.n);
    int ext = 0;
    for (int c = 0; c < C; ++c) {
        Coeffs h = forward(f.grid, f[c]);
        double peak = 0;
        for (auto& z : h) peak = std::max(peak, std::abs(z));
        if (peak == 0) continue;
        M.each([&](std::size_t i, const int* k, const double*) {
            if (std::abs(h[i]) > tol * peak)
                ext = std::max({ext, std::abs(k[0]), std::abs(k[1]), std::abs(k[2])});
        });
    }
    return ext;
}

}  // namespace cilab
