#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "spectral.hpp"

namespace cilab {

// Dyadic-lag Hölder seminorm estimate: lags of n/2, n/4, ..., 1 grid points along
// each axis. Vector differences use the Euclidean norm, tensor differences the operator norm.
template <int C>
double holder_seminorm(const Field<C>& f, double theta) {
    if (!(theta > 0.0 && theta <= 1.0)) throw std::invalid_argument("Hölder exponent must lie in (0,1]");
    const Grid& g = f.grid;
    int n = g.n;
    double best = 0;
    for (int axis = 0; axis < 3; ++axis)
        for (int s = n / 2; s >= 1; s /= 2) {
            double len = s * g.h(), m = 0;
            for (int k = 0; k < n; ++k)
                for (int j = 0; j < n; ++j)
                    for (int i = 0; i < n; ++i) {
                        int ii = i, jj = j, kk = k;
                        if (axis == 0) ii = (i + s) % n;
                        else if (axis == 1) jj = (j + s) % n;
                        else kk = (k + s) % n;
                        std::size_t p = g.idx(i, j, k), q = g.idx(ii, jj, kk);
                        double d2 = 0;
                        if constexpr (C == 6) {
                            Mat3 D = sym_at(f, q) - sym_at(f, p);
                            if (D.squaredNorm() <= m) continue;
                            double d = op_norm(D);
                            d2 = d * d;
                        } else {
                            for (int c = 0; c < C; ++c) {
                                double d = f[c][q] - f[c][p];
                                d2 += d * d;
                            }
                        }
                        m = std::max(m, d2);
                    }
            best = std::max(best, std::sqrt(m) / std::pow(len, theta));
        }
    return best;
}

// Σ_{m ≤ N} max_{|β| = m} ‖∂^β f‖₀ with spectral derivatives
template <int C>
double cN_norm(const Field<C>& f, int N) {
    if (N < 0 || N > 4) throw std::invalid_argument("cN_norm supports 0 <= N <= 4");
    double total = sup_norm(f);
    if (N == 0) return total;
    auto h = forward(f);
    Modes M(f.grid.n);
    for (int m = 1; m <= N; ++m) {
        double worst = 0;
        for (int b1 = 0; b1 <= m; ++b1)
            for (int b2 = 0; b1 + b2 <= m; ++b2) {
                int b3 = m - b1 - b2;
                std::array<Coeffs, C> d = h;
                M.each([&](std::size_t i, const int* k, const double*) {
                    cplx s = derivative_symbol(k, 0, b1, M.n) * derivative_symbol(k, 1, b2, M.n) *
                             derivative_symbol(k, 2, b3, M.n);
                    for (int c = 0; c < C; ++c) d[c][i] *= s;
                });
                worst = std::max(worst, sup_norm(inverse<C>(f.grid, d)));
            }
        total += worst;
    }
    return total;
}

// ½∫|v|² by the trapezoidal rule, exact for trigonometric polynomials
inline double energy(const VectorField& v) {
    long double s = 0;
    for (std::size_t p = 0; p < v.size(); ++p) s += v[0][p] * v[0][p] + v[1][p] * v[1][p] + v[2][p] * v[2][p];
    double h = v.grid.h();
    return double(0.5L * s * h * h * h);
}

// max over x of the operator norm (largest |eigenvalue|) of a symmetric tensor
inline double sup_op_norm(const TensorField& T) { return sup_norm(T); }

}  // namespace cilab
