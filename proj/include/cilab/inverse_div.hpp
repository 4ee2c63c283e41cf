#pragma once

#include <array>
#include <cmath>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "norms.hpp"
#include "spectral.hpp"

namespace cilab {

// ℛv = ¼(∇𝒫u + ∇𝒫uᵀ) + ¾(∇u + ∇uᵀ) − ½(div u)Id with Δu = v − ⟨v⟩, mode by mode.
inline TensorField inverse_divergence(const VectorField& v) {
    Modes M(v.grid.n);
    auto h = forward(v);
    std::array<Coeffs, 6> R;
    for (auto& x : R) x.assign(M.size(), 0.0);
    const cplx I(0.0, 1.0);
    M.each([&](std::size_t i, const int*, const double* k) {
        double k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
        if (k2 == 0.0) return;
        cplx u[3], P[3];
        for (int a = 0; a < 3; ++a) u[a] = -h[a][i] / k2;
        cplx ku = k[0] * u[0] + k[1] * u[1] + k[2] * u[2];
        for (int a = 0; a < 3; ++a) P[a] = u[a] - k[a] * ku / k2;
        for (int a = 0; a < 3; ++a)
            for (int b = a; b < 3; ++b) {
                cplx s = 0.25 * (k[b] * P[a] + k[a] * P[b]) + 0.75 * (k[b] * u[a] + k[a] * u[b]);
                if (a == b) s -= 0.5 * ku;
                R[sym_index(a, b)][i] = I * s;
            }
    });
    return inverse<6>(v.grid, R);
}

struct OscillatoryProbe {
    VectorField amplitude;  // smooth, low frequency
    std::array<int, 3> k{1, 0, 0};
    double alpha = 0.1;
};

struct ProbeRow {
    int lambda;
    double norm_alpha;
    double ratio;  // NaN on the first row
};

// C^α norm: ‖f‖₀ + [f]_α
template <int C>
double holder_norm(const Field<C>& f, double alpha) {
    return sup_norm(f) + holder_seminorm(f, alpha);
}

inline VectorField oscillate(const OscillatoryProbe& p, int lambda) {
    const Grid& g = p.amplitude.grid;
    int band = spectral_extent(p.amplitude);
    int kmax = std::max({std::abs(p.k[0]), std::abs(p.k[1]), std::abs(p.k[2])});
    if (lambda * kmax + band + 1 > g.kcut())
        throw std::invalid_argument("probe frequency exceeds grid capacity");
    VectorField F = p.amplitude;
    for (int i3 = 0; i3 < g.n; ++i3)
        for (int i2 = 0; i2 < g.n; ++i2)
            for (int i1 = 0; i1 < g.n; ++i1) {
                long ph = (long(p.k[0]) * i1 + long(p.k[1]) * i2 + long(p.k[2]) * i3) * lambda;
                ph = ((ph % g.n) + g.n) % g.n;
                double c = std::cos(two_pi * double(ph) / g.n);
                std::size_t q = g.idx(i1, i2, i3);
                for (int a = 0; a < 3; ++a) F[a][q] *= c;
            }
    return F;
}

inline void fill_ratios(std::vector<ProbeRow>& rows) {
    for (std::size_t i = 0; i < rows.size(); ++i)
        rows[i].ratio = i == 0 || rows[i - 1].norm_alpha == 0 ? std::nan("") : rows[i].norm_alpha / rows[i - 1].norm_alpha;
}

inline std::vector<ProbeRow> schauder_scaling_probe(const OscillatoryProbe& p, const std::vector<int>& lambdas) {
    std::vector<ProbeRow> rows;
    for (int lam : lambdas) rows.push_back({lam, holder_norm(inverse_divergence(oscillate(p, lam)), p.alpha), 0.0});
    fill_ratios(rows);
    return rows;
}

// [b, ℛ](F) = bℛ(F) − ℛ(bF)
inline TensorField commutator(const ScalarField& b, const VectorField& F) {
    return scale_by(b, inverse_divergence(F)) - inverse_divergence(scale_by(b, F));
}

inline std::vector<ProbeRow> commutator_scaling_probe(const ScalarField& b, const OscillatoryProbe& p,
                                                       const std::vector<int>& lambdas) {
    int band = spectral_extent(b);
    std::vector<ProbeRow> rows;
    for (int lam : lambdas) {
        int kmax = std::max({std::abs(p.k[0]), std::abs(p.k[1]), std::abs(p.k[2])});
        if (lam * kmax + band + spectral_extent(p.amplitude) + 1 > b.grid.kcut())
            throw std::invalid_argument("probe frequency exceeds grid capacity");
        rows.push_back({lam, holder_norm(commutator(b, oscillate(p, lam)), p.alpha), 0.0});
    }
    fill_ratios(rows);
    return rows;
}

inline void write_probe_csv(std::ostream& os, const std::vector<ProbeRow>& rows) {
    os << "lambda,norm_alpha,ratio\n";
    char buf[96];
    for (auto& r : rows) {
        if (std::isnan(r.ratio)) std::snprintf(buf, sizeof buf, "%d,%.17g,\n", r.lambda, r.norm_alpha);
        else std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g\n", r.lambda, r.norm_alpha, r.ratio);
        os << buf;
    }
}

}  // namespace cilab
