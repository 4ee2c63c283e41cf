#pragma once

// Self-check suites shared by the command line and the acceptance binary.

#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "cilab/beltrami.hpp"
#include "cilab/inverse_div.hpp"
#include "cilab/norms.hpp"

namespace cilab {

struct Check {
    std::string name;
    double value = 0, tol = 0;
    bool pass() const { return value <= tol; }
};

inline nlohmann::json to_json(const std::vector<Check>& cs) {
    auto a = nlohmann::json::array();
    for (auto& c : cs) a.push_back({{"name", c.name}, {"value", c.value}, {"tol", c.tol}, {"pass", c.pass()}});
    return a;
}

inline bool all_pass(const std::vector<Check>& cs) {
    return std::all_of(cs.begin(), cs.end(), [](auto& c) { return c.pass(); });
}

inline std::vector<cplx> random_amplitudes(const FrequencyFamily& f, std::mt19937_64& rng) {
    std::normal_distribution<double> N;
    std::vector<cplx> a(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) {
        int j = f.partner(i);
        if (j < int(i)) continue;
        a[i] = cplx(N(rng), N(rng));
        a[j] = std::conj(a[i]);
    }
    return a;
}

inline Mat3 random_symmetric(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> U(-1, 1);
    Mat3 M;
    for (int i = 0; i < 3; ++i)
        for (int j = i; j < 3; ++j) M(i, j) = M(j, i) = U(rng);
    return M;
}

// random trigonometric vector field with |k|∞ ≤ kmax and nonzero mean, built in Fourier space
inline VectorField random_smooth_field(const Grid& g, std::mt19937_64& rng, int kmax = 6) {
    std::uniform_real_distribution<double> U(-1, 1);
    std::uniform_int_distribution<int> K(-kmax, kmax), K1(1, kmax);
    Modes M(g.n);
    std::array<Coeffs, 3> c;
    for (auto& h : c) {
        h.assign(M.size(), cplx(0));
        h[0] = 0.3 * U(rng);
        for (int m = 0; m < 10; ++m) {
            int k2 = K(rng), k3 = K(rng);
            h[M.idx(K1(rng), (k2 + g.n) % g.n, (k3 + g.n) % g.n)] += cplx(U(rng), U(rng));
        }
    }
    return inverse<3>(g, c);
}

// family invariants, the amplitude map γ and the Beltrami identities on an n³ grid
inline std::vector<Check> geometry_checks(const FrequencyFamily& fe, const FrequencyFamily& fo, int n, unsigned seed = 1,
                                          int trials = 100) {
    std::vector<Check> out;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> U(0, 1);
    double disjoint = 0;
    for (auto& k : fe.members)
        if (fo.index_of(k) >= 0) disjoint = 1;
    out.push_back({"disjoint_families", disjoint, 0});
    for (auto* f : {&fe, &fo}) {
        std::string p(1, f->parity);
        out.push_back({"invariants_" + p, double(family_violations(*f).size()), 0});
        // r0 > 1e-3, stated as 1e-3 / r0 ≤ 1
        out.push_back({"r0_" + p, 1e-3 / f->r0, 1.0 - 1e-15});
        auto g1 = gamma(Mat3::Identity(), *f);
        out.push_back({"gamma_id_" + p, (g1.array() - 0.5).abs().maxCoeff(), 1e-12});
        double worst = 0;
        for (int t = 0; t < trials; ++t) {
            Mat3 E = random_symmetric(rng);
            Mat3 R = Mat3::Identity() + (0.5 * f->r0 * U(rng) / op_norm(E)) * E;
            auto gm = gamma(R, *f);
            Mat3 back = Mat3::Zero();
            for (std::size_t i = 0; i < f->size(); ++i) back += 0.5 * gm[i] * gm[i] * projector_complement(f->khat(i));
            worst = std::max(worst, (back - R).cwiseAbs().maxCoeff());
        }
        out.push_back({"reconstruction_" + p, worst, 1e-12});

        Grid g(n);
        auto a = random_amplitudes(*f, rng);
        auto W = beltrami_field(a, *f, 1, g);
        double w0 = sup_norm(W);
        out.push_back({"beltrami_div_" + p, max_abs(divergence(W)) / cN_norm(W, 1), 1e-10});
        auto WW = outer(W);
        out.push_back({"beltrami_stationary_" + p, max_abs_diff(divergence(WW), gradient(ScalarField(0.5 * dot(W, W)))) / (w0 * w0), 1e-10});
        Mat3 avg = beltrami_average(a, *f);
        double d = 0;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) d = std::max(d, std::abs(mean(WW, sym_index(i, j)) - avg(i, j)));
        out.push_back({"beltrami_average_" + p, d / (w0 * w0), 1e-10});
    }
    return out;
}

// ℛ on random fields, plus the Schauder and commutator scaling probes at 64³
inline std::vector<Check> operator_checks(int n, int fields, unsigned seed = 2, double alpha = 0.1) {
    std::vector<Check> out;
    std::mt19937_64 rng(seed);
    Grid g(n);
    double inv = 0, sym = 0, tr = 0;
    for (int f = 0; f < fields; ++f) {
        auto v = random_smooth_field(g, rng);
        auto R = inverse_divergence(v);
        VectorField vm = v;
        for (int c = 0; c < 3; ++c) {
            double m = mean(v, c);
            for (auto& x : vm[c]) x -= m;
        }
        double s = max_abs(vm);
        inv = std::max(inv, max_abs_diff(divergence(R), vm) / s);
        tr = std::max(tr, max_abs_trace(R) / s);
        // symmetry is structural in the six-component storage; check the full-matrix view agrees
        for (std::size_t p = 0; p < g.size(); p += 97) sym = std::max(sym, (sym_at(R, p) - sym_at(R, p).transpose()).cwiseAbs().maxCoeff());
    }
    out.push_back({"inverse_div_right_inverse", inv, 1e-11});
    out.push_back({"inverse_div_symmetric", sym, 0});
    out.push_back({"inverse_div_trace", tr, 1e-12});

    Grid gp(64);
    auto amp = sample_vector(gp, [](double, double, double) { return std::array<double, 3>{0.3, 1.0, -0.5}; });
    OscillatoryProbe p{amp, {1, 0, 0}, alpha};
    double worst = 0;
    for (auto& r : schauder_scaling_probe(p, {4, 8, 16}))
        if (!std::isnan(r.ratio)) worst = std::max(worst, r.ratio);
    out.push_back({"schauder_ratio", worst, std::pow(2.0, -(1 - alpha)) * 1.25});
    auto b = sample_scalar(gp, [](double x, double, double) { return std::sin(x); });
    worst = 0;
    for (auto& r : commutator_scaling_probe(b, p, {4, 8, 16}))
        if (!std::isnan(r.ratio)) worst = std::max(worst, r.ratio);
    out.push_back({"commutator_ratio", worst, std::pow(2.0, alpha - 2) * 1.5});
    return out;
}

}  // namespace cilab
