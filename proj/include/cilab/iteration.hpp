#pragma once

#include <boost/math/quadrature/gauss.hpp>

#include <array>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "beltrami.hpp"
#include "inverse_div.hpp"
#include "mollify.hpp"
#include "norms.hpp"
#include "parameters.hpp"
#include "spectral.hpp"
#include "timefield.hpp"

namespace cilab {

class BallViolation : public std::runtime_error {
public:
    BallViolation(int stage_, int l_, double t_, std::array<double, 3> x_, double radius_, double r0_)
        : std::runtime_error("stage " + std::to_string(stage_) + ": R_l/rho_l leaves the ball at l = " + std::to_string(l_) +
                             " (t = " + std::to_string(t_) + "): radius " + std::to_string(radius_) + " >= r0 = " + std::to_string(r0_)),
          stage(stage_), l(l_), t(t_), x(x_), radius(radius_) {}
    int stage, l;
    double t;
    std::array<double, 3> x;
    double radius;
};

class GridCapacityError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class SupportOverflow : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class StepCountTooSmall : public std::runtime_error {
public:
    StepCountTooSmall(double c, int n)
        : std::runtime_error("doubling " + std::to_string(n) + " substeps moves the flow by " + std::to_string(c)),
          change(c) {}
    double change;
};

// ---- smooth step and time cutoffs -------------------------------------------

namespace detail {

// exp(−½/(1 − s²)): flatter than the mollifier bump, which keeps |χ′| ≤ 4μλ^{ε₁}
inline double step_bump(double s) { return std::abs(s) < 1.0 ? std::exp(-0.5 / (1.0 - s * s)) : 0.0; }

// cumulative ∫_{-1}^{-1 + 2j/N} of the step bump for j ≤ N/2, and the total mass
struct StepTable {
    static constexpr int N = 2048;
    std::vector<double> cum;
    double mass = 0;
    StepTable() : cum(N / 2 + 1, 0.0) {
        using GL = boost::math::quadrature::gauss<double, 30>;
        for (int j = 1; j <= N / 2; ++j)
            cum[j] = cum[j - 1] + GL::integrate(step_bump, -1.0 + 2.0 * (j - 1) / N, -1.0 + 2.0 * j / N);
        mass = 2 * cum[N / 2];
    }
};

inline const StepTable& step_table() {
    static const StepTable t;
    return t;
}

}  // namespace detail

// S(u) = ∫_{-1}^{2u-1} ψ / ∫ψ; S(u) + S(1 − u) = 1 holds bit-for-bit
inline double smooth_step(double u) {
    if (u <= 0) return 0;
    if (u >= 1) return 1;
    if (u > 0.5) return 1 - smooth_step(1 - u);
    const auto& T = detail::step_table();
    int j = std::min(int(u * T.N), T.N / 2);
    double a = -1.0 + 2.0 * j / T.N;
    double part = boost::math::quadrature::gauss<double, 20>::integrate(detail::step_bump, a, 2 * u - 1);
    return (T.cum[j] + part) / T.mass;
}

inline double smooth_step_slope(double u) {
    return (u <= 0 || u >= 1) ? 0.0 : 2 * detail::step_bump(2 * u - 1) / detail::step_table().mass;
}

// χ₀: 1 on [−⅛, ⅛], 0 outside (−¼, ¼)
inline double chi0(double t) {
    double a = std::abs(t);
    if (a <= 0.125) return 1;
    if (a >= 0.25) return 0;
    return smooth_step(8 * (0.25 - a));
}

inline double chi0_prime(double t) {
    double a = std::abs(t);
    if (a <= 0.125 || a >= 0.25) return 0;
    return (t > 0 ? -8.0 : 8.0) * smooth_step_slope(8 * (0.25 - a));
}

// χ_l(t) = χ(μt − l). χ ≡ 1 on |s| ≤ ½ − η, 0 for |s| ≥ ½ + η, cos(π/2·S) across the
// overlap, so that χ(s)² + χ(s − 1)² = 1 there. η = λ^{−ε₁}/4.
struct CutoffFamily {
    double mu = 1, eta = 0.25;

    double base(double s) const {
        double a = std::abs(s);
        if (a <= 0.5 - eta) return 1;
        if (a >= 0.5 + eta) return 0;
        return std::cos(0.5 * std::numbers::pi * smooth_step((a - 0.5 + eta) / (2 * eta)));
    }
    double base_slope(double s) const {
        double a = std::abs(s);
        if (a <= 0.5 - eta || a >= 0.5 + eta) return 0;
        double u = (a - 0.5 + eta) / (2 * eta);
        double d = -std::sin(0.5 * std::numbers::pi * smooth_step(u)) * 0.5 * std::numbers::pi * smooth_step_slope(u) / (2 * eta);
        return s < 0 ? -d : d;
    }
    double chi(int l, double t) const { return base(mu * t - l); }
    double dchi(int l, double t) const { return mu * base_slope(mu * t - l); }

    std::vector<int> active(double t) const {
        std::vector<int> out;
        double s = mu * t;
        for (int l = int(std::floor(s - 0.5 - eta)); l <= int(std::ceil(s + 0.5 + eta)); ++l)
            if (chi(l, t) != 0) out.push_back(l);
        return out;
    }
    double overlap_width() const { return 2 * eta / mu; }
    double reach() const { return (0.5 + eta) / mu; }
};

inline CutoffFamily build_cutoffs(double mu, double eps1, double lambda_next, int stage = 1, double dt = 1e-5) {
    if (!(mu >= std::ldexp(1.0, stage + 2)))
        throw std::invalid_argument("mu = " + std::to_string(mu) + " is below 2^(q+2) for stage " + std::to_string(stage));
    CutoffFamily c;
    c.mu = mu;
    c.eta = 0.25 * std::pow(lambda_next, -eps1);
    if (c.overlap_width() < 4 * dt) throw std::invalid_argument("cutoff overlap narrower than four time steps");
    return c;
}

// ---- sparse trigonometric evaluation ---------------------------------------

// The trigonometric interpolant of a grid field, keeping modes above tol·peak, for
// evaluation (with gradient) at off-grid points.
template <int C>
struct SparseSpectrum {
    std::vector<std::array<double, 3>> k, ke;
    std::vector<std::array<cplx, C>> c;

    std::size_t size() const { return k.size(); }

    void eval(const double* X, double* val, double (*grad)[3]) const {
        for (int a = 0; a < C; ++a) {
            val[a] = 0;
            if (grad) grad[a][0] = grad[a][1] = grad[a][2] = 0;
        }
        for (std::size_t m = 0; m < k.size(); ++m) {
            double th = k[m][0] * X[0] + k[m][1] * X[1] + k[m][2] * X[2];
            double cs = std::cos(th), sn = std::sin(th);
            for (int a = 0; a < C; ++a) {
                double re = c[m][a].real() * cs - c[m][a].imag() * sn;
                double im = c[m][a].real() * sn + c[m][a].imag() * cs;
                val[a] += re;
                if (grad)
                    for (int j = 0; j < 3; ++j) grad[a][j] -= ke[m][j] * im;
            }
        }
    }
};

template <int C>
SparseSpectrum<C> sparse_spectrum(const std::array<Coeffs, C>& h, int n, double tol = 1e-14) {
    SparseSpectrum<C> s;
    double peak = 0;
    for (auto& comp : h)
        for (auto& z : comp) peak = std::max(peak, std::abs(z));
    if (peak == 0) return s;
    Modes M(n);
    M.each([&](std::size_t i, const int* k, const double* ke) {
        double mag = 0;
        for (int a = 0; a < C; ++a) mag = std::max(mag, std::abs(h[a][i]));
        if (mag <= tol * peak) return;
        // the half spectrum stores one of each ± pair except on the m1 = 0 and Nyquist planes
        double w = (k[0] == 0 || k[0] == n / 2) ? 1.0 : 2.0;
        s.k.push_back({double(k[0]), double(k[1]), double(k[2])});
        s.ke.push_back({ke[0], ke[1], ke[2]});
        std::array<cplx, C> cc;
        for (int a = 0; a < C; ++a) cc[a] = w * h[a][i];
        s.c.push_back(cc);
    });
    return s;
}

// DFT of the discrete mollifier taps, indexed by the FFT slot; all ones when skipped.
inline std::vector<double> mollifier_symbol(const Grid& g, double ell, bool* skipped = nullptr) {
    if (!(ell > 0)) throw std::invalid_argument("mollification length must be positive");
    std::vector<double> s(g.n, 1.0);
    if (skipped) *skipped = ell < 2 * g.h();
    if (ell < 2 * g.h()) return s;
    auto w = mollifier_taps(ell, g.h());
    int r = int(w.size() / 2);
    for (int m = 0; m < g.n; ++m) {
        int k = m <= g.n / 2 ? m : m - g.n;
        double acc = 0;
        for (int j = -r; j <= r; ++j) acc += w[j + r] * std::cos(k * j * g.h());
        s[m] = acc;
    }
    return s;
}

template <int C>
std::array<Coeffs, C> mollified_coeffs(const Field<C>& f, const std::vector<double>& sym) {
    auto h = forward(f);
    Modes M(f.grid.n);
    int n = f.grid.n;
    M.each([&](std::size_t i, const int* k, const double*) {
        double m = sym[(k[0] + n) % n] * sym[(k[1] + n) % n] * sym[(k[2] + n) % n];
        for (int a = 0; a < C; ++a) h[a][i] *= m;
    });
    return h;
}

// ---- flows ----------------------------------------------------------------

using VelocitySpectrum = std::shared_ptr<const SparseSpectrum<3>>;

// Backward characteristics dX/ds = v(X, s), X(t) = x, integrated from s = t to s1 with
// classical RK4; J = ∂X/∂x from dJ/ds = ∇v(X, s) J. Φ(x, t) = X(s1), DΦ = J(s1).
class FlowIntegrator {
public:
    FlowIntegrator(const std::function<VelocitySpectrum(double)>& vel, double t, double s1, int substeps)
        : N_(substeps), h_((s1 - t) / substeps) {
        if (substeps < 1) throw std::invalid_argument("substeps must be positive");
        for (int j = 0; j <= 2 * N_; ++j) spectra_.push_back(vel(t + (s1 - t) * (double(j) / (2 * N_))));
    }

    void point(const double* x, double* X, double (*J)[3]) const {
        for (int a = 0; a < 3; ++a) {
            X[a] = x[a];
            for (int b = 0; b < 3; ++b) J[a][b] = a == b;
        }
        double kx[4][3], kj[4][3][3], Xs[3], Js[3][3], V[3], G[3][3];
        const double cf[4] = {0, 0.5, 0.5, 1};
        for (int i = 0; i < N_; ++i) {
            for (int st = 0; st < 4; ++st) {
                for (int a = 0; a < 3; ++a) {
                    Xs[a] = X[a] + (st ? cf[st] * h_ * kx[st - 1][a] : 0.0);
                    for (int b = 0; b < 3; ++b) Js[a][b] = J[a][b] + (st ? cf[st] * h_ * kj[st - 1][a][b] : 0.0);
                }
                int slot = 2 * i + (st == 0 ? 0 : (st == 3 ? 2 : 1));
                spectra_[slot]->eval(Xs, V, G);
                for (int a = 0; a < 3; ++a) {
                    kx[st][a] = V[a];
                    for (int b = 0; b < 3; ++b) kj[st][a][b] = G[a][0] * Js[0][b] + G[a][1] * Js[1][b] + G[a][2] * Js[2][b];
                }
            }
            for (int a = 0; a < 3; ++a) {
                X[a] += h_ / 6 * (kx[0][a] + 2 * kx[1][a] + 2 * kx[2][a] + kx[3][a]);
                for (int b = 0; b < 3; ++b) J[a][b] += h_ / 6 * (kj[0][a][b] + 2 * kj[1][a][b] + 2 * kj[2][a][b] + kj[3][a][b]);
            }
        }
    }

private:
    int N_;
    double h_;
    std::vector<VelocitySpectrum> spectra_;
};

// Largest change of Φ over a subsample of grid points when the substep count doubles.
inline double flow_step_change(const std::function<VelocitySpectrum(double)>& vel, const Grid& g, double t, double s1,
                               int substeps, int stride) {
    FlowIntegrator a(vel, t, s1, substeps), b(vel, t, s1, 2 * substeps);
    double worst = 0, X1[3], X2[3], J[3][3];
    for (int k = 0; k < g.n; k += stride)
        for (int j = 0; j < g.n; j += stride)
            for (int i = 0; i < g.n; i += stride) {
                double x[3] = {g.x(i), g.x(j), g.x(k)};
                a.point(x, X1, J);
                b.point(x, X2, J);
                for (int c = 0; c < 3; ++c) worst = std::max(worst, std::abs(X1[c] - X2[c]));
            }
    return worst;
}

struct FlowMap {
    VectorField phi;                // Φ, unwrapped: x + periodic displacement
    std::array<VectorField, 3> dphi;  // dphi[i][j] = ∂_jΦ_i
    double step_change = std::numeric_limits<double>::quiet_NaN();
};

// v_ell(s) returns the already mollified velocity on the grid.
inline FlowMap flow_map(const std::function<VectorField(double)>& v_ell, int l, double mu, double t, int substeps = 16,
                        bool check_steps = true) {
    double s1 = l / mu;
    if (std::abs(t - s1) > 2 / mu + 1e-15) throw std::invalid_argument("flow requested more than 2/mu from its slice");
    std::map<std::uint64_t, VelocitySpectrum> memo;
    Grid g;
    std::function<VelocitySpectrum(double)> vel = [&](double s) {
        auto key = std::bit_cast<std::uint64_t>(s);
        auto it = memo.find(key);
        if (it != memo.end()) return it->second;
        auto f = v_ell(s);
        g = f.grid;
        auto sp = std::make_shared<const SparseSpectrum<3>>(sparse_spectrum<3>(forward(f), f.grid.n));
        memo[key] = sp;
        return sp;
    };
    FlowIntegrator F(vel, t, s1, substeps);
    FlowMap out;
    out.phi = VectorField(g);
    for (auto& d : out.dphi) d = VectorField(g);
    for (int k = 0; k < g.n; ++k)
        for (int j = 0; j < g.n; ++j)
            for (int i = 0; i < g.n; ++i) {
                double x[3] = {g.x(i), g.x(j), g.x(k)}, X[3], J[3][3];
                F.point(x, X, J);
                std::size_t p = g.idx(i, j, k);
                for (int a = 0; a < 3; ++a) {
                    out.phi[a][p] = X[a];
                    for (int b = 0; b < 3; ++b) out.dphi[a][b][p] = J[a][b];
                }
            }
    if (check_steps) {
        out.step_change = flow_step_change(vel, g, t, s1, substeps, std::max(1, g.n / 16));
        if (out.step_change > 1e-8) throw StepCountTooSmall(out.step_change, substeps);
    }
    return out;
}

// R_{ℓ,l}(x, t) = (R_l ∗ ψ_ℓ)(Φ_l(x, t)) with R_l = ρ_l Id − R̊(·, l/μ)
inline TensorField transported_stress(const TensorField& slice_stress, double rho, double ell, const FlowMap& flow) {
    const Grid& g = slice_stress.grid;
    TensorField Rl = identity_tensor(g, rho) - slice_stress;
    auto sp = sparse_spectrum<6>(mollified_coeffs(Rl, mollifier_symbol(g, ell)), g.n);
    TensorField out(g);
    for (std::size_t p = 0; p < g.size(); ++p) {
        double X[3] = {flow.phi[0][p], flow.phi[1][p], flow.phi[2][p]}, val[6];
        sp.eval(X, val, nullptr);
        for (int c = 0; c < 6; ++c) out[c][p] = val[c];
    }
    return out;
}

inline double rho_of(const TensorField& stress_at_slice, double r0) { return 2 * sup_norm(stress_at_slice) / r0; }

// p₁ = p − |w_o|²/2 − ⅓|w_c|² − ⅔⟨w_o, w_c⟩ − ⅔⟨v − v_ℓ, w⟩, shifted to zero mean
inline ScalarField new_pressure(const ScalarField& p, const VectorField& w_o, const VectorField& w_c, const VectorField& v,
                                const VectorField& v_ell) {
    ScalarField out = p;
    long double s = 0;
    for (std::size_t q = 0; q < p.size(); ++q) {
        double oo = 0, cc = 0, oc = 0, uw = 0;
        for (int a = 0; a < 3; ++a) {
            double o = w_o[a][q], c = w_c[a][q];
            oo += o * o;
            cc += c * c;
            oc += o * c;
            uw += (v[a][q] - v_ell[a][q]) * (o + c);
        }
        out[0][q] -= oo / 2 + cc / 3 + 2 * oc / 3 + 2 * uw / 3;
        s += out[0][q];
    }
    double m = double(s / p.size());
    for (auto& x : out[0]) x -= m;
    return out;
}

// ---- triples ----------------------------------------------------------------

class StageEvaluator;

struct EulerReynoldsTriple {
    Grid grid;
    int stage = 0;
    long lambda = 0;
    double support_lo = -0.25, support_hi = 0.25;
    TimeField<VectorField> v;
    TimeField<ScalarField> p;
    TimeField<TensorField> R;
    std::function<VectorField(double)> dv_dt;  // analytic ∂_t v when available
    std::function<SparseSpectrum<3>(double)> modes;  // closed-form spectrum of v when available
    std::shared_ptr<const StageEvaluator> step;
};

// v₀ = ½λ₀^{−1/5+ε₀}χ₀(t)(cos λ₀x₃, sin λ₀x₃, 0), p₀ = 0 and the matching R̊₀
inline EulerReynoldsTriple initial_triple(int lambda0, double eps0, const Grid& g) {
    if (lambda0 < 2) throw std::invalid_argument("lambda0 must be an integer >= 2");
    if (2 * lambda0 > g.kcut())
        throw GridCapacityError("grid n = " + std::to_string(g.n) + " cannot hold products of frequency " + std::to_string(lambda0));
    double A = 0.5 * std::pow(double(lambda0), -0.2 + eps0);
    std::vector<double> cz(g.n), sz(g.n);
    for (int k = 0; k < g.n; ++k) {
        long ph = (long(lambda0) * k) % g.n;
        cz[k] = std::cos(two_pi * ph / g.n);
        sz[k] = std::sin(two_pi * ph / g.n);
    }
    auto shear = [g, cz, sz](double amp) {
        VectorField v(g);
        for (int k = 0; k < g.n; ++k)
            for (int j = 0; j < g.n; ++j)
                for (int i = 0; i < g.n; ++i) {
                    std::size_t p = g.idx(i, j, k);
                    v[0][p] = amp * cz[k];
                    v[1][p] = amp * sz[k];
                }
        return v;
    };
    EulerReynoldsTriple T;
    T.grid = g;
    T.lambda = lambda0;
    T.v = TimeField<VectorField>(g, -0.25, 0.25, [=](double t) { return shear(A * chi0(t)); });
    T.dv_dt = [=](double t) { return shear(A * chi0_prime(t)); };
    T.modes = [=](double t) {
        // (cos, sin, 0)(λ₀x₃) = Re[(1, −i, 0) e^{iλ₀x₃}]
        SparseSpectrum<3> sp;
        double a = A * chi0(t);
        if (a == 0) return sp;
        sp.k.push_back({0, 0, double(lambda0)});
        sp.ke.push_back({0, 0, double(lambda0)});
        sp.c.push_back({cplx(a, 0), cplx(0, -a), cplx(0, 0)});
        return sp;
    };
    T.p = TimeField<ScalarField>(g, -0.25, 0.25, [g](double) { return ScalarField(g); });
    T.R = TimeField<TensorField>(g, -0.25, 0.25, [=](double t) {
        double c = A / lambda0 * chi0_prime(t);
        TensorField R(g);
        for (int k = 0; k < g.n; ++k)
            for (int j = 0; j < g.n; ++j)
                for (int i = 0; i < g.n; ++i) {
                    std::size_t p = g.idx(i, j, k);
                    R[sym_index(0, 2)][p] = c * sz[k];
                    R[sym_index(1, 2)][p] = -c * cz[k];
                }
        return R;
    });
    return T;
}

// ---- one inductive step -----------------------------------------------------

struct StageParams {
    int stage = 1;  // index of the stage being built
    long lambda = 4;
    double mu = 20, mu_formula = 20, ell = 0.25, eps1 = 0.05 * 0.05 / 18;
    int substeps = 16;
    double dt = 1e-5;
    double spectrum_tol = 1e-14;
    std::size_t memo = 3;
};

// μ below 10·2^q makes the slices l/μ too sparse to see R̊ at desk scale; the run uses
// the larger of the two.
inline double desk_mu_floor(int stage) { return 10.0 * std::ldexp(1.0, stage); }

inline StageParams stage_params(const ParameterSchedule& s, int stage, int substeps = 16) {
    StageParams P;
    P.stage = stage;
    P.lambda = std::lround(s.lambda(stage));
    P.mu_formula = s.mu(stage);
    P.mu = std::max(P.mu_formula, desk_mu_floor(stage));
    P.ell = s.ell(stage - 1);
    P.eps1 = s.eps1;
    P.substeps = substeps;
    return P;
}

struct SliceReport {
    int l = 0;
    double chi = 0, dchi = 0, rho = 0;
    double ball_radius = 0;
    std::array<double, 3> worst_x{};
    double dphi_dev = 0;  // max_x |DΦ_l − Id| (spectral norm)
    double a_max = 0, a_grad_max = 0;
    double step_change = std::numeric_limits<double>::quiet_NaN();
};

struct SnapshotOptions {
    bool stress = true;
    bool components = false;
    bool corrector_formula = false;
    bool covers(const SnapshotOptions& o) const {
        return (stress || !o.stress) && (components || !o.components) && (corrector_formula || !o.corrector_formula);
    }
};

struct StageSnapshot {
    double t = 0;
    SnapshotOptions opts;
    VectorField v, w, w_o, w_c, v_ell;
    ScalarField p;
    TensorField R;      // R̊₁, exactly trace-free
    VectorField dwdt;   // analytic ∂_t w
    std::vector<TensorField> components;  // R⁰ … R⁵ when requested
    VectorField w_c_formula;              // pointwise corrector when requested
    TensorField chi_R;                    // Σ_l χ_l² R_{ℓ,l}
    double chi2_sum = 0, imag_residue = 0, trace_residue = 0;
    std::array<double, 6> component_sup{};
    std::vector<SliceReport> slices;
};

struct SliceData {
    int l = 0;
    double rho = 0, stress_sup = 0;
    std::shared_ptr<const SparseSpectrum<6>> M;  // R̊(·, l/μ) ∗ ψ_ℓ
};

namespace detail {

struct FamilyKernel {
    const FrequencyFamily* f = nullptr;
    std::vector<std::array<double, 6>> G;  // c_k(R) = G_k · sym_coords(R)
    std::vector<CVec3> B, U;               // B_k and (k × B_k)/|k|²
    std::vector<std::array<double, 3>> k;

    explicit FamilyKernel(const FrequencyFamily& fam) : f(&fam) {
        std::size_t m = fam.size();
        G.assign(m, {});
        for (int j = 0; j < 6; ++j) {
            Eigen::Matrix<double, 6, 1> e = Eigen::Matrix<double, 6, 1>::Zero();
            e[j] = 1;
            Eigen::VectorXd c = gamma_squared(from_sym_coords(e), fam);
            for (std::size_t i = 0; i < m; ++i) G[i][j] = c[i];
        }
        for (std::size_t i = 0; i < m; ++i) {
            auto b = fam.B(i);
            std::array<double, 3> kk = {double(fam.members[i][0]), double(fam.members[i][1]), double(fam.members[i][2])};
            double k2 = kk[0] * kk[0] + kk[1] * kk[1] + kk[2] * kk[2];
            CVec3 u = {(kk[1] * b[2] - kk[2] * b[1]) / k2, (kk[2] * b[0] - kk[0] * b[2]) / k2, (kk[0] * b[1] - kk[1] * b[0]) / k2};
            B.push_back(b);
            U.push_back(u);
            k.push_back(kk);
        }
    }
};

// runs fn(i3) for every slab; results must only depend on i3
template <class Fn>
void for_slabs(int n, Fn&& fn) {
    int nt = std::min(thread_cap(), n);
    if (nt <= 1) {
        for (int k = 0; k < n; ++k) fn(k);
        return;
    }
    std::vector<std::thread> pool;
    for (int t = 0; t < nt; ++t)
        pool.emplace_back([&, t] {
            for (int k = t; k < n; k += nt) fn(k);
        });
    for (auto& th : pool) th.join();
}

inline double spectral_norm3(const double (*M)[3]) {
    Eigen::Matrix3d A;
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) A(a, b) = M[a][b];
    return Eigen::JacobiSVD<Eigen::Matrix3d>(A).singularValues()[0];
}

}  // namespace detail

class StageEvaluator {
public:
    StageEvaluator(EulerReynoldsTriple prev, StageParams P, const FrequencyFamily& fe, const FrequencyFamily& fo)
        : prev_(std::move(prev)), P_(P), ke_(fe), ko_(fo), r0_(std::min(fe.r0, fo.r0)) {
        const Grid& g = prev_.grid;
        if (g.n < 8 * P_.lambda)
            throw GridCapacityError("stage " + std::to_string(P_.stage) + " needs n >= 8*lambda = " +
                                    std::to_string(8 * P_.lambda) + ", grid has n = " + std::to_string(g.n));
        cut_ = build_cutoffs(P_.mu, P_.eps1, double(P_.lambda), P_.stage, P_.dt);
        sym_ = mollifier_symbol(g, P_.ell, &mollifier_skipped_);
        lo_ = prev_.support_lo - cut_.reach();
        hi_ = prev_.support_hi + cut_.reach();
        phase_.resize(g.n);
        for (int m = 0; m < g.n; ++m) phase_[m] = std::polar(1.0, two_pi * m / g.n);
    }

    const StageParams& params() const { return P_; }
    const CutoffFamily& cutoffs() const { return cut_; }
    const EulerReynoldsTriple& previous() const { return prev_; }
    double support_lo() const { return lo_; }
    double support_hi() const { return hi_; }
    double r0() const { return r0_; }
    bool mollifier_skipped() const { return mollifier_skipped_; }

    std::shared_ptr<const StageSnapshot> at(double t, SnapshotOptions o = {}) const {
        auto key = std::bit_cast<std::uint64_t>(t);
        {
            std::lock_guard<std::mutex> lk(m_);
            auto it = memo_.find(key);
            if (it != memo_.end() && it->second->opts.covers(o)) return it->second;
        }
        auto s = compute(t, o);
        std::lock_guard<std::mutex> lk(m_);
        if (P_.memo == 0) return s;
        if (memo_.count(key) == 0) order_.push_back(key);
        memo_[key] = s;
        while (order_.size() > P_.memo) {
            memo_.erase(order_.front());
            order_.pop_front();
        }
        return s;
    }

    std::shared_ptr<const SliceData> slice(int l) const {
        {
            std::lock_guard<std::mutex> lk(m_);
            auto it = slices_.find(l);
            if (it != slices_.end()) return it->second;
        }
        auto d = std::make_shared<SliceData>();
        d->l = l;
        auto R = prev_.R.get(l / P_.mu);
        d->stress_sup = sup_norm(*R);
        d->rho = 2 * d->stress_sup / r0_;
        if (d->rho > 0)
            d->M = std::make_shared<const SparseSpectrum<6>>(sparse_spectrum<6>(mollified_coeffs(*R, sym_), R->grid.n, P_.spectrum_tol));
        std::lock_guard<std::mutex> lk(m_);
        return slices_.emplace(l, d).first->second;
    }

    VelocitySpectrum velocity_spectrum(double s) const {
        auto key = std::bit_cast<std::uint64_t>(s);
        {
            std::lock_guard<std::mutex> lk(m_);
            auto it = vel_.find(key);
            if (it != vel_.end()) return it->second;
        }
        std::shared_ptr<const SparseSpectrum<3>> sp;
        if (prev_.modes && s >= prev_.support_lo && s <= prev_.support_hi) {
            auto m = prev_.modes(s);
            int n = prev_.grid.n;
            for (std::size_t i = 0; i < m.size(); ++i) {
                double f = 1;
                for (int j = 0; j < 3; ++j) f *= sym_[(int(m.k[i][j]) + n) % n];
                for (auto& z : m.c[i]) z *= f;
            }
            sp = std::make_shared<const SparseSpectrum<3>>(std::move(m));
        } else {
            auto v = prev_.v.get(s);
            sp = std::make_shared<const SparseSpectrum<3>>(sparse_spectrum<3>(mollified_coeffs(*v, sym_), v->grid.n, P_.spectrum_tol));
        }
        std::lock_guard<std::mutex> lk(m_);
        if (vel_.count(key) == 0) {
            vel_order_.push_back(key);
            vel_[key] = sp;
            while (vel_order_.size() > 256) {
                vel_.erase(vel_order_.front());
                vel_order_.pop_front();
            }
        }
        return sp;
    }

private:
    EulerReynoldsTriple prev_;
    StageParams P_;
    detail::FamilyKernel ke_, ko_;
    double r0_;
    CutoffFamily cut_;
    std::vector<double> sym_;
    bool mollifier_skipped_ = false;
    double lo_ = 0, hi_ = 0;
    std::vector<cplx> phase_;

    mutable std::mutex m_;
    mutable std::map<std::uint64_t, std::shared_ptr<const StageSnapshot>> memo_;
    mutable std::deque<std::uint64_t> order_;
    mutable std::map<int, std::shared_ptr<const SliceData>> slices_;
    mutable std::map<std::uint64_t, VelocitySpectrum> vel_;
    mutable std::deque<std::uint64_t> vel_order_;
    mutable std::set<int> step_checked_;

    std::shared_ptr<const StageSnapshot> compute(double t, SnapshotOptions o) const;

    struct Accum {
        VectorField Psi, dPsi, w_o, wc;
        TensorField chiM;  // Σ χ_l² M_l(Φ_l)
    };
    void accumulate_slice(double t, const SliceData& sd, double chi, double dchi, const VectorField& v_ell,
                          const SnapshotOptions& o, Accum& acc, SliceReport& rep, double& imag) const;
};

inline void StageEvaluator::accumulate_slice(double t, const SliceData& sd, double chi, double dchi, const VectorField& v_ell,
                                             const SnapshotOptions& o, Accum& acc, SliceReport& rep, double& imag) const {
    const Grid& g = prev_.grid;
    int n = g.n;
    const int l = sd.l;
    const auto& K = (l % 2 != 0) ? ko_ : ke_;
    const std::size_t nk = K.k.size();
    const double lam = double(P_.lambda), rho = sd.rho;
    std::function<VelocitySpectrum(double)> vel = [this](double s) { return velocity_spectrum(s); };
    FlowIntegrator F(vel, t, l / P_.mu, P_.substeps);

    bool check = false;
    {
        std::lock_guard<std::mutex> lk(m_);
        check = step_checked_.insert(l).second;
    }
    if (check) {
        rep.step_change = flow_step_change(vel, g, t, l / P_.mu, P_.substeps, std::max(1, n / 16));
        if (rep.step_change > 1e-8) throw StepCountTooSmall(rep.step_change, P_.substeps);
    }

    struct SlabStats {
        double ball = 0, dphi = 0, amax = 0, gmax = 0, imag = 0;
        std::array<double, 3> worst{};
        bool bad_coeff = false;
        std::array<double, 3> bad_x{};
    };
    std::vector<SlabStats> stats(n);
    const cplx I(0, 1);

    detail::for_slabs(n, [&](int i3) {
        SlabStats& st = stats[i3];
        std::vector<cplx> a(nk);
        for (int i2 = 0; i2 < n; ++i2)
            for (int i1 = 0; i1 < n; ++i1) {
                std::size_t p = g.idx(i1, i2, i3);
                double x[3] = {g.x(i1), g.x(i2), g.x(i3)}, X[3], J[3][3];
                F.point(x, X, J);
                double d[3] = {X[0] - x[0], X[1] - x[1], X[2] - x[2]};

                double M[6], dM[6][3];
                sd.M->eval(X, M, dM);
                double Rc[6] = {rho - M[0], -M[1], -M[2], rho - M[3], -M[4], rho - M[5]};
                double dR[6][3];
                for (int c = 0; c < 6; ++c)
                    for (int j = 0; j < 3; ++j) dR[c][j] = -(dM[c][0] * J[0][j] + dM[c][1] * J[1][j] + dM[c][2] * J[2][j]);

                // |R/ρ − Id| = |M|/ρ; Frobenius bounds the operator norm from above
                double fro = std::sqrt(M[0] * M[0] + M[3] * M[3] + M[5] * M[5] + 2 * (M[1] * M[1] + M[2] * M[2] + M[4] * M[4]));
                if (fro / rho > st.ball) {
                    Mat3 E;
                    E << M[0], M[1], M[2], M[1], M[3], M[4], M[2], M[4], M[5];
                    double r = op_norm(E) / rho;
                    if (r > st.ball) {
                        st.ball = r;
                        st.worst = {x[0], x[1], x[2]};
                    }
                }
                double JmI[3][3], jf = 0;
                for (int a2 = 0; a2 < 3; ++a2)
                    for (int b = 0; b < 3; ++b) {
                        JmI[a2][b] = J[a2][b] - (a2 == b);
                        jf += JmI[a2][b] * JmI[a2][b];
                    }
                if (std::sqrt(jf) > st.dphi) st.dphi = std::max(st.dphi, detail::spectral_norm3(JmI));

                double vl[3] = {v_ell[0][p], v_ell[1][p], v_ell[2][p]};
                double Pt[3];  // ∂_tΦ = −DΦ v_ℓ
                for (int a2 = 0; a2 < 3; ++a2) Pt[a2] = -(J[a2][0] * vl[0] + J[a2][1] * vl[1] + J[a2][2] * vl[2]);

                cplx psi[3] = {}, dpsi[3] = {}, wo[3] = {}, wc[3] = {};
                for (std::size_t m = 0; m < nk; ++m) {
                    const auto& G = K.G[m];
                    double c = 0;
                    for (int j = 0; j < 6; ++j) c += G[j] * Rc[j];
                    if (!(c > 0)) {
                        st.bad_coeff = true;
                        st.bad_x = {x[0], x[1], x[2]};
                        continue;
                    }
                    double am = std::sqrt(c), ga[3];
                    for (int j = 0; j < 3; ++j) {
                        double s = 0;
                        for (int q = 0; q < 6; ++q) s += G[q] * dR[q][j];
                        ga[j] = s / (2 * am);
                    }
                    st.amax = std::max(st.amax, am);
                    st.gmax = std::max(st.gmax, std::sqrt(ga[0] * ga[0] + ga[1] * ga[1] + ga[2] * ga[2]));
                    const auto& k = K.k[m];
                    long ip = std::lround(lam * (k[0] * i1 + k[1] * i2 + k[2] * i3));
                    ip = ((ip % n) + n) % n;
                    double th = lam * (k[0] * d[0] + k[1] * d[1] + k[2] * d[2]);
                    cplx e = phase_[ip] * cplx(std::cos(th), std::sin(th));
                    const auto& U = K.U[m];
                    const auto& B = K.B[m];
                    cplx pf = (I / lam) * chi * am * e;
                    for (int a2 = 0; a2 < 3; ++a2) {
                        psi[a2] += pf * U[a2];
                        wo[a2] += chi * am * e * B[a2];
                    }
                    if (o.stress) {
                        double at = -(vl[0] * ga[0] + vl[1] * ga[1] + vl[2] * ga[2]);
                        double kPt = k[0] * Pt[0] + k[1] * Pt[1] + k[2] * Pt[2];
                        cplx f = (I / lam) * e * (dchi * am + chi * (at + I * lam * am * kPt));
                        for (int a2 = 0; a2 < 3; ++a2) dpsi[a2] += f * U[a2];
                    }
                    if (o.corrector_formula) {
                        // ((i/λ)∇a − a(DΦᵀ − Id)k) × U e^{iλk·Φ}
                        cplx L[3];
                        for (int j = 0; j < 3; ++j) {
                            double tk = J[0][j] * k[0] + J[1][j] * k[1] + J[2][j] * k[2] - k[j];
                            L[j] = (I / lam) * ga[j] - am * tk;
                        }
                        cplx cr[3] = {L[1] * U[2] - L[2] * U[1], L[2] * U[0] - L[0] * U[2], L[0] * U[1] - L[1] * U[0]};
                        for (int a2 = 0; a2 < 3; ++a2) wc[a2] += chi * cr[a2] * e;
                    }
                }
                for (int a2 = 0; a2 < 3; ++a2) {
                    acc.Psi[a2][p] += psi[a2].real();
                    acc.w_o[a2][p] += wo[a2].real();
                    st.imag = std::max({st.imag, std::abs(psi[a2].imag()), std::abs(wo[a2].imag())});
                    if (o.stress) {
                        acc.dPsi[a2][p] += dpsi[a2].real();
                        st.imag = std::max(st.imag, std::abs(dpsi[a2].imag()));
                    }
                    if (o.corrector_formula) acc.wc[a2][p] += wc[a2].real();
                }
                if (o.stress)
                    for (int c = 0; c < 6; ++c) acc.chiM[c][p] += chi * chi * M[c];
            }
    });

    for (auto& st : stats) {
        if (st.bad_coeff) throw BallViolation(P_.stage, l, l / cut_.mu, st.bad_x, std::numeric_limits<double>::infinity(), r0_);
        if (st.ball > rep.ball_radius) {
            rep.ball_radius = st.ball;
            rep.worst_x = st.worst;
        }
        rep.dphi_dev = std::max(rep.dphi_dev, st.dphi);
        rep.a_max = std::max(rep.a_max, st.amax);
        rep.a_grad_max = std::max(rep.a_grad_max, st.gmax);
        imag = std::max(imag, st.imag);
    }
    if (!(rep.ball_radius < r0_)) throw BallViolation(P_.stage, l, l / cut_.mu, rep.worst_x, rep.ball_radius, r0_);
    if (!(rep.dphi_dev < 0.2))
        throw std::runtime_error("|DPhi - Id| = " + std::to_string(rep.dphi_dev) + " on slice " + std::to_string(l));
}

inline std::shared_ptr<const StageSnapshot> StageEvaluator::compute(double t, SnapshotOptions o) const {
    const Grid& g = prev_.grid;
    auto S = std::make_shared<StageSnapshot>();
    S->t = t;
    S->opts = o;
    auto v = prev_.v.get(t);
    S->v_ell = inverse<3>(g, mollified_coeffs(*v, sym_));

    Accum acc;
    acc.Psi = VectorField(g);
    acc.w_o = VectorField(g);
    if (o.stress) {
        acc.dPsi = VectorField(g);
        acc.chiM = TensorField(g);
    }
    if (o.corrector_formula) acc.wc = VectorField(g);

    double chi2rho = 0;
    for (int l : cut_.active(t)) {
        SliceReport rep;
        rep.l = l;
        rep.chi = cut_.chi(l, t);
        rep.dchi = cut_.dchi(l, t);
        S->chi2_sum += rep.chi * rep.chi;
        auto sd = slice(l);
        rep.rho = sd->rho;
        if (sd->rho > 0) {
            accumulate_slice(t, *sd, rep.chi, rep.dchi, S->v_ell, o, acc, rep, S->imag_residue);
            chi2rho += rep.chi * rep.chi * sd->rho;
        }
        S->slices.push_back(rep);
    }

    S->w = curl(acc.Psi);
    S->w_o = std::move(acc.w_o);
    S->w_c = S->w - S->w_o;
    S->v = *v + S->w;
    S->p = new_pressure(*prev_.p.get(t), S->w_o, S->w_c, *v, S->v_ell);
    if (o.corrector_formula) S->w_c_formula = std::move(acc.wc);
    if (!o.stress) return S;

    // Σχ_l²R_{ℓ,l} = Σχ_l²ρ_l Id − Σχ_l² M_l(Φ_l)
    S->chi_R = identity_tensor(g, chi2rho) - acc.chiM;
    S->dwdt = curl(acc.dPsi);
    acc.Psi = acc.dPsi = VectorField();

    auto keep = [&](int i, TensorField&& T, TensorField& sum) {
        S->component_sup[i] = sup_norm(T);
        if (i == 0) sum = T;
        else sum += T;
        if (o.components) S->components.push_back(std::move(T));
    };
    TensorField sum;
    const VectorField& w = S->w;
    const VectorField& vl = S->v_ell;
    {
        // R⁰ = ℛ(∂_t w + v_ℓ·∇w + w·∇v_ℓ)
        auto Jw = jacobian(w);
        auto Jv = jacobian(vl);
        VectorField X = S->dwdt;
        for (int c = 0; c < 3; ++c)
            for (std::size_t p = 0; p < g.size(); ++p)
                for (int j = 0; j < 3; ++j) X[c][p] += vl[j][p] * Jw[c][j][p] + w[j][p] * Jv[c][j][p];
        keep(0, inverse_divergence(X), sum);
    }
    {
        // R¹ = ℛ div(w_o⊗w_o − Σχ²R_{ℓ,l} − |w_o|²/2 Id)
        TensorField T = outer(S->w_o) - S->chi_R;
        for (std::size_t p = 0; p < g.size(); ++p) {
            double h = 0.5 * (S->w_o[0][p] * S->w_o[0][p] + S->w_o[1][p] * S->w_o[1][p] + S->w_o[2][p] * S->w_o[2][p]);
            T[0][p] -= h;
            T[3][p] -= h;
            T[5][p] -= h;
        }
        keep(1, inverse_divergence(divergence(T)), sum);
    }
    {
        const VectorField &wo = S->w_o, &wc = S->w_c;
        TensorField T = sym_outer(wo, wc) + outer(wc);
        for (std::size_t p = 0; p < g.size(); ++p) {
            double cc = 0, oc = 0;
            for (int a = 0; a < 3; ++a) {
                cc += wc[a][p] * wc[a][p];
                oc += wo[a][p] * wc[a][p];
            }
            double s = (cc + 2 * oc) / 3;
            T[0][p] -= s;
            T[3][p] -= s;
            T[5][p] -= s;
        }
        keep(2, std::move(T), sum);
    }
    {
        VectorField u = *v - vl;
        TensorField T = sym_outer(w, u);
        for (std::size_t p = 0; p < g.size(); ++p) {
            double s = 2 * (u[0][p] * w[0][p] + u[1][p] * w[1][p] + u[2][p] * w[2][p]) / 3;
            T[0][p] -= s;
            T[3][p] -= s;
            T[5][p] -= s;
        }
        keep(3, std::move(T), sum);
    }
    auto R = prev_.R.get(t);
    TensorField Rm = inverse<6>(g, mollified_coeffs(*R, sym_));
    keep(4, *R - Rm, sum);
    // R̊_{ℓ,l} = R_{ℓ,l} − ρ_l Id = −M_l(Φ_l)
    keep(5, S->chi2_sum * Rm - acc.chiM, sum);
    S->trace_residue = max_abs_trace(sum);
    remove_trace(sum);
    S->R = std::move(sum);
    return S;
}

inline EulerReynoldsTriple iterate(const EulerReynoldsTriple& prev, const StageParams& P, const FrequencyFamily& fe,
                                   const FrequencyFamily& fo) {
    auto ev = std::make_shared<StageEvaluator>(prev, P, fe, fo);
    if (ev->support_lo() < -0.5 || ev->support_hi() > 0.5)
        throw SupportOverflow("stage " + std::to_string(P.stage) + " support [" + std::to_string(ev->support_lo()) + ", " +
                              std::to_string(ev->support_hi()) + "] leaves [-1/2, 1/2]");
    const Grid& g = prev.grid;
    EulerReynoldsTriple T;
    T.grid = g;
    T.stage = P.stage;
    T.lambda = P.lambda;
    T.support_lo = ev->support_lo();
    T.support_hi = ev->support_hi();
    SnapshotOptions kin{false, false, false};
    T.v = TimeField<VectorField>(g, T.support_lo, T.support_hi, [ev, kin](double t) { return ev->at(t, kin)->v; }, 0);
    T.p = TimeField<ScalarField>(g, T.support_lo, T.support_hi, [ev, kin](double t) { return ev->at(t, kin)->p; }, 0);
    T.R = TimeField<TensorField>(g, T.support_lo, T.support_hi, [ev](double t) { return ev->at(t)->R; }, 0);
    if (prev.dv_dt) {
        auto prev_dvdt = prev.dv_dt;
        T.dv_dt = [ev, prev_dvdt](double t) { return prev_dvdt(t) + ev->at(t)->dwdt; };
    }
    T.step = ev;
    return T;
}

// relative gap between the analytic ∂_t w and its centered difference
inline double omega_fd_gap(const StageEvaluator& ev, double t, double dt = 1e-5) {
    SnapshotOptions kin{false, false, false};
    auto c = ev.at(t);
    auto a = ev.at(t + dt, kin), b = ev.at(t - dt, kin);
    VectorField fd = (1.0 / (2 * dt)) * (a->w - b->w);
    double scale = sup_norm(c->dwdt);
    return scale == 0 ? max_abs(fd) : sup_norm(fd - c->dwdt) / scale;
}

}  // namespace cilab
