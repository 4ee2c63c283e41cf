#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace cilab {

// One inequality LHS ≤ RHS evaluated in natural-log space; slack = ln RHS − ln LHS.
struct LedgerRow {
    std::string name;
    int q = -1;  // −1: not stage-indexed
    double ln_lhs = 0, ln_rhs = 0;
    bool gate = false;  // participates in the seed acceptance decision
    double slack() const { return ln_rhs - ln_lhs; }
    bool pass() const { return ln_lhs <= ln_rhs; }
};

struct Ledger {
    std::vector<LedgerRow> rows;
    std::vector<std::string> not_checked;

    bool all_pass() const {
        return std::all_of(rows.begin(), rows.end(), [](auto& r) { return r.pass(); });
    }
    bool gate_pass() const {
        return std::all_of(rows.begin(), rows.end(), [](auto& r) { return !r.gate || r.pass(); });
    }
    const LedgerRow* first_gate_failure() const {
        for (auto& r : rows)
            if (r.gate && !r.pass()) return &r;
        return nullptr;
    }
};

inline double logsumexp(double a, double b) {
    if (a == -INFINITY) return b;
    if (b == -INFINITY) return a;
    double m = std::max(a, b);
    return m + std::log1p(std::exp(std::min(a, b) - m));
}

class SeedTooSmall : public std::runtime_error {
public:
    explicit SeedTooSmall(const std::string& m) : std::runtime_error(m) {}
};

// λ_q = floor(λ₀^{α^q}), δ_q = λ_q^{−2/5+2ε₀}, μ_j (step j−1 → j), ℓ_q = λ_{q+1}^{−1+ε₁}.
class ParameterSchedule {
public:
    double eps0 = 0.05, alpha = 1.05, eps1 = 0.05 * 0.05 / 18, lambda0 = 4, C0 = 1, d = 0;
    int Q = 1;

    ParameterSchedule() = default;
    ParameterSchedule(double eps0_, double lambda0_, int Q_, double C0_ = 1.0)
        : eps0(eps0_), alpha(1 + eps0_), eps1(eps0_ * eps0_ / 18), lambda0(std::floor(lambda0_)), C0(C0_), Q(Q_) {
        if (!(eps0 > 0 && eps0 <= 0.1)) throw std::invalid_argument("eps0 must lie in (0, 0.1]");
        if (!(lambda0 >= 2)) throw std::invalid_argument("lambda0 must be at least 2");
        if (Q < 0 || Q > 12) throw std::invalid_argument("stage count must lie in [0, 12]");
        if (!(C0 >= 1)) throw std::invalid_argument("C0 must be at least 1");
        for (int q = 0; q <= Q + 2; ++q) {
            lnlam_.push_back(compute_lnlam(q));
            lam_.push_back(lambda_exact(q) ? exact_lambda(q) : std::exp(lnlam_.back()));
        }
    }

    double beta() const { return 0.4 - 2 * eps0; }  // δ_q = λ_q^{−β}

    // exact integer λ_q while it fits in the mantissa of a long double
    bool lambda_exact(int q) const { return std::pow(alpha, q) * std::log(lambda0) < 62 * std::numbers::ln2; }
    double lambda_int(int q) const { return lambda(q); }

    double ln_lambda(int q) const { return q < int(lnlam_.size()) ? lnlam_[q] : compute_lnlam(q); }
    double ln_delta(int q) const { return -beta() * ln_lambda(q); }
    double ln_mu(int j) const {
        if (j < 1) return std::nan("");
        return 0.25 * (ln_delta(j - 1) + ln_delta(j)) + 0.5 * (ln_lambda(j - 1) + ln_lambda(j));
    }
    double ln_ell(int q) const { return (-1 + eps1) * ln_lambda(q + 1); }

    double lambda(int q) const {
        if (q >= 0 && q < int(lam_.size())) return lam_[q];
        return lambda_exact(q) ? exact_lambda(q) : std::exp(ln_lambda(q));
    }
    double delta(int q) const { return std::exp(ln_delta(q)); }
    double mu(int j) const { return std::exp(ln_mu(j)); }
    double ell(int q) const { return std::exp(ln_ell(q)); }

    // d_min from the cover threshold
    double d_min() const {
        double a = (1 + alpha) * (-0.2 + eps0 + 1);
        return a / (a + 2 * alpha * eps1);
    }

private:
    std::vector<double> lnlam_, lam_;

    double exact_lambda(int q) const {
        long double a = 1;
        for (int i = 0; i < q; ++i) a *= (long double)alpha;
        return double(std::floor(std::exp(a * std::log((long double)lambda0))));
    }

    double compute_lnlam(int q) const {
        double x = std::pow(alpha, q) * std::log(lambda0);
        if (x < 62 * std::numbers::ln2) {
            long double a = 1;
            for (int i = 0; i < q; ++i) a *= (long double)alpha;
            long double v = std::floor(std::exp(a * std::log((long double)lambda0)));
            return double(std::log(v));
        }
        return x;  // ln floor(y) = ln y − O(1/y), below double resolution here
    }
};

inline Ledger check_global_inequalities(const ParameterSchedule& s, int Q, bool gate_only = false) {
    Ledger L;
    const double ln2 = std::numbers::ln2;
    double sum23 = -INFINITY, sumdl = -INFINITY;
    for (int q = 0; q <= Q; ++q) {
        double l = s.ln_lambda(q), l1 = s.ln_lambda(q + 1), dq = s.ln_delta(q), d1 = s.ln_delta(q + 1);
        double mu = s.ln_mu(q + 1), ell = s.ln_ell(q);
        double x0 = std::pow(s.alpha, q) * std::log(s.lambda0);
        if (!gate_only) {
            L.rows.push_back({"lambda_lower", q, x0 - ln2, l, false});
            L.rows.push_back({"lambda_upper", q, l, x0 + ln2, false});
            if (q >= 1) L.rows.push_back({"sum_lambda_2_3", q, sum23, 2.0 / 3.0 * l, false});
            L.rows.push_back({"delta_decreasing", q, d1, std::nextafter(dq, -INFINITY), false});
        }
        if (q >= 1) L.rows.push_back({"sum_delta_lambda", q, sumdl, dq + l, true});
        L.rows.push_back({"delta_lambda_ell", q, 0.5 * dq + l + ell - 0.5 * d1, 0.0, true});
        L.rows.push_back({"delta_lambda_mu", q, 0.5 * dq + l - mu, -s.eps1 * l1, true});
        L.rows.push_back({"lambda_delta_mu", q, -l1, 0.5 * d1 - mu, true});
        L.rows.push_back({"mu_lower", q, (q + 3) * ln2, mu, true});
        sum23 = logsumexp(sum23, 2.0 / 3.0 * l);
        sumdl = logsumexp(sumdl, dq + l);
    }
    if (gate_only) return L;
    // Σ_{j≥1} λ_j^{−1/5+ε₀} ≤ λ₀^{−1/5+ε₀}/4 ≤ 1/8, summed until the terms are negligible
    double e = -0.2 + s.eps0, tail = -INFINITY;
    for (int j = 1; j < 20000; ++j) {
        double t = e * s.ln_lambda(j);
        tail = logsumexp(tail, t);
        if (t < tail - 40) break;
    }
    L.rows.push_back({"sum_lambda_neg", -1, tail, e * s.ln_lambda(0) - 2 * ln2, false});
    L.rows.push_back({"lambda0_quarter", -1, e * s.ln_lambda(0) - 2 * ln2, -3 * ln2, false});
    return L;
}

// Validated schedule: SeedTooSmall names the first failing gate inequality.
inline ParameterSchedule make_schedule(double eps0, double lambda0, int Q, double C0 = 1.0, bool enforce = true) {
    ParameterSchedule s(eps0, lambda0, Q, C0);
    if (enforce) {
        auto L = check_global_inequalities(s, Q);
        if (auto* r = L.first_gate_failure())
            throw SeedTooSmall("lambda0 = " + std::to_string(s.lambda0) + " fails " + r->name + " at q = " + std::to_string(r->q));
    }
    return s;
}

// same decision as check_global_inequalities(s, Q, true).gate_pass(), without building rows
inline bool gate_holds(const ParameterSchedule& s, int Q) {
    double sumdl = -INFINITY;
    for (int q = 0; q <= Q; ++q) {
        double l = s.ln_lambda(q), l1 = s.ln_lambda(q + 1), dq = s.ln_delta(q), d1 = s.ln_delta(q + 1);
        double mu = s.ln_mu(q + 1);
        if (q >= 1 && sumdl > dq + l) return false;
        if (0.5 * dq + l + s.ln_ell(q) - 0.5 * d1 > 0) return false;
        if (0.5 * dq + l - mu > -s.eps1 * l1) return false;
        if (-l1 > 0.5 * d1 - mu) return false;
        if ((q + 3) * std::numbers::ln2 > mu) return false;
        sumdl = logsumexp(sumdl, dq + l);
    }
    return true;
}

// Smallest passing integer λ₀ on the grid floor(2^{j/256}) up to max, then refined over the
// integers between it and the previous grid point.
inline std::optional<double> seed_search(double eps0, int Q, double max_lambda0 = 1 << 20) {
    double prev = 1;
    for (int j = 256;; ++j) {
        double l0 = std::floor(std::exp2(j / 256.0));
        if (l0 > max_lambda0) break;
        if (l0 == prev) continue;
        if (gate_holds(ParameterSchedule(eps0, l0, Q), Q)) {
            for (double c = prev + 1; c < l0; c += 1)
                if (gate_holds(ParameterSchedule(eps0, c, Q), Q)) return c;
            return l0;
        }
        prev = l0;
    }
    return std::nullopt;
}

// ---- bad sets -------------------------------------------------------------

enum class Membership { In, Out, UnknownTail };

inline const char* to_string(Membership m) {
    return m == Membership::In ? "in" : (m == Membership::Out ? "out" : "unknown-tail");
}

struct Interval {
    double lo, hi;
};

// U^(q) = ⋃_{l ∈ [−μ_q, μ_q]} [μ_q⁻¹(l+½−r), μ_q⁻¹(l+½+r)], r = λ_q^{−ε₁}; U^(0) is empty.
struct BadSet {
    int q = 0;
    double mu = 0, radius = 0;
    bool enumerated = false;
    std::vector<Interval> intervals;

    double total_length() const {
        double s = 0;
        for (auto& I : intervals) s += I.hi - I.lo;
        return s;
    }

    // exact interval membership needs μt to carry its fractional part
    Membership contains(double t) const {
        if (q == 0) return Membership::Out;
        if (!(mu < 1e12)) return Membership::UnknownTail;
        double lmin = std::ceil(-mu), lmax = std::floor(mu);
        double x = mu * t;
        double lc = std::round(x - 0.5);
        for (double l = lc - 1; l <= lc + 1; l += 1) {
            if (l < lmin || l > lmax) continue;
            if (std::abs(x - (l + 0.5)) <= radius) return Membership::In;
        }
        return Membership::Out;
    }
};

inline BadSet bad_set(const ParameterSchedule& s, int q, double enumerate_limit = 1e6) {
    BadSet B;
    B.q = q;
    if (q == 0) return B;
    B.mu = s.mu(q);
    B.radius = std::exp(-s.eps1 * s.ln_lambda(q));
    if (B.mu <= enumerate_limit) {
        B.enumerated = true;
        for (double l = std::ceil(-B.mu); l <= std::floor(B.mu); l += 1)
            B.intervals.push_back({(l + 0.5 - B.radius) / B.mu, (l + 0.5 + B.radius) / B.mu});
    }
    return B;
}

inline std::vector<BadSet> bad_sets(const ParameterSchedule& s, int q_max) {
    std::vector<BadSet> out;
    for (int q = 1; q <= q_max; ++q) out.push_back(bad_set(s, q));
    return out;
}

// t ∈ V^(q) = ⋃_{q' ≥ q} U^(q'), deciding q' ≤ q_max explicitly. Beyond q_max only one
// conclusion is safe: when U^(q_max+1) has radius ≥ ½ its intervals touch and cover
// [μ⁻¹(⌈−μ⌉+½−r), μ⁻¹(⌊μ⌋+½+r)], so t inside that hull is in.
inline Membership in_V(const ParameterSchedule& s, int q, double t, int q_max) {
    bool unknown = false;
    for (int qq = std::max(q, 1); qq <= q_max; ++qq) {
        auto m = bad_set(s, qq, 0).contains(t);
        if (m == Membership::In) return Membership::In;
        if (m == Membership::UnknownTail) unknown = true;
    }
    auto next = bad_set(s, std::max(q_max + 1, 1), 0);
    if (next.radius >= 0.5 && std::isfinite(next.mu)) {
        double lo = (std::ceil(-next.mu) + 0.5 - next.radius) / next.mu;
        double hi = (std::floor(next.mu) + 0.5 + next.radius) / next.mu;
        if (t >= lo && t <= hi) return Membership::In;
    }
    (void)unknown;
    return Membership::UnknownTail;
}

// ---- localized schedule ---------------------------------------------------

struct LocalizedSchedule {
    double t0 = 0;
    int N = -1;  // −1: t₀ in every V^(N) as far as decidable, δ_{q,t₀} = δ_q
    std::vector<double> ln_delta;  // q = 0 .. horizon
    int floor_entry = -1;           // first q from which δ_{q,t₀} sits on the floor
    int N_prime() const { return (N < 0 || floor_entry < 0) ? -1 : floor_entry - N; }
    std::vector<LedgerRow> ratio_checks;  // δ_{q+1,t₀}λ_{q+1} / (δ_{q,t₀}λ_q) ≥ λ_q^{ε₀/3}
    bool ratio_ok() const {
        return std::all_of(ratio_checks.begin(), ratio_checks.end(), [](auto& r) { return r.pass(); });
    }
};

inline double ln_floor_delta(const ParameterSchedule& s, int q) { return (-2.0 / 3.0 + 2 * s.eps0) * s.ln_lambda(q); }

// Recursion for a given N (smallest index with t₀ ∉ V^(N)).
inline LocalizedSchedule localized_from_N(const ParameterSchedule& s, int N, int horizon) {
    LocalizedSchedule L;
    L.N = N;
    L.ln_delta.resize(horizon + 1);
    L.ln_delta[0] = s.ln_delta(0);
    for (int q = 0; q < horizon; ++q) {
        if (N < 0 || q <= N) L.ln_delta[q + 1] = s.ln_delta(q + 1);
        else
            L.ln_delta[q + 1] = std::max(-s.eps0 * s.eps0 / 9 * s.ln_lambda(q) + s.alpha * L.ln_delta[q], ln_floor_delta(s, q + 1));
    }
    if (N >= 0) {
        for (int q = horizon; q >= 0; --q) {
            if (std::abs(L.ln_delta[q] - ln_floor_delta(s, q)) > 1e-12 * std::abs(ln_floor_delta(s, q))) break;
            L.floor_entry = q;
        }
        for (int q = N + 1; q < horizon; ++q)
            L.ratio_checks.push_back({"localized_ratio", q, s.eps0 / 3 * s.ln_lambda(q),
                                      L.ln_delta[q + 1] + s.ln_lambda(q + 1) - L.ln_delta[q] - s.ln_lambda(q), false});
    }
    return L;
}

// δ_{q,t₀} − floor shrinks like α^q((4/15)lnλ₀ − q ε₀² lnλ₀/(9α)), so the floor is reached
// roughly 2.4α/ε₀² stages after N
inline int localized_horizon(const ParameterSchedule& s, int N, int Q) {
    return std::max(Q + 2, std::max(N, 0) + int(std::ceil(3 * s.alpha / (s.eps0 * s.eps0))) + 10);
}

inline LocalizedSchedule localized_delta(const ParameterSchedule& s, double t0, int Q, int q_max = -1) {
    if (!(t0 > -1 && t0 < 1)) throw std::invalid_argument("t0 must lie in (-1, 1)");
    if (q_max < 0) q_max = Q + 1;
    int N = -1;
    for (int n = 0; n <= q_max; ++n)
        if (in_V(s, n, t0, q_max) == Membership::Out) {
            N = n;
            break;
        }
    auto L = localized_from_N(s, N, localized_horizon(s, N, Q));
    L.t0 = t0;
    return L;
}

inline Ledger check_localized_inequalities(const ParameterSchedule& s, const LocalizedSchedule& loc, int Q) {
    Ledger L;
    double sum = -INFINITY;
    for (int q = 0; q <= Q; ++q) {
        double l = s.ln_lambda(q), l1 = s.ln_lambda(q + 1), dq = loc.ln_delta[q], d1 = loc.ln_delta[q + 1];
        if (q >= 1) L.rows.push_back({"loc_sum_delta_lambda", q, sum, dq + l, true});
        L.rows.push_back({"loc_delta_lambda_ell", q, 0.5 * dq + l + s.ln_ell(q) - 0.5 * d1, 0.0, true});
        L.rows.push_back({"loc_delta_lambda_mu", q, 0.5 * dq + l - s.ln_mu(q + 1), -s.eps1 * l1, true});
        sum = logsumexp(sum, dq + l);
    }
    L.not_checked.push_back("1/lambda_{q+1} <= delta_{q+1,t0}^{1/2}/mu");
    return L;
}

// ---- Hausdorff cover ------------------------------------------------------

struct CoverSum {
    double ln_value = -INFINITY;  // ln of 3Σ_{q' ≥ q} λ_{q'}^{−dε₁} μ_{q'}^{1−d}
    bool diverges = false;
    int terms = 0;
    double value() const { return std::exp(ln_value); }
};

inline CoverSum hausdorff_cover(const ParameterSchedule& s, int q, double d) {
    if (!(d > 0 && d < 1)) throw std::invalid_argument("d must lie in (0, 1)");
    CoverSum c;
    if (d <= s.d_min()) {
        c.diverges = true;
        c.ln_value = INFINITY;
        return c;
    }
    double acc = -INFINITY;
    for (int j = std::max(q, 1); j < 100000; ++j) {
        double t = -d * s.eps1 * s.ln_lambda(j) + (1 - d) * s.ln_mu(j);
        if (!std::isfinite(t)) break;
        acc = logsumexp(acc, t);
        ++c.terms;
        // terms shrink double-exponentially once negative; stop when they no longer register
        if (t < acc - 40) break;
    }
    c.ln_value = std::log(3.0) + acc;
    return c;
}

}  // namespace cilab
