#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "field.hpp"
#include "symmat.hpp"

namespace cilab {

using cplx = std::complex<double>;
using IVec3 = std::array<int, 3>;
using CVec3 = std::array<cplx, 3>;

struct FrequencyFamily {
    char parity = 'e';
    int lambda_bar_sq = 5;
    std::vector<IVec3> members;
    std::vector<Vec3> A;
    double r0 = 0.0;
    // pseudo-inverse of c ↦ ½Σ c_k (Id − k̂⊗k̂), acting on the 6 entries of sym storage
    Eigen::Matrix<double, Eigen::Dynamic, 6> pinv;

    std::size_t size() const { return members.size(); }
    double lambda_bar() const { return std::sqrt(double(lambda_bar_sq)); }
    Vec3 khat(std::size_t i) const { return Vec3(members[i][0], members[i][1], members[i][2]).normalized(); }
    CVec3 B(std::size_t i) const {
        Vec3 c = khat(i).cross(A[i]);
        return {cplx(A[i][0], c[0]), cplx(A[i][1], c[1]), cplx(A[i][2], c[2])};
    }
    int index_of(const IVec3& k) const {
        for (std::size_t i = 0; i < members.size(); ++i)
            if (members[i] == k) return int(i);
        return -1;
    }
    int partner(std::size_t i) const { return index_of({-members[i][0], -members[i][1], -members[i][2]}); }
};

class FamilyError : public std::runtime_error {
public:
    FamilyError(std::string inv, const std::string& msg) : std::runtime_error(msg), invariant(std::move(inv)) {}
    std::string invariant;
};

class GammaError : public std::runtime_error {
public:
    enum Kind { OutOfBall, NegativeCoefficient };
    GammaError(Kind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
    Kind kind;
};

inline Mat3 projector_complement(const Vec3& khat) { return Mat3::Identity() - khat * khat.transpose(); }

// sym storage coordinates of a 3x3 symmetric matrix
inline Eigen::Matrix<double, 6, 1> sym_coords(const Mat3& M) {
    Eigen::Matrix<double, 6, 1> v;
    v << M(0, 0), M(0, 1), M(0, 2), M(1, 1), M(1, 2), M(2, 2);
    return v;
}

inline Mat3 from_sym_coords(const Eigen::Matrix<double, 6, 1>& v) {
    Mat3 M;
    M << v[0], v[1], v[2], v[1], v[3], v[4], v[2], v[4], v[5];
    return M;
}

namespace detail {

// The same A for k and −k: build it from the representative whose first nonzero entry is positive.
inline Vec3 polarization(const IVec3& k) {
    IVec3 r = k;
    for (int i = 0; i < 3; ++i)
        if (k[i] != 0) {
            if (k[i] < 0) r = {-k[0], -k[1], -k[2]};
            break;
        }
    Vec3 kv(r[0], r[1], r[2]);
    Vec3 ref = Vec3::UnitX();
    for (int i = 0; i < 3; ++i) {
        Vec3 e = Vec3::Unit(i);
        if (kv.cross(e).norm() > 1e-12) {
            ref = e;
            break;
        }
    }
    return kv.cross(ref).normalized() / std::sqrt(2.0);
}

inline Eigen::Matrix<double, 6, Eigen::Dynamic> span_map(const FrequencyFamily& f) {
    Eigen::Matrix<double, 6, Eigen::Dynamic> S(6, f.size());
    for (std::size_t i = 0; i < f.size(); ++i) S.col(i) = 0.5 * sym_coords(projector_complement(f.khat(i)));
    return S;
}

}  // namespace detail

// Coefficients c with R = ½Σ c_k (Id − k̂⊗k̂), minimum norm, symmetrized in ±k.
inline Eigen::VectorXd gamma_squared(const Mat3& R, const FrequencyFamily& f) {
    Eigen::VectorXd c = f.pinv * sym_coords(0.5 * (R + R.transpose()));
    Eigen::VectorXd s(c.size());
    for (std::size_t i = 0; i < f.size(); ++i) s[i] = 0.5 * (c[i] + c[f.partner(i)]);
    return s;
}

// Fixed quasi-random directions on the unit operator-norm sphere of symmetric matrices.
// They are taken among the extreme points Q·diag(±1,±1,±1)·Qᵀ of the unit ball, where every
// linear functional (and hence every c_k) attains its extremes: Q is a Halton-sampled
// rotation (Shoemake's quaternion map), the sign pattern cycles through the six mixed ones.
inline double halton(int i, int base) {
    double r = 0, f = 1.0 / base;
    for (int m = i; m > 0; m /= base, f /= base) r += f * (m % base);
    return r;
}

inline std::vector<Mat3> sphere_sample(int count = 500) {
    static const double patterns[6][3] = {{1, 1, -1}, {1, -1, 1}, {-1, 1, 1}, {1, -1, -1}, {-1, 1, -1}, {-1, -1, 1}};
    std::vector<Mat3> out;
    for (int i = 1; i <= count; ++i) {
        double u1 = halton(i, 2), u2 = halton(i, 3), u3 = halton(i, 5);
        Eigen::Quaterniond q(std::sqrt(u1) * std::cos(two_pi * u3), std::sqrt(1 - u1) * std::sin(two_pi * u2),
                             std::sqrt(1 - u1) * std::cos(two_pi * u2), std::sqrt(u1) * std::sin(two_pi * u3));
        Mat3 Q = q.normalized().toRotationMatrix();
        auto& d = patterns[i % 6];
        out.push_back(Q * Vec3(d[0], d[1], d[2]).asDiagonal() * Q.transpose());
    }
    return out;
}

inline double certify_r0(const FrequencyFamily& f) {
    auto dirs = sphere_sample();
    auto ok = [&](double r) {
        for (auto& E : dirs) {
            auto c = gamma_squared(Mat3::Identity() + r * E, f);
            if (c.minCoeff() <= 0) return false;
        }
        return true;
    };
    double lo = 0.0, hi = 4.0;
    if (ok(hi)) lo = hi;
    else
        for (int it = 0; it < 80; ++it) {
            double mid = 0.5 * (lo + hi);
            (ok(mid) ? lo : hi) = mid;
        }
    double r0 = 0.9 * lo;
    if (r0 < 1e-3) throw FamilyError("r0", "certified radius below 1e-3");
    return r0;
}

inline std::vector<std::string> family_violations(const FrequencyFamily& f) {
    std::vector<std::string> bad;
    if (f.A.size() != f.members.size()) {
        bad.push_back("polarization count");
        return bad;
    }
    for (std::size_t i = 0; i < f.size(); ++i) {
        auto& k = f.members[i];
        if (k[0] * k[0] + k[1] * k[1] + k[2] * k[2] != f.lambda_bar_sq) bad.push_back("common modulus");
        int j = f.partner(i);
        if (j < 0) {
            bad.push_back("symmetry k -> -k");
            continue;
        }
        Vec3 kv(k[0], k[1], k[2]);
        if (std::abs(f.A[i].dot(kv)) > 1e-12) bad.push_back("A_k . k = 0");
        if (std::abs(f.A[i].squaredNorm() - 0.5) > 1e-12) bad.push_back("|A_k| = 1/sqrt(2)");
        if ((f.A[i] - f.A[j]).norm() > 1e-12) bad.push_back("A_-k = A_k");
    }
    Mat3 iso = Mat3::Zero();
    for (std::size_t i = 0; i < f.size(); ++i) iso += f.khat(i) * f.khat(i).transpose();
    if ((iso - (double(f.size()) / 3.0) * Mat3::Identity()).norm() > 1e-12) bad.push_back("isotropy");
    Eigen::FullPivLU<Eigen::MatrixXd> lu(detail::span_map(f));
    if (lu.rank() < 6) bad.push_back("span");
    // dedupe, keep first-seen order
    std::vector<std::string> out;
    for (auto& s : bad)
        if (std::find(out.begin(), out.end(), s) == out.end()) out.push_back(s);
    return out;
}

inline void finalize_family(FrequencyFamily& f, bool certify = true) {
    auto bad = family_violations(f);
    if (!bad.empty()) throw FamilyError(bad.front(), "frequency family violates invariant: " + bad.front());
    Eigen::MatrixXd S = detail::span_map(f);
    f.pinv = S.completeOrthogonalDecomposition().pseudoInverse();
    if (certify) f.r0 = certify_r0(f);
}

// The 24 vectors of |k|² = 5 split by orientation: with the zero in slot z and the
// cyclic successors a = z+1, b = z+2, Λᵉ has |k_a| = 1 and Λᵒ has |k_a| = 2.
inline std::pair<FrequencyFamily, FrequencyFamily> build_families() {
    FrequencyFamily e, o;
    e.parity = 'e';
    o.parity = 'o';
    for (int z = 0; z < 3; ++z)
        for (int big = 1; big <= 2; ++big)
            for (int s1 : {1, -1})
                for (int s2 : {1, -1}) {
                    IVec3 k{0, 0, 0};
                    int a = (z + 1) % 3, b = (z + 2) % 3;
                    k[a] = s1 * (big == 1 ? 1 : 2);
                    k[b] = s2 * (big == 1 ? 2 : 1);
                    auto& f = big == 1 ? e : o;
                    f.members.push_back(k);
                    f.A.push_back(detail::polarization(k));
                }
    finalize_family(e);
    finalize_family(o);
    for (auto& k : e.members)
        if (o.index_of(k) >= 0) throw FamilyError("disjointness", "families overlap");
    return {e, o};
}

inline const std::pair<FrequencyFamily, FrequencyFamily>& standard_families() {
    static const auto fams = build_families();
    return fams;
}

inline Eigen::VectorXd gamma(const Mat3& R, const FrequencyFamily& f) {
    double dist = op_norm(R - Mat3::Identity());
    if (!(dist < f.r0))
        throw GammaError(GammaError::OutOfBall, "|R - Id| = " + std::to_string(dist) + " >= r0 = " + std::to_string(f.r0));
    Eigen::VectorXd c = gamma_squared(R, f);
    for (std::size_t i = 0; i < f.size(); ++i)
        if (c[i] <= 0) throw GammaError(GammaError::NegativeCoefficient, "non-positive coefficient inside the certified ball");
    return c.cwiseSqrt();
}

inline Mat3 beltrami_average(const std::vector<cplx>& a, const FrequencyFamily& f) {
    Mat3 M = Mat3::Zero();
    for (std::size_t i = 0; i < f.size(); ++i) M += 0.5 * std::norm(a[i]) * projector_complement(f.khat(i));
    return M;
}

inline void check_conjugate_symmetric(const std::vector<cplx>& a, const FrequencyFamily& f) {
    if (a.size() != f.size()) throw std::invalid_argument("amplitude count does not match family");
    double scale = 0;
    for (auto& z : a) scale = std::max(scale, std::abs(z));
    for (std::size_t i = 0; i < f.size(); ++i)
        if (std::abs(a[f.partner(i)] - std::conj(a[i])) > 1e-14 * std::max(scale, 1.0))
            throw std::invalid_argument("amplitudes are not conjugate-symmetric");
}

// W(x) = Σ a_k B_k e^{i λ_scale k·x}; *imag_residue receives the largest imaginary part
inline VectorField beltrami_field(const std::vector<cplx>& a, const FrequencyFamily& f, int lambda_scale, const Grid& g,
                                  double* imag_residue = nullptr) {
    check_conjugate_symmetric(a, f);
    if (lambda_scale < 1) throw std::invalid_argument("lambda_scale must be a positive integer");
    int kmax = 0;
    for (auto& k : f.members) kmax = std::max({kmax, std::abs(k[0]), std::abs(k[1]), std::abs(k[2])});
    if (lambda_scale * kmax >= g.n / 2) throw std::invalid_argument("Beltrami frequencies exceed grid capacity");
    VectorField W(g);
    std::vector<CVec3> aB(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) {
        auto B = f.B(i);
        for (int c = 0; c < 3; ++c) aB[i][c] = a[i] * B[c];
    }
    double res = 0;
    for (int i3 = 0; i3 < g.n; ++i3)
        for (int i2 = 0; i2 < g.n; ++i2)
            for (int i1 = 0; i1 < g.n; ++i1) {
                std::size_t p = g.idx(i1, i2, i3);
                CVec3 s{0.0, 0.0, 0.0};
                for (std::size_t m = 0; m < f.size(); ++m) {
                    auto& k = f.members[m];
                    // integer phase, reduced mod n so the exponential is exact on the lattice
                    long ph = (long(k[0]) * i1 + long(k[1]) * i2 + long(k[2]) * i3) * lambda_scale;
                    ph = ((ph % g.n) + g.n) % g.n;
                    cplx e = std::polar(1.0, two_pi * double(ph) / g.n);
                    for (int c = 0; c < 3; ++c) s[c] += aB[m][c] * e;
                }
                for (int c = 0; c < 3; ++c) {
                    W[c][p] = s[c].real();
                    res = std::max(res, std::abs(s[c].imag()));
                }
            }
    if (imag_residue) *imag_residue = res;
    return W;
}

inline nlohmann::json family_to_json(const FrequencyFamily& f) {
    nlohmann::json j;
    j["parity"] = std::string(1, f.parity);
    j["lambda_bar_sq"] = f.lambda_bar_sq;
    j["r0"] = f.r0;
    j["members"] = nlohmann::json::array();
    for (std::size_t i = 0; i < f.size(); ++i)
        j["members"].push_back({{"k", f.members[i]}, {"A", {f.A[i][0], f.A[i][1], f.A[i][2]}}});
    return j;
}

inline nlohmann::json families_to_json(const FrequencyFamily& e, const FrequencyFamily& o) {
    return {{"families", {family_to_json(e), family_to_json(o)}}};
}

// Loads a family as exported; invariants are re-verified and r0 re-certified.
inline FrequencyFamily family_from_json(const nlohmann::json& j) {
    FrequencyFamily f;
    f.parity = j.at("parity").get<std::string>().at(0);
    f.lambda_bar_sq = j.at("lambda_bar_sq").get<int>();
    for (auto& m : j.at("members")) {
        f.members.push_back(m.at("k").get<IVec3>());
        auto A = m.at("A").get<std::array<double, 3>>();
        f.A.emplace_back(A[0], A[1], A[2]);
    }
    finalize_family(f);
    return f;
}

}  // namespace cilab
