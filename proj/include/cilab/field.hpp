#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "grid.hpp"
#include "symmat.hpp"

namespace cilab {

// symmetric 3x3 storage: 00 01 02 11 12 22
constexpr int sym_index(int i, int j) {
    if (i > j) std::swap(i, j);
    return i == 0 ? j : (i == 1 ? 2 + j : 5);
}

template <int C>
struct Field {
    static constexpr int components = C;
    Grid grid;
    std::array<std::vector<double>, C> data;

    Field() = default;
    explicit Field(const Grid& g) : grid(g) {
        for (auto& d : data) d.assign(g.size(), 0.0);
    }

    std::vector<double>& operator[](int c) { return data[c]; }
    const std::vector<double>& operator[](int c) const { return data[c]; }
    std::size_t size() const { return grid.size(); }

    // tensor accessor (C == 6 only)
    double at(int i, int j, std::size_t p) const { return data[sym_index(i, j)][p]; }

    Field& operator+=(const Field& o) {
        check_same(o);
        for (int c = 0; c < C; ++c)
            for (std::size_t p = 0; p < size(); ++p) data[c][p] += o.data[c][p];
        return *this;
    }
    Field& operator-=(const Field& o) {
        check_same(o);
        for (int c = 0; c < C; ++c)
            for (std::size_t p = 0; p < size(); ++p) data[c][p] -= o.data[c][p];
        return *this;
    }
    Field& operator*=(double s) {
        for (auto& d : data)
            for (auto& x : d) x *= s;
        return *this;
    }
    friend Field operator+(Field a, const Field& b) { return a += b; }
    friend Field operator-(Field a, const Field& b) { return a -= b; }
    friend Field operator*(double s, Field a) { return a *= s; }
    friend Field operator*(Field a, double s) { return a *= s; }
    Field operator-() const { return (*this) * -1.0; }

    void check_same(const Field& o) const {
        if (!(grid == o.grid)) throw std::invalid_argument("field grids differ");
    }

    bool finite() const {
        for (auto& d : data)
            for (double x : d)
                if (!std::isfinite(x)) return false;
        return true;
    }
};

using ScalarField = Field<1>;
using VectorField = Field<3>;
using TensorField = Field<6>;

template <int C>
Field<C> sample(const Grid& g, const std::function<std::array<double, C>(double, double, double)>& f) {
    Field<C> out(g);
    for (int k = 0; k < g.n; ++k)
        for (int j = 0; j < g.n; ++j)
            for (int i = 0; i < g.n; ++i) {
                auto v = f(g.x(i), g.x(j), g.x(k));
                std::size_t p = g.idx(i, j, k);
                for (int c = 0; c < C; ++c) out[c][p] = v[c];
            }
    return out;
}

inline ScalarField sample_scalar(const Grid& g, const std::function<double(double, double, double)>& f) {
    return sample<1>(g, [&](double a, double b, double c) { return std::array<double, 1>{f(a, b, c)}; });
}

inline VectorField sample_vector(const Grid& g, const std::function<std::array<double, 3>(double, double, double)>& f) {
    return sample<3>(g, f);
}

template <int C>
double mean(const Field<C>& f, int c = 0) {
    long double s = 0;
    for (double x : f[c]) s += x;
    return double(s / f.size());
}

template <int C>
double max_abs(const Field<C>& f) {
    double m = 0;
    for (auto& d : f.data)
        for (double x : d) m = std::max(m, std::abs(x));
    return m;
}

inline Mat3 sym_at(const Field<6>& T, std::size_t p) {
    Mat3 M;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) M(i, j) = T.at(i, j, p);
    return M;
}

inline void set_sym(Field<6>& T, std::size_t p, const Mat3& M) {
    for (int i = 0; i < 3; ++i)
        for (int j = i; j < 3; ++j) T[sym_index(i, j)][p] = 0.5 * (M(i, j) + M(j, i));
}

// pointwise magnitude: Euclidean for vectors, operator norm for tensors
template <int C>
double magnitude_at(const Field<C>& f, std::size_t p) {
    if constexpr (C == 6) {
        return op_norm(sym_at(f, p));
    } else {
        double s = 0;
        for (int c = 0; c < C; ++c) s += f[c][p] * f[c][p];
        return std::sqrt(s);
    }
}

inline double frobenius_at(const Field<6>& T, std::size_t p) {
    double d = T[0][p] * T[0][p] + T[3][p] * T[3][p] + T[5][p] * T[5][p];
    double o = T[1][p] * T[1][p] + T[2][p] * T[2][p] + T[4][p] * T[4][p];
    return std::sqrt(d + 2 * o);
}

template <int C>
double sup_norm(const Field<C>& f) {
    double m = 0;
    if constexpr (C == 6) {
        // the operator norm never exceeds the Frobenius norm: only candidates get an eigen-solve
        for (std::size_t p = 0; p < f.size(); ++p)
            if (frobenius_at(f, p) > m) m = std::max(m, magnitude_at(f, p));
    } else {
        for (std::size_t p = 0; p < f.size(); ++p) m = std::max(m, magnitude_at(f, p));
    }
    return m;
}

inline double trace_at(const TensorField& T, std::size_t p) { return T[0][p] + T[3][p] + T[5][p]; }

inline double max_abs_trace(const TensorField& T) {
    double m = 0;
    for (std::size_t p = 0; p < T.size(); ++p) m = std::max(m, std::abs(trace_at(T, p)));
    return m;
}

inline TensorField identity_tensor(const Grid& g, double s = 1.0) {
    TensorField T(g);
    for (int i = 0; i < 3; ++i) std::fill(T[sym_index(i, i)].begin(), T[sym_index(i, i)].end(), s);
    return T;
}

inline ScalarField dot(const VectorField& a, const VectorField& b) {
    ScalarField out(a.grid);
    for (std::size_t p = 0; p < a.size(); ++p) out[0][p] = a[0][p] * b[0][p] + a[1][p] * b[1][p] + a[2][p] * b[2][p];
    return out;
}

// a⊗b + b⊗a
inline TensorField sym_outer(const VectorField& a, const VectorField& b) {
    TensorField T(a.grid);
    for (int i = 0; i < 3; ++i)
        for (int j = i; j < 3; ++j) {
            auto& d = T[sym_index(i, j)];
            for (std::size_t p = 0; p < a.size(); ++p) d[p] = a[i][p] * b[j][p] + b[i][p] * a[j][p];
        }
    return T;
}

inline TensorField outer(const VectorField& a) {
    TensorField T(a.grid);
    for (int i = 0; i < 3; ++i)
        for (int j = i; j < 3; ++j) {
            auto& d = T[sym_index(i, j)];
            for (std::size_t p = 0; p < a.size(); ++p) d[p] = a[i][p] * a[j][p];
        }
    return T;
}

inline TensorField scalar_times_identity(const ScalarField& s) {
    TensorField T(s.grid);
    for (int i = 0; i < 3; ++i) T[sym_index(i, i)] = s[0];
    return T;
}

inline ScalarField multiply(const ScalarField& a, const ScalarField& b) {
    ScalarField out(a.grid);
    for (std::size_t p = 0; p < a.size(); ++p) out[0][p] = a[0][p] * b[0][p];
    return out;
}

template <int C>
Field<C> scale_by(const ScalarField& s, Field<C> f) {
    for (int c = 0; c < C; ++c)
        for (std::size_t p = 0; p < f.size(); ++p) f[c][p] *= s[0][p];
    return f;
}

template <int C>
double max_abs_diff(const Field<C>& a, const Field<C>& b) {
    double m = 0;
    for (int c = 0; c < C; ++c)
        for (std::size_t p = 0; p < a.size(); ++p) m = std::max(m, std::abs(a[c][p] - b[c][p]));
    return m;
}

// make a tensor exactly trace-free by removing a third of the trace
inline void remove_trace(TensorField& T) {
    for (std::size_t p = 0; p < T.size(); ++p) {
        double t = trace_at(T, p) / 3.0;
        T[0][p] -= t;
        T[3][p] -= t;
        T[5][p] -= t;
    }
}

}  // namespace cilab
