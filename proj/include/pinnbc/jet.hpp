#pragma once

#include <array>
#include <cmath>
#include <functional>

namespace pinnbc {

/// A 2D point (x, y). For the convection problem y plays the role of time.
struct Point {
    double x = 0.0;
    double y = 0.0;
};

inline Point operator+(Point a, Point b) { return {a.x + b.x, a.y + b.y}; }
inline Point operator-(Point a, Point b) { return {a.x - b.x, a.y - b.y}; }
inline Point operator*(double s, Point a) { return {s * a.x, s * a.y}; }
inline double dot(Point a, Point b) { return a.x * b.x + a.y * b.y; }
inline double norm(Point a) { return std::hypot(a.x, a.y); }

/// Second-order forward-mode number over two independent variables.
///
/// Carries a value, its gradient and the symmetric Hessian (xx, xy, yy).
/// Every smooth operation propagates all three by the chain rule, so any
/// generic function of (x, y) written against this type yields exact first and
/// second derivatives.
struct Jet2 {
    double v = 0.0;
    std::array<double, 2> g{0.0, 0.0};
    std::array<double, 3> h{0.0, 0.0, 0.0};  // xx, xy, yy

    Jet2() = default;
    Jet2(double value) : v(value) {}  // NOLINT: implicit constants are the point
    Jet2(double value, std::array<double, 2> grad, std::array<double, 3> hess)
        : v(value), g(grad), h(hess) {}

    static Jet2 variable_x(double x) { return {x, {1.0, 0.0}, {0.0, 0.0, 0.0}}; }
    static Jet2 variable_y(double y) { return {y, {0.0, 1.0}, {0.0, 0.0, 0.0}}; }

    double laplacian() const { return h[0] + h[2]; }

    Jet2& operator+=(const Jet2& o) {
        v += o.v;
        for (int i = 0; i < 2; ++i) g[i] += o.g[i];
        for (int i = 0; i < 3; ++i) h[i] += o.h[i];
        return *this;
    }
    Jet2& operator-=(const Jet2& o) {
        v -= o.v;
        for (int i = 0; i < 2; ++i) g[i] -= o.g[i];
        for (int i = 0; i < 3; ++i) h[i] -= o.h[i];
        return *this;
    }
    Jet2& operator*=(const Jet2& o);
    Jet2& operator/=(const Jet2& o);
};

/// Applies a scalar function with derivatives f(v), f'(v), f''(v).
inline Jet2 chain(const Jet2& a, double f0, double f1, double f2) {
    Jet2 r;
    r.v = f0;
    r.g = {f1 * a.g[0], f1 * a.g[1]};
    r.h = {f1 * a.h[0] + f2 * a.g[0] * a.g[0],
           f1 * a.h[1] + f2 * a.g[0] * a.g[1],
           f1 * a.h[2] + f2 * a.g[1] * a.g[1]};
    return r;
}

inline Jet2 operator-(const Jet2& a) {
    return {-a.v, {-a.g[0], -a.g[1]}, {-a.h[0], -a.h[1], -a.h[2]}};
}
inline Jet2 operator+(Jet2 a, const Jet2& b) { return a += b; }
inline Jet2 operator-(Jet2 a, const Jet2& b) { return a -= b; }

inline Jet2 operator*(const Jet2& a, const Jet2& b) {
    Jet2 r;
    r.v = a.v * b.v;
    r.g = {a.g[0] * b.v + a.v * b.g[0], a.g[1] * b.v + a.v * b.g[1]};
    r.h = {a.h[0] * b.v + a.v * b.h[0] + 2.0 * a.g[0] * b.g[0],
           a.h[1] * b.v + a.v * b.h[1] + a.g[0] * b.g[1] + a.g[1] * b.g[0],
           a.h[2] * b.v + a.v * b.h[2] + 2.0 * a.g[1] * b.g[1]};
    return r;
}

inline Jet2 reciprocal(const Jet2& a) {
    const double inv = 1.0 / a.v;
    return chain(a, inv, -inv * inv, 2.0 * inv * inv * inv);
}

inline Jet2 operator/(const Jet2& a, const Jet2& b) {
    // Keeps a/b exact in the value slot (a * (1/b) would round twice).
    Jet2 r = a * reciprocal(b);
    r.v = a.v / b.v;
    return r;
}

inline Jet2& Jet2::operator*=(const Jet2& o) { return *this = *this * o; }
inline Jet2& Jet2::operator/=(const Jet2& o) { return *this = *this / o; }

inline Jet2 operator*(double s, const Jet2& a) {
    return {s * a.v, {s * a.g[0], s * a.g[1]}, {s * a.h[0], s * a.h[1], s * a.h[2]}};
}
inline Jet2 operator*(const Jet2& a, double s) { return s * a; }
inline Jet2 operator/(const Jet2& a, double s) { return (1.0 / s) * a; }
inline Jet2 operator+(const Jet2& a, double s) { Jet2 r = a; r.v += s; return r; }
inline Jet2 operator+(double s, const Jet2& a) { return a + s; }
inline Jet2 operator-(const Jet2& a, double s) { Jet2 r = a; r.v -= s; return r; }
inline Jet2 operator-(double s, const Jet2& a) { return (-a) + s; }
inline Jet2 operator/(double s, const Jet2& a) { return s * reciprocal(a); }

inline bool operator<(const Jet2& a, const Jet2& b) { return a.v < b.v; }
inline bool operator>(const Jet2& a, const Jet2& b) { return a.v > b.v; }

inline Jet2 sin(const Jet2& a) {
    const double s = std::sin(a.v), c = std::cos(a.v);
    return chain(a, s, c, -s);
}
inline Jet2 cos(const Jet2& a) {
    const double s = std::sin(a.v), c = std::cos(a.v);
    return chain(a, c, -s, -c);
}
inline Jet2 exp(const Jet2& a) {
    const double e = std::exp(a.v);
    return chain(a, e, e, e);
}
inline Jet2 log(const Jet2& a) {
    return chain(a, std::log(a.v), 1.0 / a.v, -1.0 / (a.v * a.v));
}
inline Jet2 sqrt(const Jet2& a) {
    const double s = std::sqrt(a.v);
    return chain(a, s, 0.5 / s, -0.25 / (s * a.v));
}
inline Jet2 tanh(const Jet2& a) {
    const double t = std::tanh(a.v);
    const double s = 1.0 - t * t;
    return chain(a, t, s, -2.0 * t * s);
}
inline Jet2 pow(const Jet2& a, double p) {
    const double f0 = std::pow(a.v, p);
    return chain(a, f0, p * std::pow(a.v, p - 1.0), p * (p - 1.0) * std::pow(a.v, p - 2.0));
}
inline Jet2 abs(const Jet2& a) { return a.v < 0.0 ? -a : a; }

/// Scalar field of a 2D point usable with both plain doubles and Jet2.
///
/// Built from a generic callable `f(x, y)` so the same formula produces values
/// and exact derivatives.
struct ScalarField {
    std::function<double(double, double)> value_fn;
    std::function<Jet2(const Jet2&, const Jet2&)> jet_fn;

    template <class F>
    static ScalarField from(F f) {
        return {[f](double x, double y) { return static_cast<double>(f(x, y)); },
                [f](const Jet2& x, const Jet2& y) { return Jet2(f(x, y)); }};
    }
    static ScalarField constant(double c) {
        return from([c](const auto&, const auto&) { return c; });
    }

    explicit operator bool() const { return static_cast<bool>(value_fn); }
    double operator()(Point p) const { return value_fn(p.x, p.y); }
    double operator()(double x, double y) const { return value_fn(x, y); }
    Jet2 jet(Point p) const { return jet_fn(Jet2::variable_x(p.x), Jet2::variable_y(p.y)); }
    Jet2 jet(const Jet2& x, const Jet2& y) const { return jet_fn(x, y); }
};

/// Two-component vector field, e.g. a convection velocity.
struct VectorField {
    ScalarField x;
    ScalarField y;
};

}  // namespace pinnbc
