#pragma once

// Problem data of the recursive control problem: the BSDE driver f, the
// terminal cost Phi and smooth test functions used by the HJB diagnostics.

#include <cmath>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rsoc/dynamics.hpp"
#include "rsoc/geometry.hpp"

namespace rsoc {

/// Named scalar parameters of a catalog entry.
class Params {
public:
    Params() = default;
    Params(std::initializer_list<std::pair<const std::string, double>> init) : values_(init) {}

    double get(const std::string& key, double fallback) const {
        const auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }
    void set(const std::string& key, double value) { values_[key] = value; }
    const std::map<std::string, double>& values() const noexcept { return values_; }

private:
    std::map<std::string, double> values_;
};

/// Driver f(t, x, y, z, v) with its Lipschitz constant K and the bound K0 on
/// |f(t, x, 0, 0, v)|.
struct Driver {
    using Fn = std::function<double(double t, const Vec& x, double y, std::span<const double> z,
                                    const ControlValue& v)>;
    std::string id;
    Fn f;
    double lipschitz_K = 0.0;
    double bound_K0 = 0.0;

    double operator()(double t, const Vec& x, double y, std::span<const double> z, const ControlValue& v) const {
        return f(t, x, y, z, v);
    }
};

struct TerminalCost {
    std::string id;
    std::function<double(const Vec&)> phi;
    double lipschitz_K = 0.0;

    double operator()(const Vec& x) const { return phi(x); }
};

/// Catalog drivers:
///   zero                          f = 0
///   const     (c)                 f = c
///   discount  (beta)              f = -beta y
///   linear    (c, cx, beta, gamma)
///             f = c + cx x_0 - beta y + gamma sum_a z_a
/// `d` is the number of Brownian components (enters K through |sum z|).
inline Driver driver_from_id(std::string_view id, const Params& p, int d) {
    Driver out;
    out.id = std::string(id);
    if (id == "zero") {
        out.f = [](double, const Vec&, double, std::span<const double>, const ControlValue&) { return 0.0; };
    } else if (id == "const") {
        const double c = p.get("c", 0.0);
        out.f = [c](double, const Vec&, double, std::span<const double>, const ControlValue&) { return c; };
        out.bound_K0 = std::abs(c);
    } else if (id == "discount") {
        const double beta = p.get("beta", 0.0);
        out.f = [beta](double, const Vec&, double y, std::span<const double>, const ControlValue&) {
            return -beta * y;
        };
        out.lipschitz_K = std::abs(beta);
    } else if (id == "linear") {
        const double c = p.get("c", 0.0);
        const double cx = p.get("cx", 0.0);
        const double beta = p.get("beta", 0.0);
        const double gamma = p.get("gamma", 0.0);
        out.f = [=](double, const Vec& x, double y, std::span<const double> z, const ControlValue&) {
            double zs = 0.0;
            for (double zi : z) zs += zi;
            return c + cx * x(0) - beta * y + gamma * zs;
        };
        out.lipschitz_K = std::max({std::abs(beta), std::abs(gamma) * std::sqrt(static_cast<double>(d)), std::abs(cx)});
        out.bound_K0 = std::abs(c) + std::abs(cx);
    } else {
        throw UnknownIdentifier("unknown driver '" + std::string(id) + "'");
    }
    return out;
}

/// Catalog terminal costs:
///   const (c)                Phi = c
///   coord (index, scale, c)  Phi = c + scale x_index
inline TerminalCost terminal_from_id(std::string_view id, const Params& p, const Manifold& m) {
    TerminalCost out;
    out.id = std::string(id);
    if (id == "const") {
        const double c = p.get("c", 0.0);
        out.phi = [c](const Vec&) { return c; };
    } else if (id == "coord") {
        const auto k = static_cast<Eigen::Index>(p.get("index", 0.0));
        if (k < 0 || k >= m.ambient_dim()) throw UnknownIdentifier("terminal coord index out of range");
        const double a = p.get("scale", 1.0);
        const double c = p.get("c", 0.0);
        out.phi = [=](const Vec& x) { return c + a * x(k); };
        out.lipschitz_K = std::abs(a);
    } else {
        throw UnknownIdentifier("unknown terminal '" + std::string(id) + "'");
    }
    return out;
}

/// Smooth test function phi(t, x) given through an ambient extension with
/// closed-form time derivative, gradient and Hessian. Derivatives along a
/// tangent field follow from the chain rule along its integral curves:
///   V phi = <grad, V>,   V V phi = V^T Hess V + <grad, D_V V>.
struct TestFunctionProbe {
    std::string id;
    std::function<double(double, const Vec&)> value;
    std::function<double(double, const Vec&)> time_derivative;
    std::function<Vec(double, const Vec&)> gradient;
    std::function<Mat(double, const Vec&)> hessian;

    double operator()(double t, const Vec& x) const { return value(t, x); }

    double along(const VectorField& v, double t, const Vec& x) const { return gradient(t, x).dot(v(t, x)); }

    double along_twice(const Manifold& m, const VectorField& v, double t, const Vec& x) const {
        const Vec w = v(t, x);
        return w.dot(hessian(t, x) * w) + gradient(t, x).dot(ambient_derivative(m, v, v, t, x));
    }
};

/// Catalog probes:
///   zero
///   const   (c)                    phi = c
///   time                           phi = t
///   coord   (index, scale, rate)   phi = scale x_index exp(rate t)
///   product (i, j)                 phi = x_i x_j
inline TestFunctionProbe probe_from_id(std::string_view id, const Params& p, const Manifold& m) {
    const int n = m.ambient_dim();
    TestFunctionProbe out;
    out.id = std::string(id);
    auto zero_grad = [n](double, const Vec&) -> Vec { return Vec::Zero(n); };
    auto zero_hess = [n](double, const Vec&) -> Mat { return Mat::Zero(n, n); };
    if (id == "zero" || id == "const") {
        const double c = id == "const" ? p.get("c", 0.0) : 0.0;
        out.value = [c](double, const Vec&) { return c; };
        out.time_derivative = [](double, const Vec&) { return 0.0; };
        out.gradient = zero_grad;
        out.hessian = zero_hess;
    } else if (id == "time") {
        out.value = [](double t, const Vec&) { return t; };
        out.time_derivative = [](double, const Vec&) { return 1.0; };
        out.gradient = zero_grad;
        out.hessian = zero_hess;
    } else if (id == "coord") {
        const auto k = static_cast<Eigen::Index>(p.get("index", 0.0));
        if (k < 0 || k >= n) throw UnknownIdentifier("probe coord index out of range");
        const double a = p.get("scale", 1.0);
        const double rate = p.get("rate", 0.0);
        out.value = [=](double t, const Vec& x) { return a * x(k) * std::exp(rate * t); };
        out.time_derivative = [=](double t, const Vec& x) { return rate * a * x(k) * std::exp(rate * t); };
        out.gradient = [=](double t, const Vec&) -> Vec {
            Vec g = Vec::Zero(n);
            g(k) = a * std::exp(rate * t);
            return g;
        };
        out.hessian = zero_hess;
    } else if (id == "product") {
        const auto i = static_cast<Eigen::Index>(p.get("i", 0.0));
        const auto j = static_cast<Eigen::Index>(p.get("j", 1.0));
        if (i < 0 || i >= n || j < 0 || j >= n) throw UnknownIdentifier("probe product index out of range");
        out.value = [=](double, const Vec& x) { return x(i) * x(j); };
        out.time_derivative = [](double, const Vec&) { return 0.0; };
        out.gradient = [=](double, const Vec& x) -> Vec {
            Vec g = Vec::Zero(n);
            g(i) += x(j);
            g(j) += x(i);
            return g;
        };
        out.hessian = [=](double, const Vec&) -> Mat {
            Mat h = Mat::Zero(n, n);
            h(i, j) += 1.0;
            h(j, i) += 1.0;
            return h;
        };
    } else {
        throw UnknownIdentifier("unknown probe '" + std::string(id) + "'");
    }
    return out;
}

/// Everything that defines one control problem: dynamics, costs and U.
struct ControlProblem {
    Manifold manifold;
    std::vector<VectorField> fields;  // V0 first, then the d diffusion fields
    Driver driver;
    TerminalCost terminal;
    ControlSet controls;

    int d() const noexcept { return static_cast<int>(fields.size()) - 1; }
};

}  // namespace rsoc
