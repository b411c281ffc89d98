#pragma once

// Explicitly embedded compact manifolds and the differential-geometric
// primitives used by the simulation, BSDE and HJB layers.
//
// Every catalog manifold is a product of unit spheres ("factors") inside the
// ambient space: S^1 in R^2, S^2 in R^3 and the flat torus S^1 x S^1 in R^4.
// Distances, exponential/logarithm maps and parallel transport are computed
// factor by factor with the great-circle formulas.

#include <cmath>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rsoc/errors.hpp"
#include "rsoc/linalg.hpp"
#include "rsoc/random.hpp"

namespace rsoc {

enum class ManifoldKind { Circle, Sphere2, FlatTorus2 };

/// Contiguous block of ambient coordinates that must have unit norm.
struct Factor {
    Eigen::Index offset;
    Eigen::Index size;
};

class Manifold {
public:
    static Manifold circle() { return Manifold(ManifoldKind::Circle, "circle", 1, 2, {{0, 2}}); }
    static Manifold sphere2() { return Manifold(ManifoldKind::Sphere2, "sphere2", 2, 3, {{0, 3}}); }
    static Manifold flat_torus2() {
        return Manifold(ManifoldKind::FlatTorus2, "torus2", 2, 4, {{0, 2}, {2, 2}});
    }

    ManifoldKind kind() const noexcept { return kind_; }
    const std::string& name() const noexcept { return name_; }
    int intrinsic_dim() const noexcept { return intrinsic_dim_; }
    int ambient_dim() const noexcept { return ambient_dim_; }
    std::span<const Factor> factors() const noexcept { return factors_; }

    /// Geodesic convention: pi for the round factors and for each torus factor.
    double injectivity_radius() const noexcept { return std::numbers::pi; }

    /// Lower bound -k0 on sectional curvature: 0 for the flat circle and torus,
    /// and 0 for S^2 whose curvature is +1.
    double curvature_lower_bound_k0() const noexcept { return 0.0; }

    /// Largest deviation of a factor norm from one.
    double constraint_violation(const Vec& p) const {
        double worst = 0.0;
        for (const auto& f : factors_)
            worst = std::max(worst, std::abs(p.segment(f.offset, f.size).norm() - 1.0));
        return worst;
    }

    bool contains(const Vec& p, double tol = 1e-12) const {
        return p.size() == ambient_dim_ && constraint_violation(p) <= tol;
    }

    /// Largest normal component of an ambient vector at `base`.
    double normal_component(const Vec& base, const Vec& v) const {
        double worst = 0.0;
        for (const auto& f : factors_)
            worst = std::max(worst, std::abs(base.segment(f.offset, f.size).dot(v.segment(f.offset, f.size))));
        return worst;
    }

    /// Orthogonal projection of an ambient vector onto the tangent space at `base`.
    Vec tangent_part(const Vec& base, const Vec& v) const {
        Vec out = v;
        for (const auto& f : factors_) {
            const auto b = base.segment(f.offset, f.size);
            out.segment(f.offset, f.size) -= b.dot(v.segment(f.offset, f.size)) * b;
        }
        return out;
    }

    Vec random_point(SampleRng& rng) const {
        Vec p(ambient_dim_);
        for (;;) {
            for (Eigen::Index i = 0; i < ambient_dim_; ++i) p(i) = rng.normal();
            bool ok = true;
            for (const auto& f : factors_) {
                const double n = p.segment(f.offset, f.size).norm();
                if (n < 1e-3) { ok = false; break; }
                p.segment(f.offset, f.size) /= n;
            }
            if (ok) return p;
        }
    }

    Vec random_tangent(const Vec& base, SampleRng& rng, double scale = 1.0) const {
        Vec v(ambient_dim_);
        for (Eigen::Index i = 0; i < ambient_dim_; ++i) v(i) = scale * rng.normal();
        return tangent_part(base, v);
    }

private:
    Manifold(ManifoldKind kind, std::string name, int intrinsic, int ambient, std::vector<Factor> factors)
        : kind_(kind), name_(std::move(name)), intrinsic_dim_(intrinsic), ambient_dim_(ambient),
          factors_(std::move(factors)) {}

    ManifoldKind kind_;
    std::string name_;
    int intrinsic_dim_;
    int ambient_dim_;
    std::vector<Factor> factors_;
};

/// Catalog lookup: "circle", "sphere2", "torus2".
inline Manifold manifold_from_id(std::string_view id) {
    if (id == "circle") return Manifold::circle();
    if (id == "sphere2") return Manifold::sphere2();
    if (id == "torus2") return Manifold::flat_torus2();
    throw UnknownIdentifier("unknown manifold '" + std::string(id) + "'");
}

inline Vec circle_point(double theta) { return make_vec({std::cos(theta), std::sin(theta)}); }

inline Vec sphere_point(double colatitude, double longitude) {
    return make_vec({std::sin(colatitude) * std::cos(longitude), std::sin(colatitude) * std::sin(longitude),
                     std::cos(colatitude)});
}

inline Vec torus_point(double a, double b) {
    return make_vec({std::cos(a), std::sin(a), std::cos(b), std::sin(b)});
}

struct TangentVector {
    Vec base;
    Vec components;

    double norm() const { return components.norm(); }
};

namespace detail {

// Great-circle primitives on a single unit-sphere factor.

inline double factor_angle(const auto& x, const auto& y) {
    return 2.0 * std::atan2((x - y).norm(), (x + y).norm());
}

inline Vec factor_log(const auto& x, const auto& y) {
    const double theta = factor_angle(x, y);
    Vec w = y - x.dot(y) * x;
    const double n = w.norm();
    if (theta == 0.0 || n == 0.0) return Vec::Zero(x.size());
    return (theta / n) * w;
}

inline Vec factor_exp(const auto& x, const auto& v) {
    const double n = v.norm();
    if (n == 0.0) return x;
    Vec y = std::cos(n) * x + (std::sin(n) / n) * v;
    return y / y.norm();
}

inline Vec factor_transport(const auto& x, const auto& y, const auto& v) {
    const double theta = factor_angle(x, y);
    if (theta == 0.0) return v;
    Vec u = factor_log(x, y);
    const double un = u.norm();
    if (un == 0.0) return v;
    u /= un;
    const double a = u.dot(v);
    return v - a * u + a * (-std::sin(theta) * x + std::cos(theta) * u);
}

}  // namespace detail

/// Metric projection onto the manifold (normalization of every factor).
inline Vec project(const Manifold& m, const Vec& p) {
    Vec out = p;
    for (const auto& f : m.factors()) {
        const double n = p.segment(f.offset, f.size).norm();
        if (!(n >= 1e-8)) throw SingularProjection("projection undefined: factor norm " + std::to_string(n));
        out.segment(f.offset, f.size) /= n;
    }
    return out;
}

/// Riemannian distance; root-sum-square of factor angles.
inline double distance(const Manifold& m, const Vec& x, const Vec& y) {
    const auto fs = m.factors();
    if (fs.size() == 1) return detail::factor_angle(x, y);
    double s = 0.0;
    for (const auto& f : fs) {
        const double a = detail::factor_angle(x.segment(f.offset, f.size), y.segment(f.offset, f.size));
        s += a * a;
    }
    return std::sqrt(s);
}

inline Vec exp_map(const Manifold& m, const TangentVector& v) {
    Vec out(m.ambient_dim());
    for (const auto& f : m.factors())
        out.segment(f.offset, f.size) =
            detail::factor_exp(v.base.segment(f.offset, f.size), v.components.segment(f.offset, f.size));
    return out;
}

namespace detail {
inline void require_inside_injectivity(const Manifold& m, const Vec& x, const Vec& y) {
    const double d = distance(m, x, y);
    if (d >= m.injectivity_radius() - 1e-9)
        throw CutLocus("points at distance " + std::to_string(d) + " are beyond the injectivity radius");
}
}  // namespace detail

/// Inverse of exp_map at x; raises CutLocus within 1e-9 of the injectivity radius.
inline TangentVector log_map(const Manifold& m, const Vec& x, const Vec& y) {
    detail::require_inside_injectivity(m, x, y);
    TangentVector out{x, Vec(m.ambient_dim())};
    for (const auto& f : m.factors())
        out.components.segment(f.offset, f.size) =
            detail::factor_log(x.segment(f.offset, f.size), y.segment(f.offset, f.size));
    return out;
}

/// Parallel transport L_xy along the minimizing geodesic from v.base to y.
inline TangentVector parallel_transport(const Manifold& m, const TangentVector& v, const Vec& y) {
    detail::require_inside_injectivity(m, v.base, y);
    TangentVector out{y, Vec(m.ambient_dim())};
    for (const auto& f : m.factors())
        out.components.segment(f.offset, f.size) =
            detail::factor_transport(v.base.segment(f.offset, f.size), y.segment(f.offset, f.size),
                                     v.components.segment(f.offset, f.size));
    return out;
}

// ---------------------------------------------------------------------------
// Vector fields

/// A time-dependent vector field given by a smooth formula on the ambient
/// space. `jacobian` is optional; when empty, ambient derivatives fall back to
/// central differences.
struct VectorField {
    std::string id;
    std::function<Vec(double, const Vec&)> eval;
    std::function<Mat(double, const Vec&)> jacobian;
    bool tangency_certified = false;
    bool autonomous = true;

    Vec operator()(double t, const Vec& x) const { return eval(t, x); }
};

/// Field x -> A x with its constant Jacobian.
inline VectorField linear_field(std::string id, Mat a, bool tangent) {
    VectorField v;
    v.id = std::move(id);
    v.eval = [a](double, const Vec& x) -> Vec { return a * x; };
    v.jacobian = [a](double, const Vec&) -> Mat { return a; };
    v.tangency_certified = tangent;
    return v;
}

inline Mat cross_matrix(const Vec& a) {
    Mat c(3, 3);
    c << 0.0, -a(2), a(1), a(2), 0.0, -a(0), -a(1), a(0), 0.0;
    return c;
}

/// Builds catalog fields by string id. Ids of the form "name:arg" pass `arg`
/// to the factory registered under "name".
class FieldCatalog {
public:
    using Factory = std::function<VectorField(const Manifold&, std::string_view arg)>;

    static FieldCatalog& builtin() {
        static FieldCatalog catalog = make_builtin();
        return catalog;
    }

    void add(ManifoldKind kind, std::string name, Factory factory) {
        factories_[{kind, std::move(name)}] = std::move(factory);
    }

    VectorField make(const Manifold& m, std::string_view id) const {
        const auto colon = id.find(':');
        const std::string name(id.substr(0, colon));
        const std::string_view arg = colon == std::string_view::npos ? std::string_view{} : id.substr(colon + 1);
        const auto it = factories_.find({m.kind(), name});
        if (it == factories_.end())
            throw UnknownIdentifier("unknown field '" + std::string(id) + "' on " + m.name());
        VectorField v = it->second(m, arg);
        v.id = std::string(id);
        return v;
    }

private:
    static Mat rotation_generator(const Manifold& m) {
        Mat a = Mat::Zero(m.ambient_dim(), m.ambient_dim());
        switch (m.kind()) {
            case ManifoldKind::Circle:
                a(0, 1) = -1.0;
                a(1, 0) = 1.0;
                break;
            case ManifoldKind::Sphere2:
                a = cross_matrix(make_vec({0.0, 0.0, 1.0}));
                break;
            case ManifoldKind::FlatTorus2:
                a(0, 1) = -1.0;
                a(1, 0) = 1.0;
                a(2, 3) = -1.0;
                a(3, 2) = 1.0;
                break;
        }
        return a;
    }

    static double parse_arg(std::string_view arg) {
        try {
            std::size_t used = 0;
            const double v = std::stod(std::string(arg), &used);
            if (used != arg.size()) throw std::invalid_argument("trailing characters");
            return v;
        } catch (const std::exception&) {
            throw UnknownIdentifier("invalid field argument '" + std::string(arg) + "'");
        }
    }

    static FieldCatalog make_builtin() {
        FieldCatalog c;
        for (ManifoldKind k : {ManifoldKind::Circle, ManifoldKind::Sphere2, ManifoldKind::FlatTorus2}) {
            c.add(k, "zero", [](const Manifold& m, std::string_view) {
                return linear_field("zero", Mat::Zero(m.ambient_dim(), m.ambient_dim()), true);
            });
            c.add(k, "rot", [](const Manifold& m, std::string_view) {
                return linear_field("rot", rotation_generator(m), true);
            });
            c.add(k, "const_angle", [](const Manifold& m, std::string_view arg) {
                return linear_field("const_angle", parse_arg(arg) * rotation_generator(m), true);
            });
        }
        const char* axes[] = {"rot_x", "rot_y", "rot_z"};
        for (int i = 0; i < 3; ++i) {
            c.add(ManifoldKind::Sphere2, axes[i], [i](const Manifold&, std::string_view) {
                Vec a = Vec::Zero(3);
                a(i) = 1.0;
                return linear_field("", cross_matrix(a), true);
            });
        }
        for (int i = 0; i < 2; ++i) {
            c.add(ManifoldKind::FlatTorus2, i == 0 ? "rot1" : "rot2", [i](const Manifold&, std::string_view) {
                Mat a = Mat::Zero(4, 4);
                a(2 * i, 2 * i + 1) = -1.0;
                a(2 * i + 1, 2 * i) = 1.0;
                return linear_field("", a, true);
            });
        }
        return c;
    }

    std::map<std::pair<ManifoldKind, std::string>, Factory> factories_;
};

inline VectorField field_from_id(const Manifold& m, std::string_view id) {
    return FieldCatalog::builtin().make(m, id);
}

/// Ambient derivative (D_W V)(t, x): directional derivative of the extension
/// of V along W(t, x). Uses the registered Jacobian when available, otherwise
/// central differences with step `h_geo`.
inline Vec ambient_derivative(const Manifold& m, const VectorField& v, const VectorField& w, double t,
                              const Vec& x, double h_geo = 1e-5) {
    const Vec dir = w(t, x);
    if (v.jacobian) return v.jacobian(t, x) * dir;
    if (dir.isZero(0.0)) return Vec::Zero(m.ambient_dim());
    return (v(t, x + h_geo * dir) - v(t, x - h_geo * dir)) / (2.0 * h_geo);
}

/// Integrates x' = V(t, x) over time h with classical Runge-Kutta substeps of
/// length at most `max_substep`, projecting after each substep.
inline Vec flow_step(const Manifold& m, const VectorField& v, double t, const Vec& x, double h,
                     double max_substep = 0.02) {
    if (h == 0.0) return x;
    const int n = std::max(1, static_cast<int>(std::ceil(std::abs(h) / max_substep)));
    const double dt = h / n;
    Vec y = x;
    for (int i = 0; i < n; ++i) {
        const double s = t + i * dt;
        const Vec k1 = v(s, y);
        const Vec k2 = v(s + 0.5 * dt, y + 0.5 * dt * k1);
        const Vec k3 = v(s + 0.5 * dt, y + 0.5 * dt * k2);
        const Vec k4 = v(s + dt, y + dt * k3);
        y = project(m, y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
    }
    return y;
}

}  // namespace rsoc
