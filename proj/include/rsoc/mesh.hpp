#pragma once

// Node sets on the catalog manifolds with positively weighted interpolation:
// periodic linear on the circle, bilinear in (colatitude, longitude) on the
// sphere with one shared value per pole, periodic bilinear on the torus.

#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

#include "rsoc/geometry.hpp"

namespace rsoc {

/// At most four (node, weight) pairs; weights are >= 0 and sum to one.
struct Stencil {
    std::array<std::size_t, 4> node{};
    std::array<double, 4> weight{};
    int size = 0;

    void add(std::size_t n, double w) {
        for (int k = 0; k < size; ++k)
            if (node[static_cast<std::size_t>(k)] == n) {
                weight[static_cast<std::size_t>(k)] += w;
                return;
            }
        node[static_cast<std::size_t>(size)] = n;
        weight[static_cast<std::size_t>(size)] = w;
        ++size;
    }

    double apply(std::span<const double> values) const {
        double s = 0.0;
        for (int k = 0; k < size; ++k) s += weight[static_cast<std::size_t>(k)] * values[node[static_cast<std::size_t>(k)]];
        return s;
    }
};

struct MeshSizes {
    int n_theta = 128;
    int n_lat = 32;
    int n_lon = 64;
};

class ManifoldMesh {
public:
    ManifoldMesh(Manifold m, MeshSizes sizes) : manifold_(std::move(m)), sizes_(sizes) {
        constexpr double two_pi = 2.0 * std::numbers::pi;
        switch (manifold_.kind()) {
            case ManifoldKind::Circle:
                if (sizes_.n_theta < 3) throw std::invalid_argument("mesh: n_theta must be >= 3");
                for (int j = 0; j < sizes_.n_theta; ++j) nodes_.push_back(circle_point(two_pi * j / sizes_.n_theta));
                for (int j = 0; j < sizes_.n_theta; ++j)
                    neighbors_.emplace_back(static_cast<std::size_t>(j), static_cast<std::size_t>((j + 1) % sizes_.n_theta));
                break;
            case ManifoldKind::Sphere2: {
                if (sizes_.n_lat < 3 || sizes_.n_lon < 3) throw std::invalid_argument("mesh: n_lat, n_lon must be >= 3");
                nodes_.push_back(make_vec({0.0, 0.0, 1.0}));
                for (int k = 1; k < sizes_.n_lat - 1; ++k)
                    for (int l = 0; l < sizes_.n_lon; ++l)
                        nodes_.push_back(sphere_point(colatitude(k), two_pi * l / sizes_.n_lon));
                nodes_.push_back(make_vec({0.0, 0.0, -1.0}));
                for (int k = 1; k < sizes_.n_lat - 1; ++k)
                    for (int l = 0; l < sizes_.n_lon; ++l) {
                        neighbors_.emplace_back(sphere_node(k, l), sphere_node(k, l + 1));
                        neighbors_.emplace_back(sphere_node(k, l), sphere_node(k + 1, l));
                        if (k == 1) neighbors_.emplace_back(sphere_node(0, 0), sphere_node(k, l));
                    }
                break;
            }
            case ManifoldKind::FlatTorus2:
                if (sizes_.n_theta < 3) throw std::invalid_argument("mesh: n_theta must be >= 3");
                for (int a = 0; a < sizes_.n_theta; ++a)
                    for (int b = 0; b < sizes_.n_theta; ++b)
                        nodes_.push_back(torus_point(two_pi * a / sizes_.n_theta, two_pi * b / sizes_.n_theta));
                for (int a = 0; a < sizes_.n_theta; ++a)
                    for (int b = 0; b < sizes_.n_theta; ++b) {
                        neighbors_.emplace_back(torus_node(a, b), torus_node(a + 1, b));
                        neighbors_.emplace_back(torus_node(a, b), torus_node(a, b + 1));
                    }
                break;
        }
    }

    const Manifold& manifold() const noexcept { return manifold_; }
    const MeshSizes& sizes() const noexcept { return sizes_; }
    std::size_t size() const noexcept { return nodes_.size(); }
    const Vec& node(std::size_t j) const { return nodes_[j]; }
    const std::vector<Vec>& nodes() const noexcept { return nodes_; }

    /// Mesh-neighbor pairs (wraparound included).
    const std::vector<std::pair<std::size_t, std::size_t>>& neighbor_pairs() const noexcept { return neighbors_; }

    /// Mesh spacing: the smallest coordinate step.
    double spacing() const {
        constexpr double two_pi = 2.0 * std::numbers::pi;
        switch (manifold_.kind()) {
            case ManifoldKind::Circle:
            case ManifoldKind::FlatTorus2:
                return two_pi / sizes_.n_theta;
            case ManifoldKind::Sphere2:
                return std::min(std::numbers::pi / (sizes_.n_lat - 1), two_pi / sizes_.n_lon);
        }
        return 0.0;
    }

    /// Same manifold with every size doubled.
    ManifoldMesh refined() const {
        MeshSizes s = sizes_;
        s.n_theta *= 2;
        s.n_lat = 2 * (s.n_lat - 1) + 1;
        s.n_lon *= 2;
        return ManifoldMesh(manifold_, s);
    }

    Stencil stencil(const Vec& x) const {
        Stencil st;
        switch (manifold_.kind()) {
            case ManifoldKind::Circle: {
                const auto [j, f] = periodic_cell(std::atan2(x(1), x(0)), sizes_.n_theta);
                st.add(static_cast<std::size_t>(j), 1.0 - f);
                st.add(static_cast<std::size_t>((j + 1) % sizes_.n_theta), f);
                break;
            }
            case ManifoldKind::Sphere2: {
                const double colat = std::atan2(std::hypot(x(0), x(1)), x(2));
                const double dphi = std::numbers::pi / (sizes_.n_lat - 1);
                int k = static_cast<int>(std::floor(colat / dphi));
                k = std::clamp(k, 0, sizes_.n_lat - 2);
                const double fr = std::clamp(colat / dphi - k, 0.0, 1.0);
                const auto [l, fl] = periodic_cell(std::atan2(x(1), x(0)), sizes_.n_lon);
                for (int r = 0; r < 2; ++r) {
                    const int ring = k + r;
                    const double wr = r == 0 ? 1.0 - fr : fr;
                    if (ring == 0 || ring == sizes_.n_lat - 1) {
                        st.add(sphere_node(ring, 0), wr);
                    } else {
                        st.add(sphere_node(ring, l), wr * (1.0 - fl));
                        st.add(sphere_node(ring, l + 1), wr * fl);
                    }
                }
                break;
            }
            case ManifoldKind::FlatTorus2: {
                const auto [a, fa] = periodic_cell(std::atan2(x(1), x(0)), sizes_.n_theta);
                const auto [b, fb] = periodic_cell(std::atan2(x(3), x(2)), sizes_.n_theta);
                st.add(torus_node(a, b), (1.0 - fa) * (1.0 - fb));
                st.add(torus_node(a + 1, b), fa * (1.0 - fb));
                st.add(torus_node(a, b + 1), (1.0 - fa) * fb);
                st.add(torus_node(a + 1, b + 1), fa * fb);
                break;
            }
        }
        return st;
    }

    double interpolate(std::span<const double> values, const Vec& x) const { return stencil(x).apply(values); }

private:
    double colatitude(int k) const { return std::numbers::pi * k / (sizes_.n_lat - 1); }

    std::size_t sphere_node(int ring, int l) const {
        if (ring == 0) return 0;
        if (ring == sizes_.n_lat - 1) return nodes_count_sphere() - 1;
        const int ll = ((l % sizes_.n_lon) + sizes_.n_lon) % sizes_.n_lon;
        return 1 + static_cast<std::size_t>((ring - 1) * sizes_.n_lon + ll);
    }

    std::size_t nodes_count_sphere() const {
        return 2 + static_cast<std::size_t>((sizes_.n_lat - 2) * sizes_.n_lon);
    }

    std::size_t torus_node(int a, int b) const {
        const int n = sizes_.n_theta;
        return static_cast<std::size_t>(((a % n + n) % n) * n + ((b % n + n) % n));
    }

    /// Cell index and fraction of an angle on a uniform periodic grid.
    static std::pair<int, double> periodic_cell(double angle, int n) {
        double s = angle / (2.0 * std::numbers::pi) * n;
        if (s < 0.0) s += n;
        int j = static_cast<int>(std::floor(s));
        double f = s - j;
        if (j >= n) { j -= n; }
        if (j < 0) { j = 0; f = 0.0; }
        return {j, std::clamp(f, 0.0, 1.0)};
    }

    Manifold manifold_;
    MeshSizes sizes_;
    std::vector<Vec> nodes_;
    std::vector<std::pair<std::size_t, std::size_t>> neighbors_;
};

}  // namespace rsoc
