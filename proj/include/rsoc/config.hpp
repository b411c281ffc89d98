#pragma once

// Flat key = value experiment configuration. Every key has an embedded
// default; unknown keys and malformed values raise ConfigError naming the key.
//
//   # comment
//   manifold = circle
//   fields = rot, rot
//   control.lower = 0, 0.5

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "rsoc/errors.hpp"
#include "rsoc/geometry.hpp"
#include "rsoc/hjb.hpp"
#include "rsoc/problem.hpp"

namespace rsoc {

struct ConfigKey {
    const char* key;
    const char* value;
    const char* help;
};

/// Defaults describe the circle suite: rotation drift and diffusion,
/// U = {0} x {0.5, 1.0}, a linear driver and Phi = first coordinate.
inline const std::vector<ConfigKey>& config_defaults() {
    static const std::vector<ConfigKey> keys = {
        {"experiment", "oracle-circle",
         "oracle-circle | dpp-check | solver-agreement | estimates | hypotheses | convergence-table | max-principle"},
        {"manifold", "circle", "circle | sphere2 | torus2"},
        {"fields", "rot, rot", "V0 first, then one field per Brownian component"},
        {"driver", "linear", "zero | const | discount | linear"},
        {"driver.c", "0", "constant term"},
        {"driver.cx", "0", "coefficient of the first ambient coordinate"},
        {"driver.beta", "0.5", "discount rate: -beta y"},
        {"driver.gamma", "0.2", "z coefficient: gamma sum z"},
        {"terminal", "coord", "const | coord"},
        {"terminal.index", "0", "ambient coordinate of coord"},
        {"terminal.scale", "1", "coord scale"},
        {"terminal.c", "0", "additive constant"},
        {"probe", "coord", "test function: zero | const | time | coord | product"},
        {"probe.c", "0", "const value"},
        {"probe.index", "0", "coord index"},
        {"probe.scale", "1", "coord scale"},
        {"probe.rate", "0", "coord time rate"},
        {"probe.i", "0", "product first index"},
        {"probe.j", "1", "product second index"},
        {"control.lower", "0, 0.5", "lower corner of U (d+1 components)"},
        {"control.upper", "0, 1.0", "upper corner of U"},
        {"control.points", "2", "grid points per axis"},
        {"time.t0", "0", "initial time"},
        {"time.T", "1", "horizon"},
        {"time.n_steps", "64", "time steps of the probabilistic solvers"},
        {"mesh.n_theta", "128", "circle nodes; torus nodes per axis"},
        {"mesh.n_lat", "32", "sphere latitude rings including poles"},
        {"mesh.n_lon", "64", "sphere longitude nodes"},
        {"mc.n_paths", "8192", "paths for cost functional estimates"},
        {"mc.n_sub", "512", "paths per node for one-step value updates"},
        {"mc.window_paths", "2048", "paths per probe for DPP windows"},
        {"mc.basis_degree", "2", "regression monomial degree"},
        {"mc.picard_iters", "3", "Picard iterations per BSDE step"},
        {"hjb.cfl", "0.4", "CFL guard dt max sum v^2 <= cfl h^2"},
        {"hjb.n_steps", "0", "HJB time steps; 0 picks the smallest CFL-compliant multiple of time.n_steps"},
        {"seed", "20240601", "master seed"},
        {"workers", "0", "worker threads; 0 uses the hardware concurrency"},
        {"x0", "1, 0", "initial point (ambient coordinates)"},
        {"oracle.sigma", "1", "diffusion control of the circle oracle"},
        {"dpp.deltas", "1, 4", "window lengths in steps"},
        {"dpp.probes", "16", "number of (time, node) probes"},
        {"window.delta", "0.25", "window length of the generator identity and frozen ODE checks"},
        {"window.substeps", "16", "time steps per window"},
        {"window.n_paths", "4096", "paths per window"},
        {"window.const_probe", "0.7", "value of the constant test function"},
        {"frozen_gap.deltas", "0.25, 0.125, 0.0625, 0.03125", "decreasing window lengths"},
        {"bracket.refine", "4", "control grid refinement factor"},
        {"estimates.parts", "stability, flow, generator, frozen_gap, bracket, moduli", "sub-checks to run"},
        {"estimates.instances", "100", "randomized BSDE stability instances"},
        {"estimates.flow_instances", "20", "randomized flow continuity instances"},
        {"estimates.flow_C", "50", "flow continuity constant"},
        {"estimates.moduli_coarsen", "4", "the moduli study starts from mesh and steps divided by this"},
        {"hypotheses.mu", "0", "H1 constant"},
        {"hypotheses.samples", "1000", "samples per check"},
        {"hypotheses.alphas", "1, 10, 100", "penalty parameters of the modulus check"},
        {"hypotheses.c_bar", "10", "linear majorant of the modulus check"},
        {"convergence.meshes", "64, 128, 256", "mesh sizes of the ladder (each halves the spacing)"},
        {"convergence.n_paths", "0", "paths per level (unused by the PDE oracle)"},
        {"tol.constraint", "1e-9", "max embedding constraint violation"},
        {"tol.oracle_se", "3", "allowed standard errors"},
        {"tol.dpp", "2e-2", "max DPP residual"},
        {"tol.agreement", "5e-2", "sup |u_prob - u_pde|"},
        {"tol.agreement_refined", "2.5e-2", "same after one refinement"},
        {"tol.stability_slack", "0.05", "relative slack of the stability estimate"},
        {"tol.generator", "1e-4", "generator identity gap"},
        {"tol.generator_const", "1e-10", "gap for a constant test function"},
        {"tol.frozen_gap_decay", "0.2", "required relative decay of gap/delta"},
        {"tol.bracket", "1e-8", "frozen ODE versus brute force"},
        {"tol.moduli_halving", "0.3", "relative band around 1/2 for the space modulus ratio"},
        {"tol.max_principle", "1e-10", "excursion outside [min Phi, max Phi]"},
        {"tol.convergence_ratio", "2", "minimal error ratio between levels"},
    };
    return keys;
}

inline std::string default_config_text() {
    std::ostringstream os;
    os << "# rsoc experiment configuration (defaults)\n";
    for (const auto& k : config_defaults()) os << "# " << k.help << '\n' << k.key << " = " << k.value << '\n';
    return os.str();
}

namespace detail {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream is(s);
    while (std::getline(is, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

inline double parse_number(const std::string& key, const std::string& s) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (trim(s.substr(used)).empty()) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError(key, "expected a number, got '" + s + "'");
}

}  // namespace detail

class ExperimentConfig {
public:
    ExperimentConfig() {
        for (const auto& k : config_defaults()) values_[k.key] = k.value;
    }

    static ExperimentConfig parse(std::string_view text) {
        ExperimentConfig c;
        std::istringstream is{std::string(text)};
        std::string line;
        int lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
            line = detail::trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError("line " + std::to_string(lineno), "expected 'key = value'");
            c.set(detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
        }
        return c;
    }

    static ExperimentConfig load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("config", "cannot read '" + path + "'");
        std::ostringstream os;
        os << in.rdbuf();
        return parse(os.str());
    }

    void set(const std::string& key, const std::string& value) {
        if (!values_.contains(key)) throw ConfigError(key, "unknown key");
        values_[key] = value;
    }

    const std::string& text(const std::string& key) const {
        const auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError(key, "unknown key");
        return it->second;
    }

    double number(const std::string& key) const { return detail::parse_number(key, text(key)); }

    long integer(const std::string& key) const {
        const double v = number(key);
        if (v != std::floor(v)) throw ConfigError(key, "expected an integer");
        return static_cast<long>(v);
    }

    std::size_t count(const std::string& key, long min_value = 0) const {
        const long v = integer(key);
        if (v < min_value) throw ConfigError(key, "must be >= " + std::to_string(min_value));
        return static_cast<std::size_t>(v);
    }

    std::vector<std::string> list(const std::string& key) const { return detail::split_list(text(key)); }

    std::vector<double> numbers(const std::string& key) const {
        std::vector<double> out;
        for (const auto& s : list(key)) out.push_back(detail::parse_number(key, s));
        return out;
    }

    std::uint64_t seed() const {
        const double v = number("seed");
        if (v < 0 || v != std::floor(v)) throw ConfigError("seed", "expected a non-negative integer");
        return static_cast<std::uint64_t>(std::stoull(text("seed")));
    }

    std::string experiment() const { return text("experiment"); }

    /// Configuration echo in the same syntax (sorted keys). The worker count
    /// is left out: it must not change any output.
    std::string dump() const {
        std::ostringstream os;
        for (const auto& [k, v] : values_)
            if (k != "workers") os << k << " = " << v << '\n';
        return os.str();
    }

    const std::map<std::string, std::string>& values() const noexcept { return values_; }

    // --- typed views -------------------------------------------------------

    Manifold manifold() const {
        try {
            return manifold_from_id(text("manifold"));
        } catch (const UnknownIdentifier& e) {
            throw ConfigError("manifold", e.what());
        }
    }

    Params params(const std::string& prefix) const {
        Params p;
        for (const auto& [k, v] : values_)
            if (k.rfind(prefix + ".", 0) == 0) p.set(k.substr(prefix.size() + 1), detail::parse_number(k, v));
        return p;
    }

    Vec x0(const Manifold& m) const {
        const auto v = numbers("x0");
        if (static_cast<int>(v.size()) != m.ambient_dim())
            throw ConfigError("x0", "expected " + std::to_string(m.ambient_dim()) + " coordinates");
        Vec x(m.ambient_dim());
        for (int k = 0; k < m.ambient_dim(); ++k) x(k) = v[static_cast<std::size_t>(k)];
        if (!m.contains(x, 1e-9)) throw ConfigError("x0", "point is not on " + m.name());
        return x;
    }

    MeshSizes mesh_sizes() const {
        return MeshSizes{static_cast<int>(count("mesh.n_theta", 3)), static_cast<int>(count("mesh.n_lat", 3)),
                         static_cast<int>(count("mesh.n_lon", 3))};
    }

    TimeGrid time_grid() const {
        const double t0 = number("time.t0");
        const double T = number("time.T");
        if (!(t0 < T)) throw ConfigError("time.T", "must exceed time.t0");
        return TimeGrid(t0, T, count("time.n_steps", 1));
    }

    ControlSet controls(int d) const {
        const auto lo = numbers("control.lower");
        const auto hi = numbers("control.upper");
        if (static_cast<int>(lo.size()) != d + 1)
            throw ConfigError("control.lower", "expected d+1 = " + std::to_string(d + 1) + " components");
        if (hi.size() != lo.size()) throw ConfigError("control.upper", "size differs from control.lower");
        ControlValue l(static_cast<Eigen::Index>(lo.size())), h(static_cast<Eigen::Index>(hi.size()));
        for (std::size_t k = 0; k < lo.size(); ++k) {
            if (lo[k] > hi[k]) throw ConfigError("control.upper", "below control.lower");
            l(static_cast<Eigen::Index>(k)) = lo[k];
            h(static_cast<Eigen::Index>(k)) = hi[k];
        }
        return ControlSet(l, h, static_cast<int>(count("control.points", 1)));
    }

    TestFunctionProbe probe(const Manifold& m) const {
        try {
            return probe_from_id(text("probe"), params("probe"), m);
        } catch (const UnknownIdentifier& e) {
            throw ConfigError("probe", e.what());
        }
    }

    ControlProblem problem() const {
        const Manifold m = manifold();
        std::vector<VectorField> fields;
        for (const auto& id : list("fields")) {
            try {
                fields.push_back(field_from_id(m, id));
            } catch (const UnknownIdentifier& e) {
                throw ConfigError("fields", e.what());
            }
        }
        if (fields.size() < 2) throw ConfigError("fields", "need V0 and at least one diffusion field");
        if (fields.size() > 8) throw ConfigError("fields", "at most 7 diffusion fields");
        const int d = static_cast<int>(fields.size()) - 1;
        Driver driver;
        try {
            driver = driver_from_id(text("driver"), params("driver"), d);
        } catch (const UnknownIdentifier& e) {
            throw ConfigError("driver", e.what());
        }
        TerminalCost terminal;
        try {
            terminal = terminal_from_id(text("terminal"), params("terminal"), m);
        } catch (const UnknownIdentifier& e) {
            throw ConfigError("terminal", e.what());
        }
        return ControlProblem{m, std::move(fields), std::move(driver), std::move(terminal), controls(d)};
    }

    /// Checks every catalog reference and the step-size guards.
    void validate() const {
        static const std::vector<std::string> experiments = {"oracle-circle", "dpp-check",  "solver-agreement",
                                                              "estimates",     "hypotheses", "convergence-table",
                                                              "max-principle"};
        if (std::find(experiments.begin(), experiments.end(), experiment()) == experiments.end())
            throw ConfigError("experiment", "unknown experiment '" + experiment() + "'");
        const ControlProblem pb = problem();
        const TimeGrid grid = time_grid();
        if (!(pb.driver.lipschitz_K * grid.dt() < 1.0))
            throw ConfigError("time.n_steps", "K*dt must be < 1");
        x0(pb.manifold);
        probe(pb.manifold);
        mesh_sizes();
        seed();
        count("workers");
        for (const char* k : {"mc.n_paths", "mc.n_sub", "mc.window_paths", "window.n_paths"})
            if (count(k, 2) % 2 != 0) throw ConfigError(k, "must be even (antithetic pairs)");
        count("mc.basis_degree", 1);
        count("mc.picard_iters", 1);
        if (number("hjb.cfl") <= 0.0) throw ConfigError("hjb.cfl", "must be positive");
        const std::size_t hjb_steps = count("hjb.n_steps");
        if (hjb_steps > 0) {
            const ManifoldMesh mesh(pb.manifold, mesh_sizes());
            const double h = mesh.spacing();
            const double ratio = (grid.T() - grid.t0()) / static_cast<double>(hjb_steps) *
                                 max_diffusion_speed(pb.controls) / (h * h);
            if (ratio > number("hjb.cfl")) throw ConfigError("hjb.n_steps", "violates the CFL guard");
            if (hjb_steps % grid.n_steps() != 0)
                throw ConfigError("hjb.n_steps", "must be a multiple of time.n_steps");
        }
        for (const auto& [k, v] : values_)
            if (k.rfind("tol.", 0) == 0) detail::parse_number(k, v);
        if (experiment() == "convergence-table" && numbers("convergence.meshes").size() < 3)
            throw ConfigError("convergence.meshes", "ladder needs at least 3 levels");
    }

private:
    std::map<std::string, std::string> values_;
};

}  // namespace rsoc
