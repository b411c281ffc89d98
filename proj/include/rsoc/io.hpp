#pragma once

// CSV and JSON writers. Numbers are printed with 17 significant digits so
// outputs round-trip and compare byte for byte.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rsoc/dynamics.hpp"
#include "rsoc/hypotheses.hpp"
#include "rsoc/value.hpp"

namespace rsoc::io {

using Json = nlohmann::ordered_json;

inline std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
}

/// One row per (time layer, node). The last layer has no control, so its
/// control cells are empty.
inline std::string field_csv(const MeshField& f) {
    std::ostringstream os;
    const int n_amb = f.mesh.manifold().ambient_dim();
    int n_ctl = 0;
    if (!f.argmin.empty()) n_ctl = static_cast<int>(f.argmin.front().size());
    os << "step,time,node";
    for (int k = 0; k < n_amb; ++k) os << ",x" << k;
    os << ",u";
    for (int k = 0; k < n_ctl; ++k) os << ",v" << k;
    os << '\n';
    for (std::size_t i = 0; i <= f.n_steps(); ++i)
        for (std::size_t j = 0; j < f.n_nodes(); ++j) {
            os << i << ',' << num(f.grid.time(i)) << ',' << j;
            const Vec& x = f.mesh.node(j);
            for (int k = 0; k < n_amb; ++k) os << ',' << num(x(k));
            os << ',' << num(f.at(i, j));
            for (int k = 0; k < n_ctl; ++k) {
                os << ',';
                if (i < f.n_steps()) os << num(f.control(i, j)(k));
            }
            os << '\n';
        }
    return os.str();
}

inline std::string paths_csv(const TrajectoryEnsemble& ens, std::size_t max_paths) {
    std::ostringstream os;
    const int n_amb = ens.manifold().ambient_dim();
    os << "path,step,time";
    for (int k = 0; k < n_amb; ++k) os << ",x" << k;
    os << ",violation\n";
    const std::size_t np = std::min(max_paths, ens.n_paths());
    for (std::size_t p = 0; p < np; ++p)
        for (std::size_t i = 0; i <= ens.n_steps(); ++i) {
            const Vec& x = ens.state(i, p);
            os << p << ',' << i << ',' << num(ens.grid().time(i));
            for (int k = 0; k < n_amb; ++k) os << ',' << num(x(k));
            os << ',' << num(ens.manifold().constraint_violation(x)) << '\n';
        }
    return os.str();
}

inline std::string dpp_csv(const std::vector<DppReport>& reports) {
    std::ostringstream os;
    os << "delta,step,node,stored,recomputed,residual\n";
    for (const auto& r : reports)
        for (const auto& e : r.residuals)
            os << r.delta_steps << ',' << e.step << ',' << e.node << ',' << num(e.stored) << ','
               << num(e.recomputed) << ',' << num(e.residual) << '\n';
    return os.str();
}

struct ConvergenceRow {
    std::size_t level = 0;
    std::size_t mesh_size = 0;
    std::size_t n_steps = 0;
    std::size_t n_paths = 0;
    double spacing = 0.0;
    double dt = 0.0;
    double error = 0.0;
    double ratio = 0.0;
};

inline std::string convergence_csv(const std::vector<ConvergenceRow>& rows) {
    std::ostringstream os;
    os << "level,mesh_size,n_steps,n_paths,spacing,dt,error,ratio\n";
    for (const auto& r : rows)
        os << r.level << ',' << r.mesh_size << ',' << r.n_steps << ',' << r.n_paths << ',' << num(r.spacing) << ','
           << num(r.dt) << ',' << num(r.error) << ',' << num(r.ratio) << '\n';
    return os.str();
}

inline std::string metrics_csv(const std::map<std::string, double>& metrics) {
    std::ostringstream os;
    os << "name,value\n";
    for (const auto& [k, v] : metrics) os << k << ',' << num(v) << '\n';
    return os.str();
}

/// Column documentation for every CSV the runner emits.
inline std::string schema_csv() {
    return "file,column,type,description\n"
           "metrics.csv,name,string,metric name\n"
           "metrics.csv,value,float,metric value\n"
           "value_field.csv,step,int,time layer index\n"
           "value_field.csv,time,float,time of the layer\n"
           "value_field.csv,node,int,mesh node index\n"
           "value_field.csv,x<k>,float,ambient coordinate k of the node\n"
           "value_field.csv,u,float,value at (layer; node)\n"
           "value_field.csv,v<k>,float,minimizing control component k (empty on the terminal layer)\n"
           "hjb_field.csv,*,*,same columns as value_field.csv\n"
           "value_field_refined.csv,*,*,same columns as value_field.csv\n"
           "hjb_field_refined.csv,*,*,same columns as value_field.csv\n"
           "dpp_residuals.csv,delta,int,window length in steps\n"
           "dpp_residuals.csv,step,int,probe time layer\n"
           "dpp_residuals.csv,node,int,probe mesh node\n"
           "dpp_residuals.csv,stored,float,value stored in the field\n"
           "dpp_residuals.csv,recomputed,float,min over controls of the window semigroup with fresh noise\n"
           "dpp_residuals.csv,residual,float,absolute difference\n"
           "convergence.csv,level,int,ladder level\n"
           "convergence.csv,mesh_size,int,number of mesh nodes\n"
           "convergence.csv,n_steps,int,time steps\n"
           "convergence.csv,n_paths,int,Monte Carlo paths (0 for the PDE solver)\n"
           "convergence.csv,spacing,float,mesh spacing\n"
           "convergence.csv,dt,float,time step\n"
           "convergence.csv,error,float,max abs error against the closed form\n"
           "convergence.csv,ratio,float,error of previous level over this level (1 when both are below 1e-10)\n"
           "paths.csv,path,int,path index\n"
           "paths.csv,step,int,time layer index\n"
           "paths.csv,time,float,time\n"
           "paths.csv,x<k>,float,ambient coordinate k\n"
           "paths.csv,violation,float,embedding constraint violation\n";
}

template <typename Derived>
Json to_json(const Eigen::MatrixBase<Derived>& v) {
    Json a = Json::array();
    for (Eigen::Index k = 0; k < v.size(); ++k) a.push_back(v(k));
    return a;
}

inline Json to_json(const HypothesisReport& r) {
    Json j;
    j["name"] = r.name;
    j["pass"] = r.pass;
    j["max_violation"] = r.max_violation;
    j["threshold"] = r.threshold;
    j["samples"] = r.samples;
    j["seed"] = r.seed;
    Json w;
    w["x"] = to_json(r.witness.x);
    w["y"] = to_json(r.witness.y);
    w["t"] = r.witness.t;
    w["v"] = to_json(r.witness.v);
    if (r.witness.alpha != 0.0) w["alpha"] = r.witness.alpha;
    j["witness"] = w;
    return j;
}

}  // namespace rsoc::io
