#pragma once

#include <Eigen/Dense>

namespace rsoc {

// Ambient dimension never exceeds 4 in the manifold catalog, so vectors live
// on the stack.
using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 4, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, 4, 4>;

/// A point (v0, v1, ..., vd) of the control set U in R^{d+1}.
using ControlValue = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 8, 1>;

inline Vec make_vec(std::initializer_list<double> values) {
    Vec v(static_cast<Eigen::Index>(values.size()));
    Eigen::Index i = 0;
    for (double x : values) v(i++) = x;
    return v;
}

inline ControlValue make_control(std::initializer_list<double> values) {
    ControlValue v(static_cast<Eigen::Index>(values.size()));
    Eigen::Index i = 0;
    for (double x : values) v(i++) = x;
    return v;
}

}  // namespace rsoc
