#pragma once

// Least-squares conditional expectation on ambient monomial features.

#include <functional>
#include <span>
#include <vector>

#include "rsoc/errors.hpp"
#include "rsoc/linalg.hpp"

namespace rsoc {

/// Sequential mean; the fixed summation order keeps results independent of
/// the worker count.
inline double path_mean(std::span<const double> values) {
    double s = 0.0;
    for (double v : values) s += v;
    return s / static_cast<double>(values.size());
}

/// All monomials of the ambient coordinates with total degree <= degree.
class RegressionBasis {
public:
    RegressionBasis(int ambient_dim, int degree = 2) : ambient_dim_(ambient_dim), degree_(degree) {
        std::vector<int> e(static_cast<std::size_t>(ambient_dim), 0);
        build(e, 0, degree);
    }

    int degree() const noexcept { return degree_; }
    int ambient_dim() const noexcept { return ambient_dim_; }
    std::size_t size() const noexcept { return exponents_.size(); }

    void features(const Vec& x, std::span<double> out) const {
        for (std::size_t k = 0; k < exponents_.size(); ++k) {
            double v = 1.0;
            for (int j = 0; j < ambient_dim_; ++j)
                for (int r = 0; r < exponents_[k][static_cast<std::size_t>(j)]; ++r) v *= x(j);
            out[k] = v;
        }
    }

private:
    void build(std::vector<int>& e, int j, int remaining) {
        if (j == ambient_dim_) {
            exponents_.push_back(e);
            return;
        }
        for (int r = 0; r <= remaining; ++r) {
            e[static_cast<std::size_t>(j)] = r;
            build(e, j + 1, remaining - r);
        }
        e[static_cast<std::size_t>(j)] = 0;
    }

    int ambient_dim_;
    int degree_;
    std::vector<std::vector<int>> exponents_;
};

/// Estimator of E[ . | X_i] for one time layer. When every path sits at the
/// same state the estimator is the plain sample mean.
class ConditionalExpectation {
public:
    static constexpr double kMaxCondition = 1e12;
    static constexpr double kRankThreshold = 1e-10;

    ConditionalExpectation(std::size_t n_paths, const std::function<const Vec&(std::size_t)>& state,
                           const RegressionBasis& basis)
        : n_paths_(n_paths) {
        const Vec& first = state(0);
        bool shared = true;
        for (std::size_t p = 1; p < n_paths && shared; ++p) shared = (state(p) == first);
        if (shared) {
            degree_used_ = 0;
            return;
        }
        if (!try_fit(state, basis)) {
            const RegressionBasis linear(basis.ambient_dim(), 1);
            if (basis.degree() <= 1 || !try_fit(state, linear))
                throw IllConditionedRegression("normal-equations condition number " + std::to_string(condition_) +
                                               " exceeds 1e12 even at degree 1");
        }
    }

    bool averaging() const noexcept { return degree_used_ == 0; }
    int degree_used() const noexcept { return degree_used_; }
    double condition() const noexcept { return condition_; }

    /// Fitted conditional expectation for every path.
    std::vector<double> operator()(std::span<const double> values) const {
        std::vector<double> out(n_paths_);
        if (averaging()) {
            std::fill(out.begin(), out.end(), path_mean(values));
            return out;
        }
        const Eigen::Map<const Eigen::VectorXd> b(values.data(), static_cast<Eigen::Index>(values.size()));
        const Eigen::VectorXd fitted = range_ * (range_.transpose() * b);
        for (std::size_t p = 0; p < n_paths_; ++p) out[p] = fitted(static_cast<Eigen::Index>(p));
        return out;
    }

private:
    bool try_fit(const std::function<const Vec&(std::size_t)>& state, const RegressionBasis& basis) {
        const auto nf = static_cast<Eigen::Index>(basis.size());
        design_.resize(static_cast<Eigen::Index>(n_paths_), nf);
        std::vector<double> row(basis.size());
        for (std::size_t p = 0; p < n_paths_; ++p) {
            basis.features(state(p), row);
            for (Eigen::Index k = 0; k < nf; ++k) design_(static_cast<Eigen::Index>(p), k) = row[static_cast<std::size_t>(k)];
        }
        qr_.setThreshold(kRankThreshold);
        qr_.compute(design_);
        const auto rank = qr_.rank();
        const auto& r = qr_.matrixR();
        const double top = std::abs(r(0, 0));
        const double bottom = std::abs(r(rank - 1, rank - 1));
        condition_ = (top / bottom) * (top / bottom);
        degree_used_ = basis.degree();
        if (condition_ > kMaxCondition) return false;
        // Orthonormal basis of the numerical column space. Projecting onto it
        // keeps the fit linear in the data; the solver's own pivot count can
        // include the near-zero pivot of an exactly collinear monomial.
        range_ = qr_.householderQ() * Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(n_paths_), rank);
        return true;
    }

    std::size_t n_paths_;
    int degree_used_ = 0;
    double condition_ = 1.0;
    Eigen::MatrixXd design_;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr_;
    Eigen::MatrixXd range_;
};

}  // namespace rsoc
