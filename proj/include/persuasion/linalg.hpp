#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>

#include "errors.hpp"

namespace persuasion {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Index = Eigen::Index;

inline double fd_step(double x) {
    static const double base = std::cbrt(std::numeric_limits<double>::epsilon());
    return base * std::max(1.0, std::abs(x));
}

// value-only second differences need a coarser step
inline double fd_step2(double x) {
    static const double base = std::pow(std::numeric_limits<double>::epsilon(), 0.25);
    return base * std::max(1.0, std::abs(x));
}

template <class F>
Vec fd_gradient(F&& f, const Vec& x) {
    Vec g(x.size());
    Vec xp = x;
    for (Index i = 0; i < x.size(); ++i) {
        const double h = fd_step(x[i]);
        xp[i] = x[i] + h;
        const double fp = f(xp);
        xp[i] = x[i] - h;
        const double fm = f(xp);
        xp[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

template <class F>
Mat fd_hessian(F&& f, const Vec& x) {
    const Index n = x.size();
    Mat H(n, n);
    Vec xp = x;
    const double f0 = f(x);
    for (Index i = 0; i < n; ++i) {
        const double hi = fd_step2(x[i]);
        xp[i] = x[i] + hi;
        const double fp = f(xp);
        xp[i] = x[i] - hi;
        const double fm = f(xp);
        xp[i] = x[i];
        H(i, i) = (fp - 2.0 * f0 + fm) / (hi * hi);
        for (Index j = i + 1; j < n; ++j) {
            const double hj = fd_step2(x[j]);
            auto at = [&](double si, double sj) {
                xp[i] = x[i] + si * hi;
                xp[j] = x[j] + sj * hj;
                const double v = f(xp);
                xp[i] = x[i];
                xp[j] = x[j];
                return v;
            };
            const double v = (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4.0 * hi * hj);
            H(i, j) = v;
            H(j, i) = v;
        }
    }
    return H;
}

// Jacobian of a vector map, rows = outputs.
template <class F>
Mat fd_jacobian(F&& f, const Vec& x) {
    Vec xp = x;
    Mat J;
    for (Index j = 0; j < x.size(); ++j) {
        const double h = fd_step(x[j]);
        xp[j] = x[j] + h;
        const Vec fp = f(xp);
        xp[j] = x[j] - h;
        const Vec fm = f(xp);
        xp[j] = x[j];
        if (j == 0) J.resize(fp.size(), x.size());
        J.col(j) = (fp - fm) / (2.0 * h);
    }
    return J;
}

inline Mat symmetrize(const Mat& A) { return 0.5 * (A + A.transpose()); }

inline bool all_finite(const Vec& v) { return v.allFinite(); }

inline Eigen::SelfAdjointEigenSolver<Mat> sym_eigen(const Mat& A) {
    Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(A));
    if (es.info() != Eigen::Success) throw NumericDomainError("symmetric eigen-solver failed");
    return es;
}

// Symmetric square root and inverse square root of an SPD matrix.
inline Mat spd_sqrt(const Mat& S) {
    auto es = sym_eigen(S);
    return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
           es.eigenvectors().transpose();
}

inline Mat spd_inv_sqrt(const Mat& S) {
    auto es = sym_eigen(S);
    if (es.eigenvalues().minCoeff() <= 0.0) throw ConfigurationError("matrix is not positive definite");
    return es.eigenvectors() * es.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() *
           es.eigenvectors().transpose();
}

inline double condition_number(const Mat& A) {
    Eigen::JacobiSVD<Mat> svd(A);
    const auto& s = svd.singularValues();
    if (s.size() == 0) return 1.0;
    const double lo = s[s.size() - 1];
    if (lo == 0.0) return std::numeric_limits<double>::infinity();
    return s[0] / lo;
}

}  // namespace persuasion
