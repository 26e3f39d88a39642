#pragma once

#include <variant>
#include <vector>

#include "curve.hpp"
#include "errors.hpp"
#include "linalg.hpp"

namespace persuasion {

struct IdentityMap {};

// g(w) = B w + offset
struct LinearMap {
    Mat B;
    Vec offset;
};

// g(w) = w * psi(|w|^2)
struct RadialScaledMap {
    ScalarCurve psi;
};

// g_j(w) = sum_p coeffs[j][p] * w_j^p
struct ComponentwisePolyMap {
    std::vector<std::vector<double>> coeffs;
};

using MomentMapSpec = std::variant<IdentityMap, LinearMap, RadialScaledMap, ComponentwisePolyMap>;

inline MomentMapSpec make_linear_map(Mat B, Vec offset = Vec()) {
    if (offset.size() == 0) offset = Vec::Zero(B.rows());
    if (offset.size() != B.rows()) throw ConfigurationError("linear map offset dimension mismatch");
    return LinearMap{std::move(B), std::move(offset)};
}

inline Index map_out_dim(const MomentMapSpec& g, Index L) {
    struct V {
        Index L;
        Index operator()(const IdentityMap&) const { return L; }
        Index operator()(const LinearMap& m) const { return m.B.rows(); }
        Index operator()(const RadialScaledMap&) const { return L; }
        Index operator()(const ComponentwisePolyMap&) const { return L; }
    };
    return std::visit(V{L}, g);
}

inline void validate_map(const MomentMapSpec& g, Index L) {
    if (const auto* m = std::get_if<LinearMap>(&g)) {
        if (m->B.cols() != L || m->B.rows() == 0) throw ConfigurationError("linear map B must have stateDim columns");
        if (!m->B.allFinite() || !m->offset.allFinite()) throw ConfigurationError("linear map must be finite");
    }
    if (const auto* p = std::get_if<ComponentwisePolyMap>(&g))
        if (static_cast<Index>(p->coeffs.size()) != L) throw ConfigurationError("componentwise map needs one polynomial per state coordinate");
}

inline Vec eval_g(const MomentMapSpec& g, const Vec& w) {
    struct V {
        const Vec& w;
        Vec operator()(const IdentityMap&) const { return w; }
        Vec operator()(const LinearMap& m) const { return m.B * w + m.offset; }
        Vec operator()(const RadialScaledMap& m) const { return w * m.psi(w.squaredNorm()); }
        Vec operator()(const ComponentwisePolyMap& m) const {
            Vec out(w.size());
            for (Index j = 0; j < w.size(); ++j) {
                double v = 0.0;
                const auto& c = m.coeffs[static_cast<std::size_t>(j)];
                for (std::size_t p = c.size(); p-- > 0;) v = v * w[j] + c[p];
                out[j] = v;
            }
            return out;
        }
    };
    Vec out = std::visit(V{w}, g);
    if (!out.allFinite()) throw NumericDomainError("moment map produced a non-finite value");
    return out;
}

inline Mat jac_g(const MomentMapSpec& g, const Vec& w) {
    struct V {
        const Vec& w;
        Mat operator()(const IdentityMap&) const { return Mat::Identity(w.size(), w.size()); }
        Mat operator()(const LinearMap& m) const { return m.B; }
        Mat operator()(const RadialScaledMap& m) const {
            const CurveValue p = m.psi.eval(w.squaredNorm());
            return p.v * Mat::Identity(w.size(), w.size()) + 2.0 * p.d1 * w * w.transpose();
        }
        Mat operator()(const ComponentwisePolyMap& m) const {
            Mat J = Mat::Zero(w.size(), w.size());
            for (Index j = 0; j < w.size(); ++j) {
                const auto& c = m.coeffs[static_cast<std::size_t>(j)];
                double d = 0.0;
                for (std::size_t p = c.size(); p-- > 1;) d = d * w[j] + static_cast<double>(p) * c[p];
                J(j, j) = d;
            }
            return J;
        }
    };
    return std::visit(V{w}, g);
}

// Map every column of a point matrix.
inline Mat eval_g_all(const MomentMapSpec& g, const Mat& pts) {
    if (std::holds_alternative<IdentityMap>(g)) return pts;
    const Index M = map_out_dim(g, pts.rows());
    Mat out(M, pts.cols());
    for (Index i = 0; i < pts.cols(); ++i) out.col(i) = eval_g(g, pts.col(i));
    return out;
}

}  // namespace persuasion
