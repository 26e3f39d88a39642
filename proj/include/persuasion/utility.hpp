#pragma once

#include <functional>
#include <string>
#include <variant>
#include <vector>

#include "curve.hpp"
#include "errors.hpp"
#include "linalg.hpp"

namespace persuasion {

// W(a) = a'Ha + h'a
struct QuadraticUtility {
    Mat H;
    Vec h;
};

// W(a) = a_1 * sum_i G_i(a_{i+1})
struct ProductAcceptanceUtility {
    std::vector<ScalarCurve> G;
};

// W(a) = sum_i a_i G_i(a_{i+N})
struct MultiProductUtility {
    std::vector<ScalarCurve> G;
};

// W(a) = phi(a'Ha)
struct RadialUtility {
    Mat H;
    ScalarCurve phi;
};

struct CustomUtility {
    std::function<double(const Vec&)> W;
    Index dim = 0;
};

using UtilitySpec = std::variant<QuadraticUtility, ProductAcceptanceUtility, MultiProductUtility, RadialUtility, CustomUtility>;

inline UtilitySpec make_quadratic(const Mat& H, Vec h = Vec()) {
    if (H.rows() != H.cols() || H.rows() == 0) throw ConfigurationError("quadratic H must be square");
    if (h.size() == 0) h = Vec::Zero(H.rows());
    if (h.size() != H.rows()) throw ConfigurationError("quadratic h dimension mismatch");
    return QuadraticUtility{symmetrize(H), std::move(h)};
}

inline UtilitySpec make_radial(const Mat& H, ScalarCurve phi) {
    if (H.rows() != H.cols() || H.rows() == 0) throw ConfigurationError("radial H must be square");
    return RadialUtility{symmetrize(H), std::move(phi)};
}

inline Index utility_dim(const UtilitySpec& u) {
    struct V {
        Index operator()(const QuadraticUtility& q) const { return q.H.rows(); }
        Index operator()(const ProductAcceptanceUtility& p) const { return static_cast<Index>(p.G.size()) + 1; }
        Index operator()(const MultiProductUtility& p) const { return 2 * static_cast<Index>(p.G.size()); }
        Index operator()(const RadialUtility& r) const { return r.H.rows(); }
        Index operator()(const CustomUtility& c) const { return c.dim; }
    };
    return std::visit(V{}, u);
}

struct WEval {
    double value = 0.0;
    Vec grad;
    Mat hess;
};

namespace detail {

inline double custom_value(const CustomUtility& c, const Vec& a) {
    const double v = c.W(a);
    if (!std::isfinite(v)) throw NumericDomainError("custom utility returned a non-finite value");
    return v;
}

}  // namespace detail

inline double W_value(const UtilitySpec& u, const Vec& a) {
    struct V {
        const Vec& a;
        double operator()(const QuadraticUtility& q) const { return a.dot(q.H * a) + q.h.dot(a); }
        double operator()(const ProductAcceptanceUtility& p) const {
            double s = 0.0;
            for (std::size_t i = 0; i < p.G.size(); ++i) s += p.G[i](a[static_cast<Index>(i) + 1]);
            return a[0] * s;
        }
        double operator()(const MultiProductUtility& p) const {
            const Index N = static_cast<Index>(p.G.size());
            double s = 0.0;
            for (Index i = 0; i < N; ++i) s += a[i] * p.G[static_cast<std::size_t>(i)](a[i + N]);
            return s;
        }
        double operator()(const RadialUtility& r) const { return r.phi(a.dot(r.H * a)); }
        double operator()(const CustomUtility& c) const { return detail::custom_value(c, a); }
    };
    return std::visit(V{a}, u);
}

inline WEval eval_W(const UtilitySpec& u, const Vec& a) {
    if (!a.allFinite()) throw NumericDomainError("utility evaluated at a non-finite action");
    struct V {
        const Vec& a;
        WEval operator()(const QuadraticUtility& q) const {
            Vec Ha = q.H * a;
            return {a.dot(Ha) + q.h.dot(a), 2.0 * Ha + q.h, 2.0 * q.H};
        }
        WEval operator()(const ProductAcceptanceUtility& p) const {
            const Index M = a.size();
            WEval out{0.0, Vec::Zero(M), Mat::Zero(M, M)};
            double s = 0.0;
            for (Index i = 1; i < M; ++i) {
                const CurveValue g = p.G[static_cast<std::size_t>(i - 1)].eval(a[i]);
                s += g.v;
                out.grad[i] = a[0] * g.d1;
                out.hess(0, i) = out.hess(i, 0) = g.d1;
                out.hess(i, i) = a[0] * g.d2;
            }
            out.value = a[0] * s;
            out.grad[0] = s;
            return out;
        }
        WEval operator()(const MultiProductUtility& p) const {
            const Index N = static_cast<Index>(p.G.size());
            WEval out{0.0, Vec::Zero(2 * N), Mat::Zero(2 * N, 2 * N)};
            for (Index i = 0; i < N; ++i) {
                const CurveValue g = p.G[static_cast<std::size_t>(i)].eval(a[i + N]);
                out.value += a[i] * g.v;
                out.grad[i] = g.v;
                out.grad[i + N] = a[i] * g.d1;
                out.hess(i, i + N) = out.hess(i + N, i) = g.d1;
                out.hess(i + N, i + N) = a[i] * g.d2;
            }
            return out;
        }
        WEval operator()(const RadialUtility& r) const {
            Vec Ha = r.H * a;
            const CurveValue f = r.phi.eval(a.dot(Ha));
            return {f.v, 2.0 * f.d1 * Ha, 4.0 * f.d2 * Ha * Ha.transpose() + 2.0 * f.d1 * r.H};
        }
        WEval operator()(const CustomUtility& c) const {
            auto fn = [&](const Vec& x) { return detail::custom_value(c, x); };
            return {fn(a), fd_gradient(fn, a), fd_hessian(fn, a)};
        }
    };
    WEval out = std::visit(V{a}, u);
    if (!std::isfinite(out.value) || !out.grad.allFinite() || !out.hess.allFinite())
        throw NumericDomainError("utility evaluation produced a non-finite result");
    return out;
}

inline Vec W_grad(const UtilitySpec& u, const Vec& a) {
    if (const auto* q = std::get_if<QuadraticUtility>(&u)) return 2.0 * (q->H * a) + q->h;
    if (const auto* c = std::get_if<CustomUtility>(&u))
        return fd_gradient([&](const Vec& x) { return detail::custom_value(*c, x); }, a);
    return eval_W(u, a).grad;
}

inline void validate_utility(const UtilitySpec& u, Index M) {
    const Index d = utility_dim(u);
    if (d != M) throw ConfigurationError("utility dimension " + std::to_string(d) + " does not match action dimension " + std::to_string(M));
    if (const auto* q = std::get_if<QuadraticUtility>(&u))
        if (!q->H.allFinite() || !q->h.allFinite()) throw ConfigurationError("quadratic utility must be finite");
    if (const auto* r = std::get_if<RadialUtility>(&u)) {
        Eigen::SelfAdjointEigenSolver<Mat> es(r->H);
        if (es.info() != Eigen::Success || !(es.eigenvalues().minCoeff() > 0.0))
            throw ConfigurationError("radial utility H must be positive definite");
    }
    if (const auto* c = std::get_if<CustomUtility>(&u))
        if (!c->W) throw ConfigurationError("custom utility has no evaluator");
}

}  // namespace persuasion
