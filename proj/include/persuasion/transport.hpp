#pragma once

#include <cmath>
#include <functional>
#include <numbers>
#include <vector>

#include "cloud.hpp"
#include "errors.hpp"
#include "linalg.hpp"
#include "manifold_spec.hpp"
#include "parallel.hpp"
#include "problem.hpp"
#include "utility.hpp"

namespace persuasion {

inline double bregman_divergence(const UtilitySpec& u, const Vec& a, const Vec& b) {
    if (!a.allFinite() || !b.allFinite()) throw NumericDomainError("divergence evaluated at a non-finite point");
    if (a == b) return 0.0;
    return W_value(u, b) - W_value(u, a) + W_grad(u, a).dot(a - b);
}

// c(a, w; x) = W(a_*(w)) - W(a) + x'G(a, w)
inline double transport_cost(const ProblemSpec& p, const Vec& a, const Vec& x, const Vec& w) {
    const Vec astar = full_info_action(p, w);
    return W_value(p.utility, astar) - W_value(p.utility, a) + x.dot(eval_G(p, a, w));
}

struct MultiplierRecord {
    Vec action;
    Vec multiplier;
    Vec barGradW;
    Mat barJacG;
};

inline constexpr double kMaxCellCondition = 1e12;

// x' = barGradW' barJacG^{-1} with cell-weighted averages.
inline MultiplierRecord multiplier_subset(const ProblemSpec& p, const Mat& pts, const Vec& weights,
                                          const std::vector<Index>& idx, const Vec& a) {
    if (idx.empty()) throw PreconditionError("multiplier needs a nonempty cell");
    MultiplierRecord rec;
    rec.action = a;
    rec.barGradW = W_grad(p.utility, a);
    if (p.is_moment()) {
        rec.barJacG = Mat::Identity(a.size(), a.size());
        rec.multiplier = rec.barGradW;
        return rec;
    }
    Mat J = Mat::Zero(a.size(), a.size());
    double mass = 0.0;
    for (Index i : idx) {
        J += weights[i] * jac_a_G(p, a, pts.col(i));
        mass += weights[i];
    }
    rec.barJacG = J / mass;
    const double cond = condition_number(rec.barJacG);
    if (!(cond <= kMaxCellCondition)) throw DegenerateCellError("cell Jacobian is ill-conditioned", cond);
    rec.multiplier = rec.barJacG.transpose().fullPivLu().solve(rec.barGradW);
    return rec;
}

inline MultiplierRecord multiplier(const ProblemSpec& p, const ParticleCloud& cell, const Vec& a) {
    std::vector<Index> idx(static_cast<std::size_t>(cell.size()));
    for (Index i = 0; i < cell.size(); ++i) idx[static_cast<std::size_t>(i)] = i;
    return multiplier_subset(p, cell.points, cell.weights, idx, a);
}

struct ProjectionResult {
    Vec a;
    double cost = 0.0;
    Index index = 0;  // discretization index of the winning scan point
};

struct ProjectionOptions {
    Index scan1d = 720;     // scan points for one-parameter manifolds
    Index scanTotal = 20000;  // cap on scan size for several parameters
    bool refine = true;
};

namespace detail {

// Gradient of c(., b) in a: Hess W(a) (a - b).
inline Vec divergence_grad_a(const UtilitySpec& u, const Vec& a, const Vec& b) {
    return eval_W(u, a).hess * (a - b);
}

inline double golden_min(const std::function<double(double)>& f, double lo, double hi, double& fbest) {
    constexpr double r = 0.6180339887498949;
    double x1 = hi - r * (hi - lo), x2 = lo + r * (hi - lo);
    double f1 = f(x1), f2 = f(x2);
    for (int it = 0; it < 200 && (hi - lo) > 1e-13 * (1.0 + std::abs(lo) + std::abs(hi)); ++it) {
        if (f1 <= f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = f(x2);
        }
    }
    if (f1 <= f2) {
        fbest = f1;
        return x1;
    }
    fbest = f2;
    return x2;
}

struct Parametrization {
    Index dim = 0;
    std::function<Vec(const Vec&)> map;
    std::vector<Vec> scan;
    Vec spacing;
    Vec lo, hi;  // refinement clamps
    bool smooth = true;  // Newton polish allowed
};

inline ProjectionResult project_param(const UtilitySpec& u, const Parametrization& P, const Vec& b,
                                      const ProjectionOptions& opt) {
    if (P.scan.empty()) throw ConfigurationError("empty manifold discretization");
    const double Wb = W_value(u, b);
    auto costAt = [&](const Vec& t) {
        const Vec a = P.map(t);
        if (a == b) return 0.0;
        return Wb - W_value(u, a) + W_grad(u, a).dot(a - b);
    };
    Index best = 0;
    double bestCost = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < P.scan.size(); ++k) {
        const double c = costAt(P.scan[k]);
        if (c < bestCost) {
            bestCost = c;
            best = static_cast<Index>(k);
        }
    }
    Vec t = P.scan[static_cast<std::size_t>(best)];
    if (opt.refine && P.dim > 0) {
        for (int sweep = 0; sweep < 3; ++sweep) {
            for (Index j = 0; j < P.dim; ++j) {
                const double lo = std::max(P.lo[j], t[j] - P.spacing[j]);
                const double hi = std::min(P.hi[j], t[j] + P.spacing[j]);
                if (!(hi > lo)) continue;
                Vec tt = t;
                double fb;
                const double xj = golden_min(
                    [&](double s) {
                        tt[j] = s;
                        return costAt(tt);
                    },
                    lo, hi, fb);
                if (fb < bestCost) {
                    bestCost = fb;
                    t[j] = xj;
                }
            }
        }
        if (P.smooth) {
            auto gradT = [&](const Vec& tt) {
                const Vec a = P.map(tt);
                const Mat J = fd_jacobian(P.map, tt);
                return Vec(J.transpose() * divergence_grad_a(u, a, b));
            };
            for (int it = 0; it < 12; ++it) {
                const Vec g = gradT(t);
                if (g.norm() < 1e-15) break;
                Mat Hh(P.dim, P.dim);
                for (Index j = 0; j < P.dim; ++j) {
                    const double h = 1e-6 * std::max(1.0, std::abs(t[j]));
                    Vec tp = t, tm = t;
                    tp[j] += h;
                    tm[j] -= h;
                    Hh.col(j) = (gradT(tp) - gradT(tm)) / (2.0 * h);
                }
                Hh = symmetrize(Hh);
                Eigen::LLT<Mat> llt(Hh);
                if (llt.info() != Eigen::Success) break;
                Vec step = -llt.solve(g);
                bool moved = false;
                for (int ls = 0; ls < 8; ++ls, step *= 0.5) {
                    Vec cand = (t + step).cwiseMax(P.lo).cwiseMin(P.hi);
                    const double c = costAt(cand);
                    if (c <= bestCost + 1e-15 * (1.0 + std::abs(bestCost)) && gradT(cand).norm() < g.norm()) {
                        bestCost = std::min(bestCost, c);
                        t = cand;
                        moved = true;
                        break;
                    }
                }
                if (!moved || step.norm() < 1e-15 * (1.0 + t.norm())) break;
            }
        }
    }
    ProjectionResult res;
    res.a = P.map(t);
    res.cost = costAt(t);
    res.index = best;
    return res;
}

inline Parametrization hyperplane_param(const HyperplaneManifold& h, const Vec& b, const Mat& U,
                                        const ProjectionOptions& opt) {
    Parametrization P;
    P.dim = U.cols();
    const Vec o = h.offset;
    P.map = [U, o](const Vec& t) { return Vec(o + U * t); };
    const Vec t0 = U.transpose() * (b - o);
    const double R = 2.0 * std::max(1.0, (b - o).norm());
    Index per = P.dim == 1 ? opt.scan1d + 1
                           : std::max<Index>(3, static_cast<Index>(std::pow(static_cast<double>(opt.scanTotal),
                                                                            1.0 / static_cast<double>(P.dim))));
    if (per % 2 == 0) ++per;
    const double step = 2.0 * R / static_cast<double>(per - 1);
    P.spacing = Vec::Constant(P.dim, step);
    P.lo = Vec::Constant(P.dim, -std::numeric_limits<double>::infinity());
    P.hi = -P.lo;
    std::vector<Index> idx(static_cast<std::size_t>(P.dim), 0);
    for (;;) {
        Vec t(P.dim);
        for (Index j = 0; j < P.dim; ++j) t[j] = t0[j] - R + step * static_cast<double>(idx[static_cast<std::size_t>(j)]);
        P.scan.push_back(t);
        Index j = P.dim;
        while (j-- > 0) {
            if (++idx[static_cast<std::size_t>(j)] < per) break;
            idx[static_cast<std::size_t>(j)] = 0;
        }
        if (j < 0) break;
    }
    return P;
}

inline Parametrization sphere_param(const SphereManifold& s, const ProjectionOptions& opt) {
    const Index M = s.center.size();
    Parametrization P;
    P.dim = M - 1;
    const Vec c = s.center;
    const double beta = s.radius;
    P.map = [c, beta, M](const Vec& t) {
        Vec a(M);
        double sprod = 1.0;
        for (Index j = 0; j + 1 < M; ++j) {
            a[j] = sprod * std::cos(t[j]);
            sprod *= std::sin(t[j]);
        }
        a[M - 1] = sprod;
        return Vec(c + beta * a);
    };
    // last angle spans the full circle, earlier ones [0, pi]
    std::vector<Index> per(static_cast<std::size_t>(P.dim));
    if (P.dim == 1) {
        per[0] = opt.scan1d;
    } else {
        const Index base = std::max<Index>(8, static_cast<Index>(std::pow(static_cast<double>(opt.scanTotal),
                                                                          1.0 / static_cast<double>(P.dim))));
        for (Index j = 0; j < P.dim; ++j) per[static_cast<std::size_t>(j)] = (j + 1 == P.dim) ? 2 * base : base;
    }
    P.spacing.resize(P.dim);
    P.lo.resize(P.dim);
    P.hi.resize(P.dim);
    for (Index j = 0; j < P.dim; ++j) {
        const bool full = (j + 1 == P.dim);
        const double span = full ? 2.0 * std::numbers::pi : std::numbers::pi;
        P.spacing[j] = span / static_cast<double>(per[static_cast<std::size_t>(j)]);
        P.lo[j] = full ? -std::numeric_limits<double>::infinity() : 0.0;
        P.hi[j] = full ? std::numeric_limits<double>::infinity() : std::numbers::pi;
    }
    std::vector<Index> idx(static_cast<std::size_t>(P.dim), 0);
    for (;;) {
        Vec t(P.dim);
        for (Index j = 0; j < P.dim; ++j) {
            const bool full = (j + 1 == P.dim);
            const double k = static_cast<double>(idx[static_cast<std::size_t>(j)]);
            t[j] = full ? k * P.spacing[j] : (k + 0.5) * P.spacing[j];
        }
        P.scan.push_back(t);
        Index j = P.dim;
        while (j-- > 0) {
            if (++idx[static_cast<std::size_t>(j)] < per[static_cast<std::size_t>(j)]) break;
            idx[static_cast<std::size_t>(j)] = 0;
        }
        if (j < 0) break;
    }
    return P;
}

inline Parametrization graph_param(const Graph1DManifold& g) {
    const Mat nodes = graph_nodes(g);
    const Index n = nodes.cols();
    Parametrization P;
    P.dim = n > 1 ? 1 : 0;
    P.map = [nodes, n](const Vec& t) {
        if (n == 1) return Vec(nodes.col(0));
        const double s = std::clamp(t[0], 0.0, static_cast<double>(n - 1));
        Index k = std::min<Index>(static_cast<Index>(std::floor(s)), n - 2);
        const double f = s - static_cast<double>(k);
        return Vec((1.0 - f) * nodes.col(k) + f * nodes.col(k + 1));
    };
    constexpr int sub = 4;
    for (Index k = 0; k < n; ++k) {
        Vec t(1);
        t[0] = static_cast<double>(k);
        P.scan.push_back(t);
        if (k + 1 < n)
            for (int q = 1; q < sub; ++q) {
                t[0] = static_cast<double>(k) + static_cast<double>(q) / sub;
                P.scan.push_back(t);
            }
    }
    P.spacing = Vec::Constant(1, 1.0 / sub);
    P.lo = Vec::Constant(1, 0.0);
    P.hi = Vec::Constant(1, static_cast<double>(std::max<Index>(n - 1, 0)));
    P.smooth = false;
    return P;
}

inline Mat orthonormal_range(const Mat& A) {
    Eigen::JacobiSVD<Mat> svd(A, Eigen::ComputeFullU);
    const auto& s = svd.singularValues();
    Index r = 0;
    const double thresh = 1e-10 * std::max(1.0, s.size() ? s[0] : 0.0);
    for (Index i = 0; i < s.size(); ++i)
        if (s[i] > thresh) ++r;
    return svd.matrixU().leftCols(r);
}

}  // namespace detail

inline ProjectionResult project_point_set(const UtilitySpec& u, const Mat& pts, const Vec& b) {
    if (pts.cols() == 0) throw ConfigurationError("empty manifold discretization");
    ProjectionResult res;
    res.cost = std::numeric_limits<double>::infinity();
    for (Index k = 0; k < pts.cols(); ++k) {
        const double c = bregman_divergence(u, pts.col(k), b);
        if (c < res.cost) {
            res.cost = c;
            res.index = k;
        }
    }
    res.a = pts.col(res.index);
    return res;
}

inline ProjectionResult bregman_project(const UtilitySpec& u, const ManifoldSpec& m, const Vec& b,
                                        const ProjectionOptions& opt = {}) {
    validate_manifold(m);
    if (manifold_dim(m) != b.size()) throw ConfigurationError("manifold and point dimensions differ");
    if (const auto* pc = std::get_if<PointCloudManifold>(&m)) return project_point_set(u, pc->points, b);
    if (const auto* h = std::get_if<HyperplaneManifold>(&m)) {
        const Mat U = detail::orthonormal_range(h->A);
        if (U.cols() == 0) return project_point_set(u, h->offset, b);
        if (const auto* q = std::get_if<QuadraticUtility>(&u)) {
            // c is a quadratic form in the parameters: solve the normal equations
            const Mat Q = U.transpose() * q->H * U;
            Eigen::SelfAdjointEigenSolver<Mat> es(Q);
            if (es.info() == Eigen::Success && es.eigenvalues().minCoeff() > 1e-12 * std::max(1.0, q->H.norm())) {
                const Vec t = Q.ldlt().solve(U.transpose() * q->H * (b - h->offset));
                ProjectionResult res;
                res.a = h->offset + U * t;
                res.cost = bregman_divergence(u, res.a, b);
                res.index = 0;
                return res;
            }
        }
        return detail::project_param(u, detail::hyperplane_param(*h, b, U, opt), b, opt);
    }
    if (const auto* s = std::get_if<SphereManifold>(&m)) {
        if (s->center.size() == 1) {
            Mat pts(1, 2);
            pts(0, 0) = s->center[0] - s->radius;
            pts(0, 1) = s->center[0] + s->radius;
            return project_point_set(u, pts, b);
        }
        return detail::project_param(u, detail::sphere_param(*s, opt), b, opt);
    }
    return detail::project_param(u, detail::graph_param(std::get<Graph1DManifold>(m)), b, opt);
}

// Project every column of B. Point sets use precomputed tangent data.
inline std::vector<ProjectionResult> project_all(const UtilitySpec& u, const ManifoldSpec& m, const Mat& B,
                                                 const ProjectionOptions& opt = {}) {
    validate_manifold(m);
    std::vector<ProjectionResult> out(static_cast<std::size_t>(B.cols()));
    if (const auto* pc = std::get_if<PointCloudManifold>(&m)) {
        const Mat& P = pc->points;
        const Index K = P.cols();
        Mat grads(P.rows(), K);
        Vec kappa(K);
        for (Index k = 0; k < K; ++k) {
            const WEval e = eval_W(u, P.col(k));
            grads.col(k) = e.grad;
            kappa[k] = -e.value + e.grad.dot(P.col(k));
        }
        parallel_for(static_cast<std::size_t>(B.cols()), [&](std::size_t i) {
            const auto b = B.col(static_cast<Index>(i));
            Index best = 0;
            double bestv = std::numeric_limits<double>::infinity();
            for (Index k = 0; k < K; ++k) {
                const double v = kappa[k] - grads.col(k).dot(b);
                if (v < bestv) {
                    bestv = v;
                    best = k;
                }
            }
            ProjectionResult r;
            r.a = P.col(best);
            r.cost = bregman_divergence(u, r.a, b);
            r.index = best;
            out[i] = std::move(r);
        });
        return out;
    }
    parallel_for(static_cast<std::size_t>(B.cols()),
                 [&](std::size_t i) { out[i] = bregman_project(u, m, B.col(static_cast<Index>(i)), opt); });
    return out;
}

}  // namespace persuasion
