#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <string>
#include <tuple>
#include <vector>

#include "cloud.hpp"
#include "errors.hpp"
#include "linalg.hpp"
#include "manifold_spec.hpp"
#include "moment_map.hpp"
#include "parallel.hpp"
#include "partition.hpp"
#include "problem.hpp"
#include "transport.hpp"
#include "utility.hpp"

namespace persuasion {

struct HyperplanePolicy {
    ManifoldSpec manifold;
    Mat A;
};

// a(w) = A w + (I - A) mean with A = S P+ S^-1, S = Sigma^(1/2).
inline HyperplanePolicy hyperplane_policy(const Mat& H, const Mat& Sigma, Vec mean = Vec()) {
    const Index M = H.rows();
    if (M == 0 || H.cols() != M) throw ConfigurationError("H must be square");
    if (Sigma.rows() != M || Sigma.cols() != M) throw ConfigurationError("Sigma and H dimensions differ");
    if ((H - H.transpose()).norm() > 1e-12 * std::max(1.0, H.norm())) throw ConfigurationError("H must be symmetric");
    check_spd(Sigma, "Sigma");
    if (mean.size() == 0) mean = Vec::Zero(M);
    if (mean.size() != M) throw ConfigurationError("mean dimension mismatch");
    const Mat S = spd_sqrt(Sigma);
    const Mat Si = spd_inv_sqrt(Sigma);
    auto es = sym_eigen(S * H * S);
    const double floor = 1e-12 * std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
    Mat P = Mat::Zero(M, M);
    for (Index j = 0; j < M; ++j)
        if (es.eigenvalues()[j] > floor) P += es.eigenvectors().col(j) * es.eigenvectors().col(j).transpose();
    HyperplanePolicy out;
    out.A = S * P * Si;
    if (!out.A.allFinite()) throw NumericDomainError("hyperplane policy is not finite");
    out.manifold = HyperplaneManifold{out.A, (Mat::Identity(M, M) - out.A) * mean};
    return out;
}

struct SphereOptions {
    Index radiusGrid = 4001;
    double isotropyTol = 0.05;
};

struct SpherePolicy {
    double beta = 0.0;
    bool conditionHolds = false;
    double worstSlack = 0.0;
    double phiPrime = 0.0;  // phi'(beta^2)
    double radiusMax = 0.0;
    ManifoldSpec manifold;
};

namespace detail {

inline void check_spherical(const ParticleCloud& c, double tol) {
    const Index L = c.dim();
    const Vec m = c.mean();
    const Mat C = c.covariance();
    const double var = C.trace() / static_cast<double>(L);
    if (!(var > 0.0)) throw PreconditionError("degenerate prior cloud");
    const double sigma = std::sqrt(var);
    if (m.norm() > 3.0 * sigma / std::sqrt(static_cast<double>(c.size())))
        throw PreconditionError("prior is not centred: mean norm " + std::to_string(m.norm()));
    if ((C - var * Mat::Identity(L, L)).norm() > tol * var)
        throw PreconditionError("prior covariance is not isotropic");
}

}  // namespace detail

// Radial W(a) = phi(h |a|^2); g(w) = w psi(|w|^2).
inline SpherePolicy sphere_policy(const ParticleCloud& cloud, const UtilitySpec& u, const MomentMapSpec& g,
                                  const SphereOptions& opt = {}) {
    const auto* r = std::get_if<RadialUtility>(&u);
    if (!r) throw ConfigurationError("sphere policy needs a radial utility");
    const Index M = cloud.dim();
    if (r->H.rows() != M) throw ConfigurationError("utility and prior dimensions differ");
    if (!std::holds_alternative<IdentityMap>(g) && !std::holds_alternative<RadialScaledMap>(g))
        throw ConfigurationError("sphere policy needs a radial-scaled moment map");
    const double h = r->H(0, 0);
    if (!(h > 0.0) || (r->H - h * Mat::Identity(M, M)).norm() > 1e-12 * h)
        throw ConfigurationError("sphere policy needs H proportional to the identity");
    if (opt.radiusGrid < 2) throw ConfigurationError("radius grid needs >= 2 points");
    detail::check_spherical(cloud, opt.isotropyTol);

    const Mat G = eval_g_all(g, cloud.points);
    SpherePolicy out;
    out.beta = cloud.points.colwise().norm().dot(cloud.weights);
    out.radiusMax = G.colwise().norm().maxCoeff();
    auto phi = [&](double x) { return r->phi.eval(h * x); };
    const double b2 = out.beta * out.beta;
    const CurveValue pb = phi(b2);
    out.phiPrime = h * pb.d1;
    double worst = -std::numeric_limits<double>::infinity();
    const double rmax = std::max(out.radiusMax, out.beta);
    for (Index j = 0; j < opt.radiusGrid; ++j) {
        const double rb = rmax * static_cast<double>(j) / static_cast<double>(opt.radiusGrid - 1);
        const double s = phi(rb * rb).v - pb.v + 2.0 * out.phiPrime * out.beta * (out.beta - rb);
        worst = std::max(worst, s);
    }
    out.worstSlack = worst;
    out.conditionHolds = worst <= 0.0 && out.phiPrime > 0.0;
    out.manifold = SphereManifold{Vec::Zero(M), out.beta};
    return out;
}

struct CurveOptions {
    Index nodes = 41;
    double tol = 1e-6;
    Index maxIter = 500;
};

struct CurveResult {
    Graph1DManifold curve;
    ManifoldSpec manifold;
    Vec nodeMass;
    double residual = 0.0;
    Index iterations = 0;
    bool converged = false;
    std::vector<std::string> warnings;
};

namespace detail {

// Weighted pool-adjacent-violators, nondecreasing fit.
inline Vec isotonic_fit(const Vec& y, const Vec& w) {
    const Index n = y.size();
    std::vector<double> val, wt;
    std::vector<Index> len;
    for (Index i = 0; i < n; ++i) {
        val.push_back(y[i]);
        wt.push_back(w[i]);
        len.push_back(1);
        while (val.size() > 1 && val[val.size() - 2] > val.back()) {
            const double ws = wt[wt.size() - 2] + wt.back();
            const double v = (val[val.size() - 2] * wt[wt.size() - 2] + val.back() * wt.back()) / ws;
            const Index l = len[len.size() - 2] + len.back();
            val.pop_back();
            wt.pop_back();
            len.pop_back();
            val.back() = v;
            wt.back() = ws;
            len.back() = l;
        }
    }
    Vec out(n);
    Index k = 0;
    for (std::size_t b = 0; b < val.size(); ++b)
        for (Index j = 0; j < len[b]; ++j) out[k++] = val[b];
    return out;
}

struct CurveAssign {
    std::vector<Index> label;
    Mat sums;
    Vec mass;
};

inline CurveAssign curve_assign(const UtilitySpec& u, const Mat& nodes, const Mat& G, const Vec& w) {
    const auto proj = project_all(u, PointCloudManifold{nodes}, G);
    CurveAssign a;
    a.label.resize(proj.size());
    a.sums = Mat::Zero(2, nodes.cols());
    a.mass = Vec::Zero(nodes.cols());
    for (std::size_t i = 0; i < proj.size(); ++i) {
        const Index k = proj[i].index;
        a.label[i] = k;
        a.sums.col(k) += w[static_cast<Index>(i)] * G.col(static_cast<Index>(i));
        a.mass[k] += w[static_cast<Index>(i)];
    }
    return a;
}

inline double curve_residual(const Mat& nodes, const CurveAssign& a) {
    double r = 0.0;
    for (Index k = 0; k < nodes.cols(); ++k)
        if (a.mass[k] > 0.0) r = std::max(r, (a.sums.col(k) / a.mass[k] - nodes.col(k)).norm());
    return r;
}

}  // namespace detail

// Node projection and conditional means from stripe cells, then an isotonic pass.
inline CurveResult solve_curve_2d(const ProblemSpec& p, const ParticleCloud& cloud, const CurveOptions& opt = {}) {
    validate_problem(p);
    if (!p.is_moment()) throw PreconditionError("curve solver needs a moment receiver");
    if (p.actionDim != 2) throw PreconditionError("curve solver needs a 2-dimensional action");
    if (opt.nodes < 2) throw ConfigurationError("curve needs >= 2 nodes");
    if (opt.maxIter < 1) throw ConfigurationError("maxIter must be >= 1");
    const Mat G = eval_g_all(p.momentMap, cloud.points);
    const Vec& w = cloud.weights;
    const Index n = G.cols();
    CurveResult out;

    const Vec m = G * w;
    auto es = sym_eigen(eval_W(p.utility, m).hess);
    const Index top = p.actionDim - 1;
    if (es.eigenvalues()[top] <= 0.0) out.warnings.push_back("no positive curvature at the mean");
    Vec v = es.eigenvectors().col(top);
    if (std::abs(v[1]) < 1e-8) throw PreconditionError("curve direction is not a graph over the second coordinate");
    if (v[1] < 0.0) v = -v;
    const bool increasing = v[0] * v[1] >= 0.0;

    // stripes: equal-mass bins of the projection on v, ties kept together
    Vec t = v.transpose() * (G.colwise() - m);
    std::vector<Index> ord(static_cast<std::size_t>(n));
    std::iota(ord.begin(), ord.end(), Index{0});
    std::stable_sort(ord.begin(), ord.end(), [&](Index a, Index b) { return t[a] < t[b]; });
    const Index N = std::min<Index>(opt.nodes, distinct_count(G));
    std::vector<int> labels(static_cast<std::size_t>(n));
    {
        double acc = 0.0;
        for (std::size_t j = 0; j < ord.size(); ++j) {
            const Index i = ord[j];
            int lab = static_cast<int>(std::min<double>(static_cast<double>(N - 1), std::floor(acc * static_cast<double>(N) + 1e-9)));
            if (j > 0 && t[i] == t[ord[j - 1]]) lab = labels[static_cast<std::size_t>(ord[j - 1])];
            labels[static_cast<std::size_t>(i)] = lab;
            acc += w[i];
        }
    }

    auto tidy = [&](Mat P, Vec mass) {
        // order by theta, merge ties, isotonic phi
        std::vector<Index> o(static_cast<std::size_t>(P.cols()));
        std::iota(o.begin(), o.end(), Index{0});
        std::stable_sort(o.begin(), o.end(), [&](Index a, Index b) { return P(1, a) < P(1, b); });
        std::vector<Vec> cols;
        std::vector<double> ms;
        for (Index k : o) {
            if (!cols.empty() && !(P(1, k) > cols.back()[1])) {
                const double s = ms.back() + mass[k];
                cols.back() = (ms.back() * cols.back() + mass[k] * P.col(k)) / s;
                ms.back() = s;
                continue;
            }
            cols.push_back(P.col(k));
            ms.push_back(mass[k]);
        }
        const Index K = static_cast<Index>(cols.size());
        Mat Q(2, K);
        Vec mq(K);
        for (Index k = 0; k < K; ++k) {
            Q.col(k) = cols[static_cast<std::size_t>(k)];
            mq[k] = ms[static_cast<std::size_t>(k)];
        }
        Vec wq = mq.cwiseMax(1e-300);
        Vec y = Q.row(0).transpose();
        const Vec f = increasing ? detail::isotonic_fit(y, wq) : Vec(-detail::isotonic_fit(-y, wq));
        Q.row(0) = f.transpose();
        return std::make_pair(Q, mq);
    };

    // the plain alternation is unstable for indefinite W; use the value-safeguarded sweep
    PartitionContext ctx(p, cloud);
    PartitionState st = consistent_state(ctx, std::move(labels), N);
    st = run_sweeps(ctx, std::move(st), opt.tol * opt.tol, static_cast<int>(opt.maxIter));
    out.iterations = st.iterations;
    std::vector<Index> keep;
    for (Index k = 0; k < st.K; ++k)
        if (st.masses[k] > 0.0) keep.push_back(k);
    if (static_cast<Index>(keep.size()) < opt.nodes)
        out.warnings.push_back("pruned " + std::to_string(opt.nodes - static_cast<Index>(keep.size())) + " starved curve nodes");
    Mat P(2, static_cast<Index>(keep.size()));
    Vec mk(P.cols());
    for (Index j = 0; j < P.cols(); ++j) {
        const Index k = keep[static_cast<std::size_t>(j)];
        P.col(j) = st.actions[static_cast<std::size_t>(k)];
        mk[j] = st.masses[k];
    }
    Mat nodes;
    Vec mass;
    std::tie(nodes, mass) = tidy(P, mk);
    const auto fin = detail::curve_assign(p.utility, nodes, G, w);
    out.residual = detail::curve_residual(nodes, fin);
    mass = fin.mass;
    out.converged = out.residual <= opt.tol;
    if (!out.converged) out.warnings.push_back("curve did not converge: residual " + std::to_string(out.residual));
    out.curve.phi = nodes.row(0).transpose();
    out.curve.theta = nodes.row(1).transpose();
    out.nodeMass = mass;
    out.manifold = out.curve;
    validate_manifold(out.manifold);
    return out;
}

// a(w) = Bregman projection of g(w) onto the manifold, one column per particle.
inline Mat apply_policy(const UtilitySpec& u, const ManifoldSpec& m, const MomentMapSpec& g, const ParticleCloud& cloud,
                        const ProjectionOptions& opt = {}) {
    const Mat G = eval_g_all(g, cloud.points);
    const auto proj = project_all(u, m, G, opt);
    Mat out(G.rows(), G.cols());
    for (std::size_t i = 0; i < proj.size(); ++i) out.col(static_cast<Index>(i)) = proj[i].a;
    return out;
}

inline Mat apply_policy(const ProblemSpec& p, const ManifoldSpec& m, const ParticleCloud& cloud,
                        const ProjectionOptions& opt = {}) {
    if (!p.is_moment()) throw PreconditionError("projection policies need a moment receiver");
    return apply_policy(p.utility, m, p.momentMap, cloud, opt);
}

// a(w) = center + beta g(w)/|g(w)|; g = 0 goes to the first axis.
inline Mat sphere_actions(const SpherePolicy& s, const MomentMapSpec& g, const ParticleCloud& cloud) {
    const Mat G = eval_g_all(g, cloud.points);
    Mat out(G.rows(), G.cols());
    for (Index i = 0; i < G.cols(); ++i) {
        const double r = G.col(i).norm();
        Vec d = Vec::Zero(G.rows());
        if (r > 0.0) d = G.col(i) / r;
        else d[0] = 1.0;
        out.col(i) = std::get<SphereManifold>(s.manifold).center + s.beta * d;
    }
    return out;
}

// Curve nodes as CSV rows: theta, a1, a2 (shortest round-trip decimals).
inline std::string curve_csv(const Graph1DManifold& c) {
    std::string s = "theta,a1,a2\n";
    char buf[64];
    auto put = [&](double v, char end) {
        const auto r = std::to_chars(buf, buf + sizeof buf, v);
        s.append(buf, r.ptr);
        s += end;
    };
    for (Index k = 0; k < c.theta.size(); ++k) {
        put(c.theta[k], ',');
        put(c.phi[k], ',');
        put(c.theta[k], '\n');
    }
    return s;
}

}  // namespace persuasion
