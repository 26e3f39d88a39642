#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "cloud.hpp"
#include "errors.hpp"
#include "linalg.hpp"
#include "partition.hpp"
#include "problem.hpp"

namespace persuasion {

struct InfoRelevance {
    Vec steadyAction;  // a0
    Mat Dmat;          // L x L, symmetric
    Mat Gmat;          // M x L
    Mat rawD;          // before symmetrization
    bool degenerate = false;
    std::vector<std::string> warnings;
};

struct LinearizeOptions {
    double step = 1e-3;         // relative to scale
    double scale = 1.0;
    double detFloor = 1e-10;
};

inline Vec steady_state(const ProblemSpec& p) {
    validate_problem(p);
    const Vec zero = Vec::Zero(p.stateDim);
    Vec a = full_info_action(p, zero);
    const double r = eval_G(p, a, zero).norm();
    if (!(r <= 1e-10)) throw SolverError("steady state residual too large", r);
    return a;
}

namespace detail {

// Central second differences of f at 0 with step h.
inline Mat hessian_at_zero(const std::function<double(const Vec&)>& f, Index L, double h) {
    Mat D(L, L);
    const Vec z = Vec::Zero(L);
    const double f0 = f(z);
    for (Index i = 0; i < L; ++i) {
        Vec e = z;
        e[i] = h;
        D(i, i) = (f(e) - 2.0 * f0 + f(-e)) / (h * h);
        for (Index j = i + 1; j < L; ++j) {
            Vec pp = z, pm = z;
            pp[i] = h;
            pp[j] = h;
            pm[i] = h;
            pm[j] = -h;
            D(i, j) = D(j, i) = (f(pp) - f(pm) - f(-pm) + f(-pp)) / (4.0 * h * h);
        }
    }
    return D;
}

}  // namespace detail

// W does not depend on the state here, so the partial Hessian in w vanishes and
// D is the Hessian of w -> W(a*(w)) at 0.
inline InfoRelevance info_relevance(const ProblemSpec& p, LinearizeOptions opt = {}) {
    InfoRelevance ir;
    ir.steadyAction = steady_state(p);
    const Index L = p.stateDim;
    const Vec zero = Vec::Zero(L);
    auto f = [&](const Vec& w) {
        const Vec a = full_info_action(p, w, &ir.steadyAction);
        return W_value(p.utility, a);
    };
    const double h = opt.step * opt.scale;
    const Mat D1 = detail::hessian_at_zero(f, L, h);
    const Mat D2 = detail::hessian_at_zero(f, L, 0.5 * h);
    ir.rawD = (4.0 * D2 - D1) / 3.0;
    ir.Dmat = symmetrize(ir.rawD);

    const Mat Ja = jac_a_G(p, ir.steadyAction, zero);
    const Mat Jw = jac_w_G(p, ir.steadyAction, zero);
    const double cond = condition_number(Ja);
    if (!(cond < kMaxCellCondition)) throw DegenerateCellError("receiver Jacobian is singular at the steady state", cond);
    ir.Gmat = Ja.fullPivLu().solve(Jw);

    const double scaleD = std::max(1.0, ir.Dmat.cwiseAbs().maxCoeff());
    if (std::abs(ir.Dmat.determinant()) < opt.detFloor * std::pow(scaleD, static_cast<double>(L))) {
        ir.degenerate = true;
        ir.warnings.push_back("information relevance matrix is nearly singular");
    }
    return ir;
}

inline Vec first_order_action(const InfoRelevance& ir, const Vec& M1, double eps) {
    return ir.steadyAction - eps * (ir.Gmat * M1);
}

struct LimitPartitionOptions {
    int maxIter = 500;
    std::uint64_t seed = 0;
};

namespace detail {

struct LimitTable {
    Mat V;  // D M_k, L x K
    Vec b;  // -0.5 M_k' D M_k
    std::vector<char> live;
};

inline LimitTable limit_table(const Mat& D, const std::vector<Vec>& means, const Vec& masses) {
    const Index K = masses.size(), L = D.rows();
    LimitTable t{Mat::Zero(L, K), Vec::Zero(K), std::vector<char>(static_cast<std::size_t>(K), 0)};
    for (Index k = 0; k < K; ++k) {
        if (!(masses[k] > 0.0)) continue;
        t.live[static_cast<std::size_t>(k)] = 1;
        t.V.col(k) = D * means[static_cast<std::size_t>(k)];
        t.b[k] = -0.5 * means[static_cast<std::size_t>(k)].dot(t.V.col(k));
    }
    return t;
}

inline std::vector<int> limit_assign(const LimitTable& t, const ParticleCloud& cloud) {
    const Index K = t.b.size(), L = t.V.rows();
    std::vector<int> labels(static_cast<std::size_t>(cloud.size()));
    parallel_for(labels.size(), [&](std::size_t i) {
        const double* w = cloud.points.data() + static_cast<Index>(i) * L;
        int best = -1;
        double bestv = -std::numeric_limits<double>::infinity();
        for (Index k = 0; k < K; ++k) {
            if (!t.live[static_cast<std::size_t>(k)]) continue;
            const double v = affine_score(t.b[k], t.V.data() + k * L, w, L);
            if (best < 0 || v > bestv) {
                bestv = v;
                best = static_cast<int>(k);
            }
        }
        labels[i] = best;
    });
    return labels;
}

inline PartitionState limit_state(const Mat& D, const ParticleCloud& cloud, std::vector<int> labels, Index K) {
    PartitionState s;
    s.K = K;
    s.labels = std::move(labels);
    const Index L = cloud.dim();
    s.masses = Vec::Zero(K);
    Mat sums = Mat::Zero(L, K);
    for (Index i = 0; i < cloud.size(); ++i) {
        const int k = s.labels[static_cast<std::size_t>(i)];
        s.masses[k] += cloud.weights[i];
        sums.col(k) += cloud.weights[i] * cloud.points.col(i);
    }
    s.actions.assign(static_cast<std::size_t>(K), Vec::Zero(L));
    s.multipliers.assign(static_cast<std::size_t>(K), MultiplierRecord{});
    s.value = 0.0;
    for (Index k : canonical_order(s.labels, K)) {
        const Vec m = sums.col(k) / s.masses[k];
        const Vec v = D * m;
        s.actions[static_cast<std::size_t>(k)] = m;
        s.multipliers[static_cast<std::size_t>(k)] = MultiplierRecord{m, v, v, Mat::Identity(L, L)};
        s.value += s.masses[k] * m.dot(v);
    }
    return s;
}

}  // namespace detail

namespace detail {

// Sequential best response: each particle in turn joins its argmax cell and
// the two affected means are updated at once. Small steps keep the
// indefinite directions from overshooting, unlike the batch sweep.
inline bool limit_best_response_pass(const Mat& D, const ParticleCloud& cloud, std::vector<int>& labels, Index K) {
    const Index L = cloud.dim();
    Vec mass = Vec::Zero(K);
    Mat sum = Mat::Zero(L, K);
    for (Index i = 0; i < cloud.size(); ++i) {
        const int k = labels[static_cast<std::size_t>(i)];
        mass[k] += cloud.weights[i];
        sum.col(k) += cloud.weights[i] * cloud.points.col(i);
    }
    Mat V = Mat::Zero(L, K);
    Vec b = Vec::Zero(K);
    std::vector<Index> count(static_cast<std::size_t>(K), 0);
    for (int l : labels) ++count[static_cast<std::size_t>(l)];
    auto refresh = [&](Index k) {
        if (count[static_cast<std::size_t>(k)] == 0) return;
        const Vec m = sum.col(k) / mass[k];
        V.col(k) = D * m;
        b[k] = -0.5 * m.dot(V.col(k));
    };
    for (Index k = 0; k < K; ++k) refresh(k);
    bool moved = false;
    for (Index i = 0; i < cloud.size(); ++i) {
        const double* w = cloud.points.data() + i * L;
        int best = -1;
        double bestv = -std::numeric_limits<double>::infinity();
        for (Index k = 0; k < K; ++k) {
            if (count[static_cast<std::size_t>(k)] == 0) continue;
            const double v = affine_score(b[k], V.data() + k * L, w, L);
            if (best < 0 || v > bestv) {
                bestv = v;
                best = static_cast<int>(k);
            }
        }
        const int from = labels[static_cast<std::size_t>(i)];
        if (best == from) continue;
        const double wt = cloud.weights[i];
        mass[from] -= wt;
        mass[best] += wt;
        sum.col(from) -= wt * cloud.points.col(i);
        sum.col(best) += wt * cloud.points.col(i);
        --count[static_cast<std::size_t>(from)];
        ++count[static_cast<std::size_t>(best)];
        labels[static_cast<std::size_t>(i)] = best;
        refresh(from);
        refresh(best);
        moved = true;
    }
    return moved;
}

}  // namespace detail

// Particles violating the half-space description of their own cell, using
// the state's means as M1. Zero means every cell is an exact intersection of
// half-spaces with ties resolved to the smaller index.
inline Index halfspace_violations(const InfoRelevance& ir, const ParticleCloud& cloud, const PartitionState& s) {
    auto t = detail::limit_table(ir.Dmat, s.actions, s.masses);
    auto labels = detail::limit_assign(t, cloud);
    Index bad = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) bad += labels[i] != s.labels[i] ? 1 : 0;
    return bad;
}

// Multistart search on the equivalent moment problem (g = identity,
// W = w'Dw/2, whose value is half the surrogate), then sequential best
// response until the labels are a fixed point of the argmax/mean map.
inline PartitionState solve_limit_partition(const InfoRelevance& ir, const ParticleCloud& cloud, Index K, int restarts,
                                            double tol = 1e-9, LimitPartitionOptions opt = {}) {
    if (K < 1) throw PreconditionError("K must be >= 1");
    const Index L = ir.Dmat.rows();
    if (cloud.dim() != L) throw PreconditionError("cloud dimension must match the information relevance matrix");
    ProblemSpec eq;
    eq.stateDim = eq.actionDim = L;
    eq.prior = TabulatedPrior{cloud.points, cloud.weights};
    eq.utility = make_quadratic(0.5 * ir.Dmat);
    PartitionState start;
    try {
        start = optimize_partition(eq, cloud, K, restarts, tol, opt.maxIter, opt.seed);
    } catch (const PartitionSolverError& e) {
        start = e.best();
    }
    const Index Keff = start.K;
    PartitionState s = detail::limit_state(ir.Dmat, cloud, start.labels, Keff);
    s.iterations = start.iterations;
    s.restartIndex = start.restartIndex;
    s.warnings = start.warnings;
    s.valueHistory = {s.value};
    s.converged = false;
    PartitionState best = s;
    std::vector<int> labels = s.labels;
    for (int it = 0; it < opt.maxIter; ++it) {
        auto t = detail::limit_table(ir.Dmat, s.actions, s.masses);
        if (detail::limit_assign(t, cloud) == s.labels) {
            s.converged = true;
            return s;
        }
        detail::limit_best_response_pass(ir.Dmat, cloud, labels, Keff);
        PartitionState next = detail::limit_state(ir.Dmat, cloud, labels, Keff);
        next.iterations = s.iterations + 1;
        next.restartIndex = s.restartIndex;
        next.warnings = s.warnings;
        next.valueHistory = s.valueHistory;
        next.valueHistory.push_back(next.value);
        s = std::move(next);
        if (s.value > best.value) best = s;
    }
    // No fixed point: return the cells cut by the best iterate's means, so the
    // cells are still half-space intersections of the reported M1.
    auto t = detail::limit_table(ir.Dmat, best.actions, best.masses);
    PartitionState out = detail::limit_state(ir.Dmat, cloud, detail::limit_assign(t, cloud), Keff);
    out.actions = best.actions;
    for (Index k = 0; k < Keff; ++k) {
        const Vec v = ir.Dmat * out.actions[static_cast<std::size_t>(k)];
        out.multipliers[static_cast<std::size_t>(k)] = MultiplierRecord{out.actions[static_cast<std::size_t>(k)], v, v, Mat::Identity(L, L)};
    }
    out.iterations = s.iterations;
    out.restartIndex = best.restartIndex;
    out.valueHistory = s.valueHistory;
    out.warnings = best.warnings;
    out.warnings.push_back("limit sweeps did not reach a fixed point; cells cut by the best iterate's means");
    out.converged = false;
    return out;
}

// Largest fraction of weight on which two labelings agree up to relabeling.
inline double label_agreement(const std::vector<int>& a, const std::vector<int>& b, const Vec& weights) {
    if (a.size() != b.size() || static_cast<Index>(a.size()) != weights.size()) throw PreconditionError("labelings must align");
    int Ka = 0, Kb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        Ka = std::max(Ka, a[i] + 1);
        Kb = std::max(Kb, b[i] + 1);
    }
    const int K = std::max(Ka, Kb);
    Mat C = Mat::Zero(K, K);
    for (std::size_t i = 0; i < a.size(); ++i) C(a[i], b[i]) += weights[static_cast<Index>(i)];
    double best = 0.0;
    if (K <= 8) {
        std::vector<int> perm(static_cast<std::size_t>(K));
        std::iota(perm.begin(), perm.end(), 0);
        do {
            double v = 0.0;
            for (int k = 0; k < K; ++k) v += C(k, perm[static_cast<std::size_t>(k)]);
            best = std::max(best, v);
        } while (std::next_permutation(perm.begin(), perm.end()));
        return best;
    }
    // greedy matching on the overlap table
    std::vector<char> ua(static_cast<std::size_t>(K), 0), ub(static_cast<std::size_t>(K), 0);
    for (int round = 0; round < K; ++round) {
        double m = -1.0;
        int bi = -1, bj = -1;
        for (int i = 0; i < K; ++i)
            for (int j = 0; j < K; ++j)
                if (!ua[static_cast<std::size_t>(i)] && !ub[static_cast<std::size_t>(j)] && C(i, j) > m) {
                    m = C(i, j);
                    bi = i;
                    bj = j;
                }
        ua[static_cast<std::size_t>(bi)] = ub[static_cast<std::size_t>(bj)] = 1;
        best += m;
    }
    return best;
}

}  // namespace persuasion
