#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "cloud.hpp"
#include "errors.hpp"
#include "linalg.hpp"
#include "parallel.hpp"
#include "problem.hpp"
#include "receiver.hpp"
#include "utility.hpp"

namespace persuasion {

struct OracleResult {
    double bestValue = -std::numeric_limits<double>::infinity();
    std::vector<int> bestLabels;
    Index enumeratedCount = 0;
    std::string method;
};

inline constexpr double kEnumerationCap = 1e6;

namespace detail {

struct CellEvaluator {
    const ProblemSpec& p;
    const ParticleCloud& c;
    Mat astar;

    CellEvaluator(const ProblemSpec& prob, const ParticleCloud& cloud)
        : p(prob), c(cloud), astar(full_info_actions(prob, cloud)) {}

    // sum over cells in first-occurrence order of P_k W(a_k)
    double value(const std::vector<int>& labels, Index K) const {
        std::vector<std::vector<Index>> mem(static_cast<std::size_t>(K));
        std::vector<int> order;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            auto& m = mem[static_cast<std::size_t>(labels[i])];
            if (m.empty()) order.push_back(labels[i]);
            m.push_back(static_cast<Index>(i));
        }
        double v = 0.0;
        for (int k : order) {
            const auto& idx = mem[static_cast<std::size_t>(k)];
            double mass = 0.0;
            Vec a;
            if (p.is_moment()) {
                Vec s = Vec::Zero(astar.rows());
                for (Index i : idx) {
                    s += c.weights[i] * astar.col(i);
                    mass += c.weights[i];
                }
                a = s / mass;
            } else {
                for (Index i : idx) mass += c.weights[i];
                const auto r = solve_action_subset(p, c.points, c.weights, idx, &astar, 1e-12);
                if (!r.converged) throw SolverError("receiver action did not converge in oracle cell", r.residualNorm);
                a = r.action;
            }
            v += mass * W_value(p.utility, a);
        }
        return v;
    }
};

inline void check_cap(Index n, Index K) {
    const double count = std::pow(static_cast<double>(K), static_cast<double>(n));
    if (count > kEnumerationCap)
        throw PreconditionError("enumeration of " + std::to_string(static_cast<long long>(count)) +
                                " assignments exceeds the cap of 1e6");
}

// Evaluate a list of assignments in parallel, keep the first maximum.
inline OracleResult best_of(const CellEvaluator& ev, const std::vector<std::vector<int>>& all, Index K,
                            const char* method) {
    std::vector<double> v(all.size());
    parallel_for(all.size(), [&](std::size_t j) { v[j] = ev.value(all[j], K); });
    OracleResult r;
    r.method = method;
    r.enumeratedCount = static_cast<Index>(all.size());
    for (std::size_t j = 0; j < all.size(); ++j)
        if (v[j] > r.bestValue) {
            r.bestValue = v[j];
            r.bestLabels = all[j];
        }
    return r;
}

}  // namespace detail

// Restricted-growth label strings with at most K blocks.
inline OracleResult enumerate_partitions(const ProblemSpec& p, const ParticleCloud& cloud, Index K) {
    validate_problem(p);
    const Index n = cloud.size();
    if (K < 1) throw PreconditionError("K must be >= 1");
    detail::check_cap(n, K);
    std::vector<std::vector<int>> all;
    std::vector<int> lab(static_cast<std::size_t>(n), 0), top(static_cast<std::size_t>(n), 0);
    // top[i] = max label among positions < i
    while (true) {
        all.push_back(lab);
        Index i = n - 1;
        for (; i >= 1; --i) {
            const int limit = std::min<int>(static_cast<int>(K) - 1, top[static_cast<std::size_t>(i)] + 1);
            if (lab[static_cast<std::size_t>(i)] < limit) break;
        }
        if (i < 1) break;
        ++lab[static_cast<std::size_t>(i)];
        for (Index j = i + 1; j < n; ++j) {
            lab[static_cast<std::size_t>(j)] = 0;
            top[static_cast<std::size_t>(j)] = std::max(top[static_cast<std::size_t>(j - 1)], lab[static_cast<std::size_t>(j - 1)]);
        }
    }
    detail::CellEvaluator ev(p, cloud);
    return detail::best_of(ev, all, K, "exhaustive");
}

// Every one of the K^n label vectors.
inline OracleResult enumerate_partitions_naive(const ProblemSpec& p, const ParticleCloud& cloud, Index K) {
    validate_problem(p);
    const Index n = cloud.size();
    if (K < 1) throw PreconditionError("K must be >= 1");
    detail::check_cap(n, K);
    std::size_t total = 1;
    for (Index i = 0; i < n; ++i) total *= static_cast<std::size_t>(K);
    std::vector<std::vector<int>> all(total, std::vector<int>(static_cast<std::size_t>(n)));
    for (std::size_t c = 0; c < total; ++c) {
        std::size_t r = c;
        for (Index i = n - 1; i >= 0; --i) {
            all[c][static_cast<std::size_t>(i)] = static_cast<int>(r % static_cast<std::size_t>(K));
            r /= static_cast<std::size_t>(K);
        }
    }
    detail::CellEvaluator ev(p, cloud);
    return detail::best_of(ev, all, K, "exhaustive");
}

// Best partition into contiguous blocks of a 1-D cloud (sorted by state).
inline OracleResult best_interval_partition_1d(const ProblemSpec& p, const ParticleCloud& cloud) {
    validate_problem(p);
    if (!p.is_moment() || p.stateDim != 1 || p.actionDim != 1) throw PreconditionError("interval oracle needs a 1-D moment problem");
    const Index n = cloud.size();
    const Mat G = eval_g_all(p.momentMap, cloud.points);
    std::vector<Index> ord(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) ord[static_cast<std::size_t>(i)] = i;
    std::stable_sort(ord.begin(), ord.end(), [&](Index a, Index b) { return cloud.points(0, a) < cloud.points(0, b); });
    std::vector<double> best(static_cast<std::size_t>(n + 1), -std::numeric_limits<double>::infinity());
    std::vector<Index> from(static_cast<std::size_t>(n + 1), 0);
    best[0] = 0.0;
    for (Index j = 1; j <= n; ++j) {
        double m = 0.0, s = 0.0;
        for (Index i = j - 1; i >= 0; --i) {
            const Index q = ord[static_cast<std::size_t>(i)];
            m += cloud.weights[q];
            s += cloud.weights[q] * G(0, q);
            const double v = best[static_cast<std::size_t>(i)] + m * W_value(p.utility, Vec::Constant(1, s / m));
            if (v > best[static_cast<std::size_t>(j)]) {
                best[static_cast<std::size_t>(j)] = v;
                from[static_cast<std::size_t>(j)] = i;
            }
        }
    }
    OracleResult r;
    r.method = "interval";
    r.bestValue = best[static_cast<std::size_t>(n)];
    r.enumeratedCount = n * (n + 1) / 2;
    r.bestLabels.assign(static_cast<std::size_t>(n), 0);
    std::vector<std::pair<Index, Index>> blocks;
    for (Index j = n; j > 0; j = from[static_cast<std::size_t>(j)]) blocks.push_back({from[static_cast<std::size_t>(j)], j});
    std::reverse(blocks.begin(), blocks.end());
    for (std::size_t b = 0; b < blocks.size(); ++b)
        for (Index i = blocks[b].first; i < blocks[b].second; ++i)
            r.bestLabels[static_cast<std::size_t>(ord[static_cast<std::size_t>(i)])] = static_cast<int>(b);
    return r;
}

struct SimplexResult {
    Vec x;
    Vec duals;  // multipliers of the rows A x <= b
    double value = 0.0;
    int pivots = 0;
};

// max c'x s.t. A x <= b, x >= 0 with b >= 0; dense tableau, Bland's rule.
inline SimplexResult simplex_max(const Mat& A, const Vec& b, const Vec& c, int maxPivots = 200000) {
    const Index m = A.rows(), n = A.cols();
    if (b.size() != m || c.size() != n) throw ConfigurationError("simplex dimensions disagree");
    if (b.size() && b.minCoeff() < 0.0) throw PreconditionError("simplex needs b >= 0");
    Mat T = Mat::Zero(m + 1, n + m + 1);
    T.topLeftCorner(m, n) = A;
    T.block(0, n, m, m) = Mat::Identity(m, m);
    T.col(n + m).head(m) = b;
    T.row(m).head(n) = -c.transpose();
    std::vector<Index> basis(static_cast<std::size_t>(m));
    for (Index i = 0; i < m; ++i) basis[static_cast<std::size_t>(i)] = n + i;
    const double eps = 1e-12;
    SimplexResult r;
    while (true) {
        Index enter = -1;
        for (Index j = 0; j < n + m; ++j)
            if (T(m, j) < -eps) {
                enter = j;
                break;
            }
        if (enter < 0) break;
        Index leave = -1;
        double bestRatio = std::numeric_limits<double>::infinity();
        for (Index i = 0; i < m; ++i) {
            if (T(i, enter) <= eps) continue;
            const double ratio = T(i, n + m) / T(i, enter);
            if (ratio < bestRatio - 1e-15 ||
                (ratio <= bestRatio + 1e-15 && leave >= 0 &&
                 basis[static_cast<std::size_t>(i)] < basis[static_cast<std::size_t>(leave)])) {
                bestRatio = std::min(bestRatio, ratio);
                leave = i;
            }
        }
        if (leave < 0) throw SolverError("linear program is unbounded", std::numeric_limits<double>::infinity());
        T.row(leave) /= T(leave, enter);
        for (Index i = 0; i <= m; ++i)
            if (i != leave && T(i, enter) != 0.0) T.row(i) -= T(i, enter) * T.row(leave);
        basis[static_cast<std::size_t>(leave)] = enter;
        if (++r.pivots > maxPivots) throw SolverError("simplex pivot limit reached", T(m, n + m));
    }
    r.x = Vec::Zero(n);
    for (Index i = 0; i < m; ++i)
        if (basis[static_cast<std::size_t>(i)] < n) r.x[basis[static_cast<std::size_t>(i)]] = T(i, n + m);
    r.duals = T.row(m).segment(n, m).transpose();
    r.value = T(m, n + m);
    if (!std::isfinite(r.value)) throw SolverError("linear program produced a non-finite value", r.value);
    return r;
}

struct MajorantOptions {
    // W between nodes; when set, chords of p must also dominate W
    std::function<double(double)> W;
    Index scanPerInterval = 256;
    int maxRounds = 400;
    double cutTol = 1e-13;
    double gapTol = 1e-12;  // stop once the certified upper and lower values agree to this
};

struct MajorantResult {
    double value = 0.0;  // attained by a feasible convex majorant
    double lower = 0.0;  // relaxation value from the cuts so far
    Vec nodes;  // p at the grid
    int rounds = 0;
    Index cuts = 0;
};

// min sum w_i p_i over convex p with p_i >= W_i, and chords >= W when a W function is given.
inline MajorantResult convex_majorant_1d(const Vec& x, const Vec& w, const Vec& Wv, const MajorantOptions& opt = {}) {
    const Index n = x.size();
    if (n < 1 || w.size() != n || Wv.size() != n) throw PreconditionError("grid, weights and values must match");
    if (n > 500) throw PreconditionError("majorant LP supports at most 500 nodes");
    for (Index i = 1; i < n; ++i)
        if (!(x[i] > x[i - 1])) throw PreconditionError("grid must be strictly increasing");
    if (w.minCoeff() < 0.0) throw PreconditionError("weights must be nonnegative");

    // rows a's <= rhs in the slack s = p - W >= 0
    std::vector<Vec> rows;
    std::vector<double> rhs;
    for (Index i = 0; i + 2 < n; ++i) {
        Vec a = Vec::Zero(n);
        const double h0 = x[i + 1] - x[i], h1 = x[i + 2] - x[i + 1];
        a[i] = -1.0 / h0;
        a[i + 1] = 1.0 / h0 + 1.0 / h1;
        a[i + 2] = -1.0 / h1;
        rhs.push_back(-a.dot(Wv));
        rows.push_back(std::move(a));
    }

    MajorantResult out;
    for (out.rounds = 1;; ++out.rounds) {
        // solved through its dual: max -rhs'u s.t. -A'u <= w, u >= 0; origin is feasible
        const Index m = static_cast<Index>(rows.size());
        Vec s = Vec::Zero(n);
        double extra = 0.0;
        if (m) {
            Mat D(n, m);
            Vec obj(m);
            for (Index r = 0; r < m; ++r) {
                D.col(r) = -rows[static_cast<std::size_t>(r)];
                obj[r] = -rhs[static_cast<std::size_t>(r)];
            }
            const auto res = simplex_max(D, w, obj);
            s = res.duals;
            extra = res.value;
        }
        out.value = out.lower = w.dot(Wv) + extra;
        out.nodes = Wv + s;
        if (!opt.W) return out;
        double worst = 0.0;

        // most violated point of chord >= W on each interval
        Index added = 0;
        for (Index i = 0; i + 1 < n; ++i) {
            const double h = x[i + 1] - x[i];
            const Vec& pn = out.nodes;
            auto gap = [&](double y) {
                const double lam = (y - x[i]) / h;
                return opt.W(y) - ((1.0 - lam) * pn[i] + lam * pn[i + 1]);
            };
            const double step = h / static_cast<double>(opt.scanPerInterval);
            double by = x[i], bg = -std::numeric_limits<double>::infinity();
            for (Index q = 1; q < opt.scanPerInterval; ++q) {
                const double y = x[i] + step * static_cast<double>(q);
                const double g = gap(y);
                if (g > bg) {
                    bg = g;
                    by = y;
                }
            }
            double lo = std::max(x[i], by - step), hi = std::min(x[i + 1], by + step);
            const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
            for (int it = 0; it < 80; ++it) {
                const double a = hi - gr * (hi - lo), b = lo + gr * (hi - lo);
                if (gap(a) > gap(b)) hi = b;
                else lo = a;
            }
            const double y = 0.5 * (lo + hi);
            if (gap(y) > bg) {
                bg = gap(y);
                by = y;
            }
            worst = std::max(worst, bg);
            if (bg > opt.cutTol && by > x[i] && by < x[i + 1]) {
                const double lam = (by - x[i]) / h;
                Vec a = Vec::Zero(n);
                a[i] = -(1.0 - lam);
                a[i + 1] = -lam;
                rows.push_back(std::move(a));
                rhs.push_back((1.0 - lam) * Wv[i] + lam * Wv[i + 1] - opt.W(by));
                ++added;
            }
        }
        out.cuts += added;
        // lifting p by the worst gap keeps it convex and above W everywhere
        const double lift = worst * w.sum();
        if (!added || lift <= opt.gapTol * std::max(1.0, std::abs(out.lower))) {
            out.value = out.lower + lift;
            out.nodes.array() += worst;
            return out;
        }
        if (out.rounds >= opt.maxRounds) throw SolverError("majorant cutting planes did not settle", static_cast<double>(out.cuts));
    }
}

inline double convex_majorant_value_1d(const Vec& x, const Vec& w, const Vec& Wv, const MajorantOptions& opt = {}) {
    return convex_majorant_1d(x, w, Wv, opt).value;
}

}  // namespace persuasion
