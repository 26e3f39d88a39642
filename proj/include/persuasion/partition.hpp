#pragma once

#include <algorithm>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "cloud.hpp"
#include "errors.hpp"
#include "linalg.hpp"
#include "parallel.hpp"
#include "problem.hpp"
#include "receiver.hpp"
#include "rng.hpp"
#include "transport.hpp"

namespace persuasion {

struct PartitionState {
    Index K = 0;
    std::vector<int> labels;  // 0-based cell index per particle
    std::vector<Vec> actions;
    std::vector<MultiplierRecord> multipliers;
    Vec masses;
    double value = -std::numeric_limits<double>::infinity();
    int iterations = 0;
    bool converged = false;
    int restartIndex = 0;
    std::vector<double> valueHistory;
    std::vector<std::string> warnings;

    bool active(Index k) const { return masses[k] > 0.0; }
    Index active_count() const {
        Index c = 0;
        for (Index k = 0; k < K; ++k) c += active(k) ? 1 : 0;
        return c;
    }
};

struct PartitionOptions {
    double actionTol = 1e-10;
    Index localSearchMaxN = 256;  // exact single-particle moves below this size
    bool mergeMoves = true;
};

// Per-solve cache: full-information actions and their utilities.
struct PartitionContext {
    const ProblemSpec& problem;
    const ParticleCloud& cloud;
    Mat astar;
    Vec wstar;
    Vec gnorm;
    PartitionOptions opt;

    PartitionContext(const ProblemSpec& p, const ParticleCloud& c, PartitionOptions o = {})
        : problem(p), cloud(c), astar(full_info_actions(p, c)), wstar(c.size()), gnorm(c.size()), opt(o) {
        for (Index i = 0; i < c.size(); ++i) {
            wstar[i] = W_value(p.utility, astar.col(i));
            gnorm[i] = astar.col(i).norm();
        }
    }
    bool moment() const { return problem.is_moment(); }
    Index n() const { return cloud.size(); }
    Index M() const { return problem.actionDim; }
};

namespace detail {

struct CellSums {
    Vec mass;
    Mat sum;
};

inline CellSums moment_sums(const PartitionContext& ctx, const std::vector<int>& labels, Index K) {
    const Index M = ctx.M();
    auto blockFn = [&](std::size_t lo, std::size_t hi) {
        CellSums s{Vec::Zero(K), Mat::Zero(M, K)};
        const double* g = ctx.astar.data();
        const double* wt = ctx.cloud.weights.data();
        double* sum = s.sum.data();
        for (std::size_t i = lo; i < hi; ++i) {
            const int k = labels[i];
            const double w = wt[i];
            s.mass[k] += w;
            for (Index d = 0; d < M; ++d) sum[k * M + d] += w * g[static_cast<Index>(i) * M + d];
        }
        return s;
    };
    auto combine = [](const CellSums& a, const CellSums& b) { return CellSums{a.mass + b.mass, a.sum + b.sum}; };
    return block_reduce<CellSums>(static_cast<std::size_t>(ctx.n()), blockFn, combine);
}

inline std::vector<std::vector<Index>> members(const std::vector<int>& labels, Index K) {
    std::vector<std::vector<Index>> out(static_cast<std::size_t>(K));
    for (std::size_t i = 0; i < labels.size(); ++i) out[static_cast<std::size_t>(labels[i])].push_back(static_cast<Index>(i));
    return out;
}

// cells in order of first appearance, so equal partitions give equal sums
inline std::vector<Index> canonical_order(const std::vector<int>& labels, Index K) {
    std::vector<Index> order;
    std::vector<char> seen(static_cast<std::size_t>(K), 0);
    for (int l : labels)
        if (!seen[static_cast<std::size_t>(l)]) {
            seen[static_cast<std::size_t>(l)] = 1;
            order.push_back(l);
        }
    return order;
}

inline double state_value(const UtilitySpec& u, const std::vector<int>& labels, const std::vector<Vec>& actions,
                          const Vec& masses) {
    double v = 0.0;
    for (Index k : canonical_order(labels, masses.size())) v += masses[k] * W_value(u, actions[static_cast<std::size_t>(k)]);
    return v;
}

}  // namespace detail

// Solve actions, multipliers and value for fixed labels. Empty cells keep
// their previous action (if any) and are marked by zero mass.
inline PartitionState consistent_state(const PartitionContext& ctx, std::vector<int> labels, Index K,
                                       const std::vector<Vec>* previous = nullptr) {
    PartitionState s;
    s.K = K;
    s.labels = std::move(labels);
    s.actions.assign(static_cast<std::size_t>(K), Vec::Zero(ctx.M()));
    s.multipliers.assign(static_cast<std::size_t>(K), MultiplierRecord{});
    if (previous)
        for (Index k = 0; k < K && k < static_cast<Index>(previous->size()); ++k) s.actions[static_cast<std::size_t>(k)] = (*previous)[static_cast<std::size_t>(k)];
    if (ctx.moment()) {
        auto sums = detail::moment_sums(ctx, s.labels, K);
        s.masses = sums.mass;
        for (Index k = 0; k < K; ++k) {
            if (!(s.masses[k] > 0.0)) continue;
            Vec a = sums.sum.col(k) / s.masses[k];
            s.multipliers[static_cast<std::size_t>(k)] = MultiplierRecord{a, W_grad(ctx.problem.utility, a), W_grad(ctx.problem.utility, a),
                                                                          Mat::Identity(ctx.M(), ctx.M())};
            s.actions[static_cast<std::size_t>(k)] = std::move(a);
        }
    } else {
        auto cells = detail::members(s.labels, K);
        s.masses = Vec::Zero(K);
        for (Index k = 0; k < K; ++k)
            for (Index i : cells[static_cast<std::size_t>(k)]) s.masses[k] += ctx.cloud.weights[i];
        parallel_for(static_cast<std::size_t>(K), [&](std::size_t k) {
            if (cells[k].empty()) return;
            ActionOptions ao;
            Vec start = s.actions[k];
            if (previous && k < previous->size() && start.allFinite()) ao.start = &start;
            auto res = solve_action_subset(ctx.problem, ctx.cloud.points, ctx.cloud.weights, cells[k], &ctx.astar,
                                           ctx.opt.actionTol, ao);
            s.actions[k] = res.action;
            s.multipliers[k] = multiplier_subset(ctx.problem, ctx.cloud.points, ctx.cloud.weights, cells[k], res.action);
        });
    }
    s.value = detail::state_value(ctx.problem.utility, s.labels, s.actions, s.masses);
    return s;
}

namespace detail {

// Same operation order everywhere so ties resolve identically.
inline double affine_score(double c, const double* x, const double* g, Index M) {
    double v = c;
    for (Index d = 0; d < M; ++d) v += x[d] * g[d];
    return v;
}

// All cells at once; XT is A x M column-major. Rounds exactly like affine_score.
inline void affine_scores(const double* c, const double* XT, const double* g, Index M, Index A, double* out) {
    for (Index j = 0; j < A; ++j) out[j] = c[j];
    for (Index d = 0; d < M; ++d) {
        const double gd = g[d];
        const double* x = XT + d * A;
        for (Index j = 0; j < A; ++j) out[j] += x[j] * gd;
    }
}

// Score of cell k at particle i: W(a_k) - x_k' G(a_k, w_i).
struct ScoreTable {
    std::vector<Index> activeCells;
    Mat X;      // multipliers of active cells, M x A
    Vec c;      // moment case: W(a_k) - x_k'a_k
    Vec Wa;     // W(a_k)
    const PartitionContext* ctx = nullptr;
    const PartitionState* st = nullptr;

    double score(Index j, Index i) const {
        if (ctx->moment()) return affine_score(c[j], X.data() + j * X.rows(), ctx->astar.data() + i * ctx->astar.rows(), X.rows());
        const Index k = activeCells[static_cast<std::size_t>(j)];
        return Wa[j] - X.col(j).dot(eval_G(ctx->problem, st->actions[static_cast<std::size_t>(k)], ctx->cloud.points.col(i)));
    }
};

inline ScoreTable score_table(const PartitionContext& ctx, const PartitionState& s) {
    ScoreTable t;
    t.ctx = &ctx;
    t.st = &s;
    for (Index k = 0; k < s.K; ++k)
        if (s.active(k)) t.activeCells.push_back(k);
    const Index A = static_cast<Index>(t.activeCells.size());
    t.X.resize(ctx.M(), A);
    t.c.resize(A);
    t.Wa.resize(A);
    for (Index j = 0; j < A; ++j) {
        const auto k = static_cast<std::size_t>(t.activeCells[static_cast<std::size_t>(j)]);
        t.X.col(j) = s.multipliers[k].multiplier;
        t.Wa[j] = W_value(ctx.problem.utility, s.actions[k]);
        t.c[j] = t.Wa[j] - t.X.col(j).dot(s.actions[k]);
    }
    return t;
}

struct AssignResult {
    std::vector<int> labels;
    std::vector<double> best;  // winning score per particle
};

// Margins between the best and second-best score from the last full
// evaluation, so that particles far from any boundary are skipped while
// cells drift only slightly between sweeps (moment case only).
struct AssignCache {
    bool valid = false;
    std::vector<Index> activeCells;
    Vec c;
    Mat X;
    std::vector<int> labels;
    std::vector<double> margin;
};

inline AssignResult assign_with(const PartitionContext& ctx, const ScoreTable& t, AssignCache* cache = nullptr) {
    const std::size_t n = static_cast<std::size_t>(ctx.n());
    AssignResult out;
    out.labels.resize(n);
    out.best.resize(n);
    const Index A = static_cast<Index>(t.activeCells.size());
    const Index M = ctx.M();
    if (!ctx.moment()) {
        parallel_for(n, [&](std::size_t i) {
            Index best = 0;
            double bestv = -std::numeric_limits<double>::infinity();
            for (Index j = 0; j < A; ++j) {
                const double v = t.score(j, static_cast<Index>(i));
                if (v > bestv) {
                    bestv = v;
                    best = j;
                }
            }
            out.labels[i] = static_cast<int>(t.activeCells[static_cast<std::size_t>(best)]);
            out.best[i] = bestv;
        });
        return out;
    }
    AssignCache local;
    AssignCache& C = cache ? *cache : local;
    const bool incremental = C.valid && C.activeCells == t.activeCells;
    double dc = 0.0, dx = 0.0, cmax = 0.0, xmax = 0.0;
    for (Index j = 0; j < A; ++j) {
        cmax = std::max(cmax, std::abs(t.c[j]));
        xmax = std::max(xmax, t.X.col(j).norm());
        if (incremental) {
            dc = std::max(dc, std::abs(t.c[j] - C.c[j]));
            dx = std::max(dx, (t.X.col(j) - C.X.col(j)).norm());
        }
    }
    if (!incremental) {
        C.labels.assign(n, 0);
        C.margin.assign(n, 0.0);
    }
    std::vector<Index> pos(static_cast<std::size_t>(std::max<Index>(1, ctx.problem.actionDim)), 0);
    Index maxCell = 0;
    for (Index k : t.activeCells) maxCell = std::max(maxCell, k);
    pos.assign(static_cast<std::size_t>(maxCell + 1), -1);
    for (Index j = 0; j < A; ++j) pos[static_cast<std::size_t>(t.activeCells[static_cast<std::size_t>(j)])] = j;
    const double* X = t.X.data();
    const double* G = ctx.astar.data();
    const Mat XT = t.X.transpose();
    parallel_for(n, [&](std::size_t i) {
        const double* g = G + static_cast<Index>(i) * M;
        const double gn = ctx.gnorm[static_cast<Index>(i)];
        if (incremental) {
            const double m = C.margin[i] - 2.0 * (dc + dx * gn);
            if (m > 1e-12 * (1.0 + cmax + xmax * gn)) {
                const int own = C.labels[i];
                const Index j = pos[static_cast<std::size_t>(own)];
                out.labels[i] = own;
                out.best[i] = affine_score(t.c[j], X + j * M, g, M);
                C.margin[i] = m;
                return;
            }
        }
        thread_local std::vector<double> buf;
        buf.resize(static_cast<std::size_t>(A));
        affine_scores(t.c.data(), XT.data(), g, M, A, buf.data());
        Index best = 0;
        double bestv = -std::numeric_limits<double>::infinity();
        double second = -std::numeric_limits<double>::infinity();
        for (Index j = 0; j < A; ++j) {
            const double v = buf[static_cast<std::size_t>(j)];
            if (v > bestv) {
                second = bestv;
                bestv = v;
                best = j;
            } else if (v > second) {
                second = v;
            }
        }
        const int lab = static_cast<int>(t.activeCells[static_cast<std::size_t>(best)]);
        out.labels[i] = lab;
        out.best[i] = bestv;
        C.labels[i] = lab;
        C.margin[i] = bestv - second;
    });
    C.valid = true;
    C.activeCells = t.activeCells;
    C.c = t.c;
    C.X = t.X;
    return out;
}

}  // namespace detail

// label(i) = argmax_k W(a_k) - x_k'G(a_k, w_i); ties to the smallest k.
inline std::vector<int> assign_cells(const ProblemSpec& p, const std::vector<Vec>& actions, const std::vector<Vec>& multipliers,
                                     const ParticleCloud& cloud) {
    if (actions.empty() || actions.size() != multipliers.size()) throw PreconditionError("actions and multipliers must align");
    const Index K = static_cast<Index>(actions.size());
    std::vector<int> labels(static_cast<std::size_t>(cloud.size()));
    parallel_for(static_cast<std::size_t>(cloud.size()), [&](std::size_t i) {
        const Vec w = cloud.point(static_cast<Index>(i));
        int best = 0;
        double bestv = -std::numeric_limits<double>::infinity();
        for (Index k = 0; k < K; ++k) {
            const auto& a = actions[static_cast<std::size_t>(k)];
            const double v = W_value(p.utility, a) - multipliers[static_cast<std::size_t>(k)].dot(eval_G(p, a, w));
            if (v > bestv) {
                bestv = v;
                best = static_cast<int>(k);
            }
        }
        labels[i] = best;
    });
    return labels;
}

// Transport cost of every particle at its own cell.
inline Vec own_transport_costs(const PartitionContext& ctx, const PartitionState& s) {
    auto t = detail::score_table(ctx, s);
    std::vector<Index> pos(static_cast<std::size_t>(s.K), -1);
    for (std::size_t j = 0; j < t.activeCells.size(); ++j) pos[static_cast<std::size_t>(t.activeCells[j])] = static_cast<Index>(j);
    Vec c(ctx.n());
    parallel_for(static_cast<std::size_t>(ctx.n()), [&](std::size_t i) {
        const Index ii = static_cast<Index>(i);
        c[ii] = ctx.wstar[ii] - t.score(pos[static_cast<std::size_t>(s.labels[i])], ii);
    });
    return c;
}

namespace detail {

// Give each empty cell the particle with the largest transport cost.
inline bool reseed_empty(const PartitionContext& ctx, const AssignResult& ar, Index K, std::vector<int>& labels) {
    std::vector<Index> count(static_cast<std::size_t>(K), 0);
    for (int l : labels) ++count[static_cast<std::size_t>(l)];
    std::vector<Index> empty;
    for (Index k = 0; k < K; ++k)
        if (count[static_cast<std::size_t>(k)] == 0) empty.push_back(k);
    if (empty.empty()) return false;
    const Index n = ctx.n();
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    auto cost = [&](Index i) { return ctx.wstar[i] - ar.best[static_cast<std::size_t>(i)]; };
    auto worse = [&](Index a, Index b) {
        const double ca = cost(a), cb = cost(b);
        return ca > cb || (ca == cb && a < b);
    };
    std::size_t top = std::min<std::size_t>(order.size(), 4 * empty.size() + 16);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(top), order.end(), worse);
    bool changed = false;
    std::size_t next = 0;
    for (Index k : empty) {
        while (next < order.size()) {
            if (next == top) {
                top = order.size();
                std::sort(order.begin() + static_cast<std::ptrdiff_t>(next), order.end(), worse);
            }
            const Index i = order[next++];
            const int from = labels[static_cast<std::size_t>(i)];
            if (count[static_cast<std::size_t>(from)] >= 2) {
                --count[static_cast<std::size_t>(from)];
                labels[static_cast<std::size_t>(i)] = static_cast<int>(k);
                ++count[static_cast<std::size_t>(k)];
                changed = true;
                break;
            }
        }
    }
    return changed;
}

inline bool try_merge(const PartitionContext& ctx, const PartitionState& s, PartitionState& out) {
    std::vector<Index> act;
    for (Index k = 0; k < s.K; ++k)
        if (s.active(k)) act.push_back(k);
    if (act.size() < 2) return false;
    double bestGain = 0.0;
    Index bj = -1, bk = -1;
    auto cells = ctx.moment() ? std::vector<std::vector<Index>>{} : members(s.labels, s.K);
    for (std::size_t x = 0; x < act.size(); ++x)
        for (std::size_t y = x + 1; y < act.size(); ++y) {
            const auto j = static_cast<std::size_t>(act[x]), k = static_cast<std::size_t>(act[y]);
            const double P = s.masses[act[x]] + s.masses[act[y]];
            Vec a;
            if (ctx.moment()) {
                a = (s.masses[act[x]] * s.actions[j] + s.masses[act[y]] * s.actions[k]) / P;
            } else {
                std::vector<Index> un = cells[j];
                un.insert(un.end(), cells[k].begin(), cells[k].end());
                a = solve_action_subset(ctx.problem, ctx.cloud.points, ctx.cloud.weights, un, &ctx.astar, ctx.opt.actionTol).action;
            }
            const double gain = P * W_value(ctx.problem.utility, a) - s.masses[act[x]] * W_value(ctx.problem.utility, s.actions[j]) -
                                s.masses[act[y]] * W_value(ctx.problem.utility, s.actions[k]);
            if (gain > bestGain) {
                bestGain = gain;
                bj = act[x];
                bk = act[y];
            }
        }
    if (bj < 0) return false;
    std::vector<int> labels = s.labels;
    for (int& l : labels)
        if (l == bk) l = static_cast<int>(bj);
    PartitionState cand = consistent_state(ctx, std::move(labels), s.K, &s.actions);
    if (!(cand.value > s.value)) return false;
    out = std::move(cand);
    return true;
}

inline void carry_meta(const PartitionState& from, PartitionState& to) {
    to.iterations = from.iterations;
    to.restartIndex = from.restartIndex;
    to.valueHistory = from.valueHistory;
    to.warnings = from.warnings;
}

}  // namespace detail

namespace detail {

// Cell sums of a state, updated move by move to screen candidates cheaply
// (moment case). Candidates that pass are re-solved exactly.
struct MoveScreen {
    const PartitionContext* ctx;
    Vec mass;
    Mat sum;
    std::vector<Index> count;

    MoveScreen(const PartitionContext& c, const PartitionState& s)
        : ctx(&c), mass(s.masses), sum(c.M(), s.K), count(static_cast<std::size_t>(s.K), 0) {
        for (Index k = 0; k < s.K; ++k) sum.col(k) = s.masses[k] * s.actions[static_cast<std::size_t>(k)];
        for (int l : s.labels) ++count[static_cast<std::size_t>(l)];
    }
    void move(Index i, int from, int to) {
        const double w = ctx->cloud.weights[i];
        mass[from] -= w;
        mass[to] += w;
        sum.col(from) -= w * ctx->astar.col(i);
        sum.col(to) += w * ctx->astar.col(i);
        --count[static_cast<std::size_t>(from)];
        ++count[static_cast<std::size_t>(to)];
    }
    double value() const {
        double v = 0.0;
        for (Index k = 0; k < mass.size(); ++k)
            if (count[static_cast<std::size_t>(k)] > 0 && mass[k] > 0.0) v += mass[k] * W_value(ctx->problem.utility, Vec(sum.col(k) / mass[k]));
        return v;
    }
};

// Sequential single-particle moves with running cell means (moment case).
// The target cell is the score argmax; a move is kept only if the exact
// value change is positive. Particles whose cached margin exceeds the drift
// of the cells since the cache was filled are skipped.
inline bool sequential_pass(const PartitionContext& ctx, const PartitionState& s, const AssignCache& C,
                            std::vector<int>& labels) {
    const Index M = ctx.M(), K = s.K;
    const UtilitySpec& u = ctx.problem.utility;
    MoveScreen ms(ctx, s);
    Mat A(M, K), XT(K, M);
    Vec c = Vec::Constant(K, -std::numeric_limits<double>::infinity()), Wk = Vec::Zero(K);
    std::vector<Index> pos(static_cast<std::size_t>(K), -1);
    for (std::size_t j = 0; j < C.activeCells.size(); ++j) pos[static_cast<std::size_t>(C.activeCells[j])] = static_cast<Index>(j);
    double dc = 0.0, dx = 0.0;
    bool bounded = C.valid;
    auto refresh = [&](Index k) {
        if (ms.count[static_cast<std::size_t>(k)] == 0) return;
        A.col(k) = ms.sum.col(k) / ms.mass[k];
        Wk[k] = W_value(u, A.col(k));
        const Vec x = W_grad(u, A.col(k));
        XT.row(k) = x.transpose();
        c[k] = Wk[k] - x.dot(A.col(k));
        const Index j = pos[static_cast<std::size_t>(k)];
        if (j < 0) {
            bounded = false;
            return;
        }
        dc = std::max(dc, std::abs(c[k] - C.c[j]));
        dx = std::max(dx, (x - C.X.col(j)).norm());
    };
    for (Index k = 0; k < K; ++k) refresh(k);
    labels = s.labels;
    bool moved = false;
    const double* G = ctx.astar.data();
    std::vector<double> buf(static_cast<std::size_t>(K));
    Vec a1(M), a2(M);
    for (Index i = 0; i < ctx.n(); ++i) {
        const auto ii = static_cast<std::size_t>(i);
        const int k = labels[ii];
        if (ms.count[static_cast<std::size_t>(k)] < 2) continue;
        const double gn = ctx.gnorm[i];
        if (bounded && C.labels[ii] == k && C.margin[ii] - 2.0 * (dc + dx * gn) > 1e-12 * (1.0 + std::abs(c[k]) + XT.row(k).norm() * gn))
            continue;
        const double* g = G + i * M;
        affine_scores(c.data(), XT.data(), g, M, K, buf.data());
        Index best = k;
        double bestv = buf[static_cast<std::size_t>(k)];
        for (Index l = 0; l < K; ++l)
            if (buf[static_cast<std::size_t>(l)] > bestv) {
                bestv = buf[static_cast<std::size_t>(l)];
                best = l;
            }
        if (best == k) continue;
        const double w = ctx.cloud.weights[i];
        const double mk = ms.mass[k] - w, ml = ms.mass[best] + w;
        a1 = (ms.sum.col(k) - w * ctx.astar.col(i)) / mk;
        a2 = (ms.sum.col(best) + w * ctx.astar.col(i)) / ml;
        const double delta = mk * W_value(u, a1) + ml * W_value(u, a2) - ms.mass[k] * Wk[k] - ms.mass[best] * Wk[best];
        if (!(delta > 0.0)) continue;
        ms.move(i, k, static_cast<int>(best));
        labels[ii] = static_cast<int>(best);
        refresh(k);
        refresh(best);
        moved = true;
    }
    return moved;
}

inline PartitionState lloyd_step(const PartitionContext& ctx, const PartitionState& s, AssignCache* cache) {
    auto table = score_table(ctx, s);
    AssignCache local;
    if (!cache) cache = &local;
    AssignResult ar = assign_with(ctx, table, cache);
    const std::vector<int>& next = ar.labels;
    const bool screen = ctx.moment();
    const double slack = 1e-9 * std::max(1.0, std::abs(s.value));

    auto accept = [&](PartitionState cand, bool strict) -> std::optional<PartitionState> {
        if (strict ? cand.value > s.value : cand.value >= s.value) {
            carry_meta(s, cand);
            return cand;
        }
        return std::nullopt;
    };
    auto screened = [&](const std::vector<int>& labels) {
        if (!screen) return true;
        MoveScreen ms(ctx, s);
        for (Index i = 0; i < ctx.n(); ++i) {
            const auto ii = static_cast<std::size_t>(i);
            if (labels[ii] != s.labels[ii]) ms.move(i, s.labels[ii], labels[ii]);
        }
        return ms.value() >= s.value - slack;
    };

    std::vector<int> repaired = next;
    if (reseed_empty(ctx, ar, s.K, repaired) && repaired != s.labels && screened(repaired)) {
        if (auto r = accept(consistent_state(ctx, repaired, s.K, &s.actions), false)) return *r;
    }
    if (next != s.labels) {
        if (screened(next))
            if (auto r = accept(consistent_state(ctx, next, s.K, &s.actions), false)) return *r;
        if (screen) {
            std::vector<int> seq;
            if (sequential_pass(ctx, s, *cache, seq))
                if (auto r = accept(consistent_state(ctx, std::move(seq), s.K, &s.actions), true)) return *r;
        }
        // partial moves of the most-gaining particles; screened candidates
        // are tried best first
        std::vector<std::pair<double, Index>> changed;
        std::vector<Index> pos(static_cast<std::size_t>(s.K), -1);
        for (std::size_t j = 0; j < table.activeCells.size(); ++j) pos[static_cast<std::size_t>(table.activeCells[j])] = static_cast<Index>(j);
        for (Index i = 0; i < ctx.n(); ++i) {
            const auto ii = static_cast<std::size_t>(i);
            if (next[ii] == s.labels[ii]) continue;
            changed.emplace_back(-(ar.best[ii] - table.score(pos[static_cast<std::size_t>(s.labels[ii])], i)), i);
        }
        std::sort(changed.begin(), changed.end());
        std::vector<std::size_t> counts;
        for (double c = static_cast<double>(changed.size()) / 2; c >= 1.0; c /= 1.4142135623730951) {
            const auto cc = static_cast<std::size_t>(c);
            if (counts.empty() || counts.back() != cc) counts.push_back(cc);
        }
        std::vector<double> est(counts.size(), 0.0);
        if (screen && !counts.empty()) {
            MoveScreen ms(ctx, s);
            std::size_t done = 0;
            for (std::size_t c = counts.size(); c-- > 0;) {
                for (; done < counts[c]; ++done) {
                    const auto i = static_cast<std::size_t>(changed[done].second);
                    ms.move(changed[done].second, s.labels[i], next[i]);
                }
                est[c] = ms.value();
            }
        }
        std::vector<std::size_t> order(counts.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return est[a] > est[b]; });
        for (std::size_t c : order) {
            if (screen && !(est[c] > s.value - slack)) break;
            std::vector<int> part = s.labels;
            for (std::size_t q = 0; q < counts[c]; ++q) {
                const auto i = static_cast<std::size_t>(changed[q].second);
                part[i] = next[i];
            }
            if (auto r = accept(consistent_state(ctx, std::move(part), s.K, &s.actions), true)) return *r;
        }
    }
    if (ctx.opt.mergeMoves) {
        PartitionState merged;
        if (try_merge(ctx, s, merged)) {
            carry_meta(s, merged);
            return merged;
        }
    }
    return s;
}

}  // namespace detail

// One safeguarded sweep: reassign by the score argmax, repair empty cells,
// re-solve actions and multipliers. A candidate that lowers the value is
// replaced by a partial move of the most-gaining particles, then by a merge.
// Returns the input state unchanged when nothing improves.
inline PartitionState lloyd_iterate(const PartitionContext& ctx, const PartitionState& s) {
    return detail::lloyd_step(ctx, s, nullptr);
}

namespace detail {

// Exact single-particle moves; used on small clouds where the best
// partition need not be a fixed point of the sweep.
inline bool local_search(const PartitionContext& ctx, PartitionState& s) {
    const Index n = ctx.n(), K = s.K;
    const auto& u = ctx.problem.utility;
    bool any = false;
    std::vector<int> labels = s.labels;
    std::vector<Vec> actions = s.actions;
    Vec masses = s.masses;
    Mat sums(ctx.M(), K);
    Vec Wk(K);
    for (Index k = 0; k < K; ++k) {
        sums.col(k) = masses[k] * actions[static_cast<std::size_t>(k)];
        Wk[k] = masses[k] > 0.0 ? W_value(u, actions[static_cast<std::size_t>(k)]) : 0.0;
    }
    auto cells = members(labels, K);
    std::vector<Index> cnt(static_cast<std::size_t>(K));
    for (Index k = 0; k < K; ++k) cnt[static_cast<std::size_t>(k)] = static_cast<Index>(cells[static_cast<std::size_t>(k)].size());
    auto solveCell = [&](const std::vector<Index>& idx) {
        return solve_action_subset(ctx.problem, ctx.cloud.points, ctx.cloud.weights, idx, &ctx.astar, ctx.opt.actionTol).action;
    };
    for (int pass = 0; pass < 200; ++pass) {
        bool improved = false;
        for (Index i = 0; i < n; ++i) {
            const auto ii = static_cast<std::size_t>(i);
            const int from = labels[ii];
            const double w = ctx.cloud.weights[i];
            const bool keeps = cnt[static_cast<std::size_t>(from)] > 1;
            const double Pf = keeps ? masses[from] - w : 0.0;
            double oldFrom = masses[from] * Wk[from];
            Vec af;
            double newFrom = 0.0;
            std::vector<Index> fromIdx;
            if (keeps) {
                if (ctx.moment()) {
                    af = (sums.col(from) - w * ctx.astar.col(i)) / Pf;
                } else {
                    for (Index j : cells[static_cast<std::size_t>(from)])
                        if (j != i) fromIdx.push_back(j);
                    af = solveCell(fromIdx);
                }
                newFrom = Pf * W_value(u, af);
            }
            double bestDelta = 1e-13 * (1.0 + std::abs(s.value));
            int bestK = -1;
            Vec bestA;
            for (Index k = 0; k < K; ++k) {
                if (k == from) continue;
                const double Pk = masses[k] + w;
                Vec ak;
                if (ctx.moment()) {
                    ak = (sums.col(k) + w * ctx.astar.col(i)) / Pk;
                } else {
                    std::vector<Index> idx = cells[static_cast<std::size_t>(k)];
                    idx.push_back(i);
                    ak = solveCell(idx);
                }
                const double delta = newFrom + Pk * W_value(u, ak) - oldFrom - masses[k] * Wk[k];
                if (delta > bestDelta) {
                    bestDelta = delta;
                    bestK = static_cast<int>(k);
                    bestA = ak;
                }
            }
            if (bestK < 0) continue;
            improved = any = true;
            labels[ii] = bestK;
            masses[from] = Pf;
            masses[bestK] += w;
            sums.col(from) -= w * ctx.astar.col(i);
            sums.col(bestK) += w * ctx.astar.col(i);
            --cnt[static_cast<std::size_t>(from)];
            ++cnt[static_cast<std::size_t>(bestK)];
            Wk[from] = keeps ? W_value(u, af) : 0.0;
            if (keeps) actions[static_cast<std::size_t>(from)] = af;
            actions[static_cast<std::size_t>(bestK)] = bestA;
            Wk[bestK] = W_value(u, bestA);
            if (!ctx.moment()) {
                cells[static_cast<std::size_t>(from)] = fromIdx;
                cells[static_cast<std::size_t>(bestK)].push_back(i);
            }
        }
        if (!improved) break;
    }
    if (!any) return false;
    PartitionState cand = consistent_state(ctx, labels, K, &s.actions);
    if (!(cand.value > s.value)) return false;
    carry_meta(s, cand);
    s = std::move(cand);
    return true;
}

// k-means++ style seeds over distinct full-information actions.
inline std::vector<Index> spread_seeds(const PartitionContext& ctx, Index K, Rng& rng) {
    const Index n = ctx.n();
    const Vec& w = ctx.cloud.weights;
    std::vector<Index> seeds;
    auto pick = [&](const Vec& score) -> Index {
        const double total = score.sum();
        if (!(total > 0.0)) return -1;
        double u = rng.uniform() * total;
        for (Index i = 0; i < n; ++i) {
            if (score[i] <= 0.0) continue;
            u -= score[i];
            if (u <= 0.0) return i;
        }
        for (Index i = n; i-- > 0;)
            if (score[i] > 0.0) return i;
        return -1;
    };
    Index first = pick(w);
    seeds.push_back(first);
    Vec d2(n);
    for (Index i = 0; i < n; ++i) d2[i] = (ctx.astar.col(i) - ctx.astar.col(first)).squaredNorm();
    while (static_cast<Index>(seeds.size()) < K) {
        const Index next = pick(w.cwiseProduct(d2));
        if (next < 0) break;
        seeds.push_back(next);
        for (Index i = 0; i < n; ++i) d2[i] = std::min(d2[i], (ctx.astar.col(i) - ctx.astar.col(next)).squaredNorm());
    }
    return seeds;
}

inline PartitionState initial_state(const PartitionContext& ctx, Index K, Rng& rng) {
    const auto seeds = spread_seeds(ctx, K, rng);
    PartitionState s;
    s.K = K;
    s.masses = Vec::Zero(K);
    s.actions.assign(static_cast<std::size_t>(K), Vec::Zero(ctx.M()));
    s.multipliers.assign(static_cast<std::size_t>(K), MultiplierRecord{});
    for (std::size_t k = 0; k < seeds.size(); ++k) {
        const Index i = seeds[k];
        s.actions[k] = ctx.astar.col(i);
        s.multipliers[k] = multiplier_subset(ctx.problem, ctx.cloud.points, ctx.cloud.weights, {i}, s.actions[k]);
        s.masses[static_cast<Index>(k)] = ctx.cloud.weights[i];
    }
    auto ar = assign_with(ctx, score_table(ctx, s));
    return consistent_state(ctx, std::move(ar.labels), K, &s.actions);
}

}  // namespace detail

struct OptimizeResult {
    PartitionState best;
    int convergedRestarts = 0;
    std::vector<double> restartValues;
};

class PartitionSolverError : public SolverError {
public:
    PartitionSolverError(const std::string& what, PartitionState best)
        : SolverError(what, 0.0), best_(std::move(best)) {}
    const PartitionState& best() const { return best_; }

private:
    PartitionState best_;
};

// Iterate sweeps to convergence from a given state.
inline PartitionState run_sweeps(const PartitionContext& ctx, PartitionState s, double tol, int maxIter) {
    s.valueHistory.push_back(s.value);
    s.converged = false;
    detail::AssignCache cache;
    for (int it = 0; it < maxIter; ++it) {
        PartitionState next = detail::lloyd_step(ctx, s, &cache);
        next.iterations = s.iterations + 1;
        next.valueHistory.push_back(next.value);
        const bool same = next.labels == s.labels;
        const double gain = (next.value - s.value) / std::max(1.0, std::abs(s.value));
        s = std::move(next);
        if (same || gain < tol) {
            s.converged = true;
            break;
        }
    }
    return s;
}

inline PartitionState solve_restart(const PartitionContext& ctx, Index K, double tol, int maxIter, std::uint64_t seed,
                                    int r) {
    Rng rng(seed, static_cast<std::uint64_t>(r));
    PartitionState s = detail::initial_state(ctx, K, rng);
    s.restartIndex = r;
    s = run_sweeps(ctx, std::move(s), tol, maxIter);
    if (s.converged && ctx.n() <= ctx.opt.localSearchMaxN) {
        for (int round = 0; round < 50; ++round) {
            if (!detail::local_search(ctx, s)) break;
            const int before = s.iterations;
            s = run_sweeps(ctx, std::move(s), tol, std::max(1, maxIter - before));
            if (!s.converged) break;
        }
    }
    return s;
}

inline PartitionState optimize_partition(const ProblemSpec& problem, const ParticleCloud& cloud, Index K, int restarts,
                                         double tol = 1e-9, int maxIter = 500, std::uint64_t seed = 0,
                                         PartitionOptions opt = {}) {
    if (K < 1) throw PreconditionError("K must be >= 1");
    if (restarts < 1) throw PreconditionError("restarts must be >= 1");
    validate_problem(problem);
    std::vector<std::string> warnings;
    const Index distinct = distinct_count(cloud.points);
    if (K > distinct) {
        warnings.push_back("K=" + std::to_string(K) + " exceeds " + std::to_string(distinct) + " distinct particles; clamped");
        K = distinct;
    }
    PartitionContext ctx(problem, cloud, opt);
    std::optional<PartitionState> best, bestAny;
    for (int r = 0; r < restarts; ++r) {
        PartitionState s;
        try {
            s = solve_restart(ctx, K, tol, maxIter, seed, r);
        } catch (const SolverError& e) {
            warnings.push_back("restart " + std::to_string(r) + ": " + e.what());
            continue;
        } catch (const DegenerateCellError& e) {
            warnings.push_back("restart " + std::to_string(r) + ": " + e.what());
            continue;
        }
        if (!bestAny || s.value > bestAny->value) bestAny = s;
        if (s.converged && (!best || s.value > best->value)) best = s;
    }
    if (!best) {
        PartitionState fallback = bestAny ? *bestAny : PartitionState{};
        fallback.warnings.insert(fallback.warnings.end(), warnings.begin(), warnings.end());
        throw PartitionSolverError("no restart converged", fallback);
    }
    best->warnings.insert(best->warnings.end(), warnings.begin(), warnings.end());
    return *best;
}

// Value of a labelled partition; actions are re-solved per cell.
inline double policy_value(const ProblemSpec& problem, const ParticleCloud& cloud, const std::vector<int>& labels,
                           PartitionOptions opt = {}) {
    if (labels.size() != static_cast<std::size_t>(cloud.size())) throw PreconditionError("one label per particle required");
    int K = 0;
    for (int l : labels) {
        if (l < 0) throw PreconditionError("labels must be nonnegative");
        K = std::max(K, l + 1);
    }
    PartitionContext ctx(problem, cloud, opt);
    return consistent_state(ctx, labels, K).value;
}

// Value of an explicit action per particle (columns of actions).
inline double policy_value(const ProblemSpec& problem, const ParticleCloud& cloud, const Mat& actions) {
    if (actions.cols() != cloud.size() || actions.rows() != problem.actionDim) throw PreconditionError("one action per particle required");
    auto blockFn = [&](std::size_t lo, std::size_t hi) {
        double v = 0.0;
        for (std::size_t i = lo; i < hi; ++i)
            v += cloud.weights[static_cast<Index>(i)] * W_value(problem.utility, actions.col(static_cast<Index>(i)));
        return v;
    };
    return block_reduce<double>(static_cast<std::size_t>(cloud.size()), blockFn, [](double a, double b) { return a + b; });
}

}  // namespace persuasion
