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
#include "manifold_spec.hpp"
#include "parallel.hpp"
#include "partition.hpp"
#include "problem.hpp"
#include "rng.hpp"
#include "transport.hpp"
#include "utility.hpp"

namespace persuasion {

struct DiagnosticsEntry {
    std::string checkName;
    bool pass = false;
    double worstViolation = 0.0;
    Vec worstLocation;
    double tolerance = 0.0;
    Index samplesUsed = 0;
};

inline DiagnosticsEntry make_entry(std::string name, double worst, Vec loc, double tol, Index used) {
    DiagnosticsEntry e;
    e.checkName = std::move(name);
    e.worstViolation = worst;
    e.worstLocation = std::move(loc);
    e.tolerance = tol;
    e.samplesUsed = used;
    e.pass = worst <= tol;
    return e;
}

struct DiagnosticsReport {
    std::vector<DiagnosticsEntry> entries;
    void add(DiagnosticsEntry e) { entries.push_back(std::move(e)); }
    bool all_pass() const {
        return std::all_of(entries.begin(), entries.end(), [](const DiagnosticsEntry& e) { return e.pass; });
    }
};

inline constexpr double kDefaultCertificateTol = 1e-6;

// max(1, range of W over the columns)
inline double utility_scale(const UtilitySpec& u, const Mat& pts) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (Index i = 0; i < pts.cols(); ++i) {
        const double v = W_value(u, pts.col(i));
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    return pts.cols() ? std::max(1.0, hi - lo) : 1.0;
}

namespace detail {

inline std::pair<double, Index> worst_of(const std::vector<double>& v) {
    double w = -std::numeric_limits<double>::infinity();
    Index at = 0;
    for (std::size_t i = 0; i < v.size(); ++i)
        if (v[i] > w) {
            w = v[i];
            at = static_cast<Index>(i);
        }
    return {w, at};
}

}  // namespace detail

// Cloud points plus midpoints of random pairs, clipped to radius*sigma around the mean.
inline Mat hull_test_set(const Mat& G, Index pairs = 10000, std::uint64_t seed = 0, double radius = kGaussianTruncation) {
    const Index n = G.cols(), M = G.rows();
    if (n == 0) throw PreconditionError("hull test set needs points");
    const Vec m = G.rowwise().mean();
    const Mat C = G.colwise() - m;
    const double sigma = std::sqrt((C.array().square().sum()) / static_cast<double>(n * M));
    Mat out(M, n + (n > 1 ? pairs : 0));
    out.leftCols(n) = G;
    if (n > 1) {
        Rng rng(seed, 17);
        for (Index q = 0; q < pairs; ++q) {
            const Index i = static_cast<Index>(rng.bits() % static_cast<std::uint64_t>(n));
            const Index j = static_cast<Index>(rng.bits() % static_cast<std::uint64_t>(n));
            out.col(n + q) = 0.5 * (G.col(i) + G.col(j));
        }
    }
    const double R = radius * sigma;
    if (R > 0.0)
        for (Index i = 0; i < out.cols(); ++i) {
            const double d = (out.col(i) - m).norm();
            if (d > R) out.col(i) = m + (out.col(i) - m) * (R / d);
        }
    return out;
}

// worst = max_b min_{a in manifold} c(a, b), normalized by the utility scale.
inline DiagnosticsEntry verify_maximality(const UtilitySpec& u, const ManifoldSpec& m, const Mat& testSet,
                                          double tol = kDefaultCertificateTol, const ProjectionOptions& opt = {}) {
    if (testSet.cols() == 0) throw PreconditionError("maximality needs test points");
    const auto proj = project_all(u, m, testSet, opt);
    const double scale = utility_scale(u, testSet);
    std::vector<double> v(proj.size());
    for (std::size_t i = 0; i < proj.size(); ++i) v[i] = proj[i].cost / scale;
    const auto [w, at] = detail::worst_of(v);
    return make_entry("maximality", w, testSet.col(at), tol, testSet.cols());
}

// c(a_i, a_j) >= -tol on ordered pairs and midpoint convexity of W.
inline DiagnosticsEntry verify_monotonicity(const UtilitySpec& u, const Mat& samples, double tol = kDefaultCertificateTol,
                                            Index maxSamples = 2000) {
    Mat S = samples;
    if (S.cols() > maxSamples) {
        Mat T(S.rows(), maxSamples);
        for (Index j = 0; j < maxSamples; ++j) T.col(j) = S.col(j * S.cols() / maxSamples);
        S = T;
    }
    const Index n = S.cols();
    if (n < 2) return make_entry("monotonicity", 0.0, n ? Vec(S.col(0)) : Vec(), tol, 0);
    const double scale = utility_scale(u, S);
    Vec Wv(n);
    for (Index i = 0; i < n; ++i) Wv[i] = W_value(u, S.col(i));
    std::vector<double> rowWorst(static_cast<std::size_t>(n));
    std::vector<Index> rowAt(static_cast<std::size_t>(n));
    parallel_for(static_cast<std::size_t>(n), [&](std::size_t ii) {
        const Index i = static_cast<Index>(ii);
        const Vec gi = W_grad(u, S.col(i));
        double w = -std::numeric_limits<double>::infinity();
        Index at = 0;
        for (Index j = 0; j < n; ++j) {
            if (j == i) continue;
            const double c = Wv[j] - Wv[i] + gi.dot(S.col(i) - S.col(j));
            const double mid = W_value(u, 0.5 * (S.col(i) + S.col(j))) - 0.5 * (Wv[i] + Wv[j]);
            const double v = std::max(-c, mid) / scale;
            if (v > w) {
                w = v;
                at = j;
            }
        }
        rowWorst[ii] = w;
        rowAt[ii] = at;
    });
    const auto [w, i] = detail::worst_of(rowWorst);
    Vec loc(2 * S.rows());
    loc << S.col(i), S.col(rowAt[static_cast<std::size_t>(i)]);
    return make_entry("monotonicity", w, loc, tol, n * (n - 1));
}

// Farthest-point representatives refined by a few Lloyd steps, then nearest-representative buckets.
inline std::vector<int> nearest_rep_labels(const Mat& actions, Index bins, int lloydSteps = 10) {
    const Index n = actions.cols();
    if (n == 0 || bins < 1) throw PreconditionError("bucketing needs actions and >= 1 bin");
    std::vector<Index> seeds{0};
    Vec dist = (actions.colwise() - actions.col(0)).colwise().norm().transpose();
    while (static_cast<Index>(seeds.size()) < bins) {
        Index far = 0;
        const double d = dist.maxCoeff(&far);
        if (!(d > 0.0)) break;
        seeds.push_back(far);
        dist = dist.cwiseMin((actions.colwise() - actions.col(far)).colwise().norm().transpose());
    }
    const Index B = static_cast<Index>(seeds.size());
    Mat R(actions.rows(), B);
    for (Index r = 0; r < B; ++r) R.col(r) = actions.col(seeds[static_cast<std::size_t>(r)]);
    std::vector<int> lab(static_cast<std::size_t>(n));
    auto assign = [&]() {
        parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
            double best = std::numeric_limits<double>::infinity();
            int at = 0;
            for (Index r = 0; r < B; ++r) {
                const double d = (actions.col(static_cast<Index>(i)) - R.col(r)).squaredNorm();
                if (d < best) {
                    best = d;
                    at = static_cast<int>(r);
                }
            }
            lab[i] = at;
        });
    };
    assign();
    for (int it = 0; it < lloydSteps; ++it) {
        Mat S = Mat::Zero(actions.rows(), B);
        Vec cnt = Vec::Zero(B);
        for (Index i = 0; i < n; ++i) {
            S.col(lab[static_cast<std::size_t>(i)]) += actions.col(i);
            cnt[lab[static_cast<std::size_t>(i)]] += 1.0;
        }
        for (Index r = 0; r < B; ++r)
            if (cnt[r] > 0.0) R.col(r) = S.col(r) / cnt[r];
        const auto before = lab;
        assign();
        if (lab == before) break;
    }
    return lab;
}

// Equal sectors of the angle of (a_1, a_2) about center; boundaries sit half a sector off the axes
// so lattice clouds do not pile up on them.
inline std::vector<int> angular_labels(const Mat& actions, Index bins, Vec center = Vec()) {
    if (actions.rows() != 2) throw PreconditionError("angular buckets need 2-dimensional actions");
    if (bins < 1) throw PreconditionError("need >= 1 bin");
    if (center.size() == 0) center = Vec::Zero(2);
    std::vector<int> lab(static_cast<std::size_t>(actions.cols()));
    for (Index i = 0; i < actions.cols(); ++i) {
        const double th = std::atan2(actions(1, i) - center[1], actions(0, i) - center[0]);
        const double f = (th + M_PI) / (2.0 * M_PI) * static_cast<double>(bins) + 0.5;
        lab[static_cast<std::size_t>(i)] = static_cast<int>(std::fmod(std::floor(f), static_cast<double>(bins)));
    }
    return lab;
}

// max over buckets of |E[g | bucket] - mean action in bucket|
inline DiagnosticsEntry ce_residual_buckets(const ProblemSpec& p, const ParticleCloud& cloud, const Mat& actions,
                                            const std::vector<int>& buckets, double tol = kDefaultCertificateTol) {
    if (!p.is_moment()) throw PreconditionError("ce residual needs a moment receiver");
    if (actions.cols() != cloud.size() || buckets.size() != static_cast<std::size_t>(cloud.size()))
        throw PreconditionError("actions, buckets and cloud disagree in count");
    const Mat G = eval_g_all(p.momentMap, cloud.points);
    const int B = buckets.empty() ? 0 : *std::max_element(buckets.begin(), buckets.end()) + 1;
    Mat sg = Mat::Zero(G.rows(), B), sa = Mat::Zero(G.rows(), B);
    Vec mass = Vec::Zero(B);
    for (Index i = 0; i < cloud.size(); ++i) {
        const int b = buckets[static_cast<std::size_t>(i)];
        sg.col(b) += cloud.weights[i] * G.col(i);
        sa.col(b) += cloud.weights[i] * actions.col(i);
        mass[b] += cloud.weights[i];
    }
    double worst = 0.0;
    Vec loc = Vec::Zero(G.rows());
    Index used = 0;
    for (int b = 0; b < B; ++b) {
        if (!(mass[b] > 0.0)) continue;
        ++used;
        const double r = ((sg.col(b) - sa.col(b)) / mass[b]).norm();
        if (r > worst || used == 1) {
            worst = std::max(worst, r);
            loc = sa.col(b) / mass[b];
        }
    }
    return make_entry("ce_residual", worst, loc, tol, used);
}

inline DiagnosticsEntry ce_residual(const ProblemSpec& p, const ParticleCloud& cloud, const Mat& actions, Index bins,
                                    double tol = kDefaultCertificateTol) {
    return ce_residual_buckets(p, cloud, actions, nearest_rep_labels(actions, bins), tol);
}

// (i) negative cost of the own signal, (ii) own signal is the cheapest; combined = worse of the two.
struct TransportEntries {
    DiagnosticsEntry negativeCost;
    DiagnosticsEntry bestSignal;
    DiagnosticsEntry combined;
};

namespace detail {

inline TransportEntries transport_check(const ProblemSpec& p, const ParticleCloud& cloud, const std::vector<int>& own,
                                        const Mat& candA, const Mat& candX, double tol) {
    const Index n = cloud.size(), K = candA.cols();
    const Mat astar = full_info_actions(p, cloud);
    const double scale = utility_scale(p.utility, astar);
    Vec Wk(K);
    for (Index k = 0; k < K; ++k) Wk[k] = W_value(p.utility, candA.col(k));
    std::vector<double> vi(static_cast<std::size_t>(n)), vii(static_cast<std::size_t>(n));
    parallel_for(static_cast<std::size_t>(n), [&](std::size_t ii) {
        const Index i = static_cast<Index>(ii);
        const double ws = W_value(p.utility, astar.col(i));
        double mine = 0.0, lo = std::numeric_limits<double>::infinity();
        for (Index k = 0; k < K; ++k) {
            const Vec Gk = p.is_moment() ? Vec(candA.col(k) - astar.col(i)) : eval_G(p, candA.col(k), cloud.point(i));
            const double c = ws - Wk[k] + candX.col(k).dot(Gk);
            lo = std::min(lo, c);
            if (k == own[ii]) mine = c;
        }
        vi[ii] = mine / scale;
        vii[ii] = (mine - lo) / scale;
    });
    const auto [wi, ai] = worst_of(vi);
    const auto [wii, aii] = worst_of(vii);
    TransportEntries out;
    out.negativeCost = make_entry("transport_negative_cost", wi, cloud.point(ai), tol, n);
    out.bestSignal = make_entry("transport_best_signal", wii, cloud.point(aii), tol, n);
    out.combined = wi >= wii ? make_entry("transport_optimality", wi, cloud.point(ai), tol, n)
                             : make_entry("transport_optimality", wii, cloud.point(aii), tol, n);
    return out;
}

}  // namespace detail

// (i) c(a(w_i), w_i; x) <= tol and (ii) no other signal action is cheaper.
inline TransportEntries transport_entries(const ProblemSpec& p, const ParticleCloud& cloud, const PartitionState& s,
                                          double tol = kDefaultCertificateTol) {
    if (s.labels.size() != static_cast<std::size_t>(cloud.size())) throw PreconditionError("labels and cloud disagree");
    std::vector<Index> act;
    std::vector<int> remap(static_cast<std::size_t>(s.K), -1);
    for (Index k = 0; k < s.K; ++k)
        if (s.active(k)) {
            remap[static_cast<std::size_t>(k)] = static_cast<int>(act.size());
            act.push_back(k);
        }
    Mat A(p.actionDim, static_cast<Index>(act.size())), X(p.actionDim, A.cols());
    for (std::size_t j = 0; j < act.size(); ++j) {
        A.col(static_cast<Index>(j)) = s.actions[static_cast<std::size_t>(act[j])];
        const auto& mr = s.multipliers[static_cast<std::size_t>(act[j])];
        X.col(static_cast<Index>(j)) = mr.multiplier.size() ? mr.multiplier : W_grad(p.utility, A.col(static_cast<Index>(j)));
    }
    std::vector<int> own(s.labels.size());
    for (std::size_t i = 0; i < own.size(); ++i) {
        own[i] = remap[static_cast<std::size_t>(s.labels[i])];
        if (own[i] < 0) throw PreconditionError("particle labelled with an empty cell");
    }
    return detail::transport_check(p, cloud, own, A, X, tol);
}

inline DiagnosticsEntry verify_transport_optimality(const ProblemSpec& p, const ParticleCloud& cloud,
                                                    const PartitionState& s, double tol = kDefaultCertificateTol) {
    return transport_entries(p, cloud, s, tol).combined;
}

// Group identical actions into pools; labels in first-occurrence order.
inline std::vector<int> pools_from_actions(const Mat& actions, std::vector<Vec>* poolActions = nullptr) {
    const Index n = actions.cols();
    std::vector<Index> ord(static_cast<std::size_t>(n));
    std::iota(ord.begin(), ord.end(), Index{0});
    auto less = [&](Index a, Index b) {
        for (Index d = 0; d < actions.rows(); ++d)
            if (actions(d, a) != actions(d, b)) return actions(d, a) < actions(d, b);
        return a < b;
    };
    std::sort(ord.begin(), ord.end(), less);
    std::vector<Index> rep(static_cast<std::size_t>(n));
    for (std::size_t j = 0; j < ord.size(); ++j)
        rep[static_cast<std::size_t>(ord[j])] =
            (j > 0 && actions.col(ord[j]) == actions.col(ord[j - 1])) ? rep[static_cast<std::size_t>(ord[j - 1])] : ord[j];
    std::vector<int> lab(static_cast<std::size_t>(n), -1), id(static_cast<std::size_t>(n), -1);
    int next = 0;
    if (poolActions) poolActions->clear();
    for (Index i = 0; i < n; ++i) {
        auto& slot = id[static_cast<std::size_t>(rep[static_cast<std::size_t>(i)])];
        if (slot < 0) {
            slot = next++;
            if (poolActions) poolActions->push_back(actions.col(i));
        }
        lab[static_cast<std::size_t>(i)] = slot;
    }
    return lab;
}

// Policy form (moment): x = grad W(a); candidates are every particle's own action plus a strided
// subset of the distinct actions.
inline TransportEntries transport_entries(const ProblemSpec& p, const ParticleCloud& cloud, const Mat& actions,
                                          double tol = kDefaultCertificateTol, Index maxCandidates = 2000) {
    if (!p.is_moment()) throw PreconditionError("policy transport check needs a moment receiver");
    if (actions.cols() != cloud.size()) throw PreconditionError("actions and cloud disagree");
    std::vector<Vec> pa;
    const auto lab = pools_from_actions(actions, &pa);
    const Index P = static_cast<Index>(pa.size());
    const Index take = std::min(P, maxCandidates);
    Mat As(p.actionDim, take), Xs(p.actionDim, take);
    Vec Ws(take);
    for (Index j = 0; j < take; ++j) {
        As.col(j) = pa[static_cast<std::size_t>(j * P / take)];
        const WEval e = eval_W(p.utility, As.col(j));
        Xs.col(j) = e.grad;
        Ws[j] = e.value;
    }
    const Mat G = eval_g_all(p.momentMap, cloud.points);
    const double scale = utility_scale(p.utility, G);
    std::vector<double> vi(static_cast<std::size_t>(cloud.size())), vii(vi.size());
    parallel_for(vi.size(), [&](std::size_t ii) {
        const Index i = static_cast<Index>(ii);
        const double ws = W_value(p.utility, G.col(i));
        const Vec a = actions.col(i);
        const WEval e = eval_W(p.utility, a);
        const double mine = ws - e.value + e.grad.dot(a - G.col(i));
        double lo = mine;
        for (Index j = 0; j < take; ++j) lo = std::min(lo, ws - Ws[j] + Xs.col(j).dot(As.col(j) - G.col(i)));
        vi[ii] = mine / scale;
        vii[ii] = (mine - lo) / scale;
    });
    const auto [wi, ai] = detail::worst_of(vi);
    const auto [wii, aii] = detail::worst_of(vii);
    const Index n = cloud.size();
    TransportEntries out;
    out.negativeCost = make_entry("transport_negative_cost", wi, cloud.point(ai), tol, n);
    out.bestSignal = make_entry("transport_best_signal", wii, cloud.point(aii), tol, n);
    out.combined = wi >= wii ? make_entry("transport_optimality", wi, cloud.point(ai), tol, n)
                             : make_entry("transport_optimality", wii, cloud.point(aii), tol, n);
    return out;
}

inline DiagnosticsEntry verify_transport_optimality(const ProblemSpec& p, const ParticleCloud& cloud, const Mat& actions,
                                                    double tol = kDefaultCertificateTol, Index maxCandidates = 2000) {
    return transport_entries(p, cloud, actions, tol, maxCandidates).combined;
}

// W(t g1 + (1-t) g2) + t (grad W(a)(a - g1) - W(a)) + (1-t) (grad W(a)(a - g2) - W(a)) <= tol
inline DiagnosticsEntry pool_inequality(const ProblemSpec& p, const ParticleCloud& cloud, const std::vector<int>& labels,
                                        const std::vector<Vec>& actions, Index pairs = 1000, Index tGrid = 11,
                                        std::uint64_t seed = 0, double tol = kDefaultCertificateTol) {
    if (!p.is_moment()) throw PreconditionError("pool inequality needs a moment receiver");
    if (labels.size() != static_cast<std::size_t>(cloud.size())) throw PreconditionError("labels and cloud disagree");
    if (tGrid < 2) throw PreconditionError("t grid needs >= 2 points");
    const Mat G = eval_g_all(p.momentMap, cloud.points);
    const double scale = utility_scale(p.utility, G);
    const auto mem = detail::members(labels, static_cast<Index>(actions.size()));
    std::vector<Index> eligible;
    for (std::size_t k = 0; k < mem.size(); ++k)
        if (mem[k].size() >= 2)
            for (Index i : mem[k]) eligible.push_back(i);
    if (eligible.empty()) return make_entry("pool_inequality", 0.0, Vec::Zero(p.actionDim), tol, 0);
    Rng rng(seed, 29);
    double worst = -std::numeric_limits<double>::infinity();
    Vec loc;
    for (Index q = 0; q < pairs; ++q) {
        const Index i = eligible[static_cast<std::size_t>(rng.bits() % eligible.size())];
        const auto& cell = mem[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
        Index j = i;
        while (j == i) j = cell[static_cast<std::size_t>(rng.bits() % cell.size())];
        const Vec& a = actions[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
        const WEval e = eval_W(p.utility, a);
        const double s1 = e.grad.dot(a - G.col(i)) - e.value;
        const double s2 = e.grad.dot(a - G.col(j)) - e.value;
        for (Index k = 0; k < tGrid; ++k) {
            const double t = static_cast<double>(k) / static_cast<double>(tGrid - 1);
            const Vec b = t * G.col(i) + (1.0 - t) * G.col(j);
            const double v = (W_value(p.utility, b) + t * s1 + (1.0 - t) * s2) / scale;
            if (v > worst) {
                worst = v;
                loc = b;
            }
        }
    }
    return make_entry("pool_inequality", worst, loc, tol, pairs * tGrid);
}

inline DiagnosticsEntry pool_inequality(const ProblemSpec& p, const ParticleCloud& cloud, const PartitionState& s,
                                        Index pairs = 1000, Index tGrid = 11, std::uint64_t seed = 0,
                                        double tol = kDefaultCertificateTol) {
    return pool_inequality(p, cloud, s.labels, s.actions, pairs, tGrid, seed, tol);
}

// |sum_k P_k a_k - E g|
inline DiagnosticsEntry total_expectation(const ProblemSpec& p, const ParticleCloud& cloud, const PartitionState& s,
                                          double tol = 1e-8) {
    if (!p.is_moment()) throw PreconditionError("total expectation needs a moment receiver");
    const Vec Eg = eval_g_all(p.momentMap, cloud.points) * cloud.weights;
    Vec acc = Vec::Zero(p.actionDim);
    for (Index k = 0; k < s.K; ++k)
        if (s.active(k)) acc += s.masses[k] * s.actions[static_cast<std::size_t>(k)];
    return make_entry("total_expectation", (acc - Eg).norm(), acc, tol, s.active_count());
}

// Largest relative drop between consecutive recorded values.
inline DiagnosticsEntry value_monotonicity(const PartitionState& s, double tol = 1e-9) {
    double worst = 0.0;
    Index at = 0;
    for (std::size_t j = 1; j < s.valueHistory.size(); ++j) {
        const double prev = s.valueHistory[j - 1];
        const double drop = (prev - s.valueHistory[j]) / std::max(1.0, std::abs(prev));
        if (drop > worst) {
            worst = drop;
            at = static_cast<Index>(j);
        }
    }
    return make_entry("value_monotonicity", worst, Vec::Constant(1, static_cast<double>(at)), tol,
                      static_cast<Index>(s.valueHistory.size()));
}

struct NuCounts {
    Index plus = 0, zero = 0, minus = 0;
    bool operator==(const NuCounts&) const = default;
};

inline NuCounts nu_counts(const Mat& H, double zeroTol = 1e-9) {
    if (H.rows() != H.cols()) throw PreconditionError("nu counts need a square matrix");
    if ((H - H.transpose()).norm() > 1e-9 * std::max(1.0, H.norm())) throw PreconditionError("nu counts need a symmetric matrix");
    NuCounts c;
    const Vec ev = sym_eigen(H).eigenvalues();
    for (Index j = 0; j < ev.size(); ++j) {
        if (std::abs(ev[j]) < zeroTol) ++c.zero;
        else if (ev[j] > 0.0) ++c.plus;
        else ++c.minus;
    }
    return c;
}

inline constexpr double kDimensionRatio = 0.05;

// Affine dimension of the weighted g-points of each cell (0 for cells with <= M points).
inline std::vector<Index> pool_dims(const ProblemSpec& p, const ParticleCloud& cloud, const std::vector<int>& labels,
                                    Index K, double ratio = kDimensionRatio) {
    const Mat G = eval_g_all(p.momentMap, cloud.points);
    const auto mem = detail::members(labels, K);
    std::vector<Index> dims(static_cast<std::size_t>(K), 0);
    for (Index k = 0; k < K; ++k) {
        const auto& idx = mem[static_cast<std::size_t>(k)];
        if (static_cast<Index>(idx.size()) < p.actionDim + 1) continue;
        double mass = 0.0;
        Vec mean = Vec::Zero(G.rows());
        for (Index i : idx) {
            mass += cloud.weights[i];
            mean += cloud.weights[i] * G.col(i);
        }
        mean /= mass;
        Mat C(static_cast<Index>(idx.size()), G.rows());
        for (std::size_t r = 0; r < idx.size(); ++r)
            C.row(static_cast<Index>(r)) = std::sqrt(cloud.weights[idx[r]] / mass) * (G.col(idx[r]) - mean).transpose();
        const Vec sv = Eigen::JacobiSVD<Mat>(C).singularValues();
        if (!(sv[0] > 0.0)) continue;
        Index d = 0;
        for (Index j = 0; j < sv.size(); ++j) d += sv[j] / sv[0] >= ratio ? 1 : 0;
        dims[static_cast<std::size_t>(k)] = d;
    }
    return dims;
}

// dim conv g(pool) <= M - nu+(Hess W(a_k)) on every cell with >= M+1 particles.
inline DiagnosticsEntry pool_dimension(const ProblemSpec& p, const ParticleCloud& cloud, const std::vector<int>& labels,
                                       const std::vector<Vec>& actions, double ratio = kDimensionRatio) {
    if (!p.is_moment()) throw PreconditionError("pool dimension needs a moment receiver");
    const Index K = static_cast<Index>(actions.size());
    const auto dims = pool_dims(p, cloud, labels, K, ratio);
    const auto mem = detail::members(labels, K);
    double worst = -static_cast<double>(p.actionDim);
    Vec loc = Vec::Zero(p.actionDim);
    Index used = 0;
    for (Index k = 0; k < K; ++k) {
        if (static_cast<Index>(mem[static_cast<std::size_t>(k)].size()) < p.actionDim + 1) continue;
        ++used;
        const Mat H = eval_W(p.utility, actions[static_cast<std::size_t>(k)]).hess;
        const Index bound = p.actionDim - nu_counts(symmetrize(H), 1e-9 * std::max(1.0, H.norm())).plus;
        const double v = static_cast<double>(dims[static_cast<std::size_t>(k)] - bound);
        if (v > worst) {
            worst = v;
            loc = actions[static_cast<std::size_t>(k)];
        }
    }
    if (used == 0) worst = 0.0;
    return make_entry("pool_dimension", worst, loc, 0.0, used);
}

inline DiagnosticsEntry pool_dimension(const ProblemSpec& p, const ParticleCloud& cloud, const PartitionState& s,
                                       double ratio = kDimensionRatio) {
    return pool_dimension(p, cloud, s.labels, s.actions, ratio);
}

// b' D_aa W(a) b < 0 for |a| in {K, 2K, 4K} along grid directions and b in the eps-cone around a.
inline bool concave_along_rays(const UtilitySpec& u, double K, double eps, Index directions = 64, std::uint64_t seed = 0) {
    if (!(eps > 0.0 && eps < 1.0)) throw PreconditionError("cone width must lie in (0, 1)");
    if (!(K > 0.0)) throw PreconditionError("radius must be positive");
    const Index M = utility_dim(u);
    std::vector<Vec> dirs;
    Rng rng(seed, 41);
    if (M == 1) {
        dirs = {Vec::Constant(1, 1.0), Vec::Constant(1, -1.0)};
    } else if (M == 2) {
        for (Index j = 0; j < directions; ++j) {
            const double th = 2.0 * M_PI * static_cast<double>(j) / static_cast<double>(directions);
            Vec d(2);
            d << std::cos(th), std::sin(th);
            dirs.push_back(d);
        }
    } else {
        for (Index j = 0; j < directions; ++j) {
            Vec d(M);
            for (Index c = 0; c < M; ++c) d[c] = rng.normal();
            dirs.push_back(d.normalized());
        }
    }
    for (const Vec& d : dirs) {
        std::vector<Vec> cone{d};
        if (M == 2) {
            const double dmax = 2.0 * std::asin(eps / 2.0);
            for (int q = -4; q <= 4; ++q) {
                const double th = dmax * q / 4.0;
                Vec b(2);
                b << std::cos(th) * d[0] - std::sin(th) * d[1], std::sin(th) * d[0] + std::cos(th) * d[1];
                cone.push_back(b);
            }
        } else if (M > 2) {
            for (int e = 0; e < 8; ++e) {
                Vec o(M);
                for (Index c = 0; c < M; ++c) o[c] = rng.normal();
                o -= o.dot(d) * d;
                if (o.norm() == 0.0) continue;
                o.normalize();
                for (double s : {-1.0, -0.5, 0.5, 1.0}) cone.push_back((d + s * eps * o).normalized());
            }
        }
        for (double r : {K, 2.0 * K, 4.0 * K}) {
            const Mat H = eval_W(u, r * d).hess;
            for (const Vec& b : cone)
                if (!(b.dot(H * b) < 0.0)) return false;
        }
    }
    return true;
}

namespace detail {

// Central differences on a non-uniform grid, one-sided at the ends.
inline Vec grid_derivative(const Vec& x, const Vec& y) {
    const Index n = x.size();
    Vec d(n);
    if (n < 2) throw PreconditionError("derivative needs >= 2 nodes");
    for (Index i = 0; i < n; ++i) {
        const Index lo = std::max<Index>(0, i - 1), hi = std::min<Index>(n - 1, i + 1);
        d[i] = (y[hi] - y[lo]) / (x[hi] - x[lo]);
    }
    return d;
}

}  // namespace detail

struct SinglePoolCoeffs {
    Vec theta, kappa1, kappa2;
    DiagnosticsEntry monotone;
};

// kappa1 = -(f G')' / G', kappa2 = f - theta kappa1; f sqrt(G') must be nondecreasing.
inline SinglePoolCoeffs single_pool_coeffs(const Vec& theta, const Vec& f, const ScalarCurve& G, double tol = 1e-3) {
    if (theta.size() != f.size() || theta.size() < 2) throw PreconditionError("curve needs >= 2 matching nodes");
    for (Index i = 1; i < theta.size(); ++i)
        if (!(theta[i] > theta[i - 1])) throw PreconditionError("theta grid must be strictly increasing");
    const Index n = theta.size();
    Vec Gp(n), fG(n), h(n);
    for (Index i = 0; i < n; ++i) {
        Gp[i] = G.eval(theta[i]).d1;
        if (!(Gp[i] > 0.0)) throw PreconditionError("acceptance curve must be increasing");
        fG[i] = f[i] * Gp[i];
        h[i] = f[i] * std::sqrt(Gp[i]);
    }
    SinglePoolCoeffs out;
    out.theta = theta;
    out.kappa1 = -detail::grid_derivative(theta, fG).cwiseQuotient(Gp);
    out.kappa2 = f - theta.cwiseProduct(out.kappa1);
    double worst = 0.0;
    Index at = 0;
    for (Index i = 0; i + 1 < n; ++i)
        if (h[i] - h[i + 1] > worst) {
            worst = h[i] - h[i + 1];
            at = i;
        }
    out.monotone = make_entry("single_monotone", worst, Vec::Constant(1, theta[at]), tol, n);
    return out;
}

struct MultiProductCoeffs {
    std::vector<Mat> kappa1;
    DiagnosticsEntry nsd;
};

// Uniform G: kappa1 = -(D_a f)'; negative semi-definite up to tol.
inline MultiProductCoeffs multi_product_coeffs(const std::vector<Mat>& jacF, double tol = kDefaultCertificateTol) {
    MultiProductCoeffs out;
    double worst = -std::numeric_limits<double>::infinity();
    Index at = 0;
    for (std::size_t j = 0; j < jacF.size(); ++j) {
        out.kappa1.push_back(-jacF[j].transpose());
        const double top = sym_eigen(symmetrize(out.kappa1.back())).eigenvalues().maxCoeff();
        if (top > worst) {
            worst = top;
            at = static_cast<Index>(j);
        }
    }
    if (jacF.empty()) worst = 0.0;
    out.nsd = make_entry("multi_product_nsd", worst, Vec::Constant(1, static_cast<double>(at)), tol,
                         static_cast<Index>(jacF.size()));
    return out;
}

struct MultiTypeCoeffs {
    Vec slope;  // sum_i kappa_i G_i' per node
    DiagnosticsEntry downward;
};

// sum_i kappa1_i G_i' >= -tol at every node.
inline MultiTypeCoeffs multi_type_coeffs(const std::vector<Vec>& kappa1, const std::vector<Vec>& Gprime,
                                         double tol = kDefaultCertificateTol) {
    if (kappa1.empty() || kappa1.size() != Gprime.size()) throw PreconditionError("need matching kappa and G' per type");
    const Index n = kappa1[0].size();
    MultiTypeCoeffs out;
    out.slope = Vec::Zero(n);
    for (std::size_t t = 0; t < kappa1.size(); ++t) {
        if (kappa1[t].size() != n || Gprime[t].size() != n) throw PreconditionError("type arrays differ in length");
        out.slope += kappa1[t].cwiseProduct(Gprime[t]);
    }
    Index at = 0;
    const double worst = n ? (-out.slope).maxCoeff(&at) : 0.0;
    out.downward = make_entry("multi_type_slope", worst, Vec::Constant(1, static_cast<double>(at)), tol, n);
    return out;
}

}  // namespace persuasion
