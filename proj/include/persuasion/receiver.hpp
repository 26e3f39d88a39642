#pragma once

#include <vector>

#include "cloud.hpp"
#include "errors.hpp"
#include "linalg.hpp"
#include "problem.hpp"

namespace persuasion {

struct ActionSolveResult {
    Vec action;
    double residualNorm = 0.0;
    int iterations = 0;
    double damping = 0.0;
    bool converged = false;
};

struct ActionOptions {
    int maxIter = 10000;
    double dampingFloor = 1e-6;
    const Vec* start = nullptr;  // overrides the default warm start
};

// Constant in |a|^2 <= kappa E|a_*|^2 implied by a modulus eps.
inline double existence_kappa(double eps) {
    const double s = 1.0 + 1.0 / (eps * eps);
    return s * s;
}

// Posterior given by a subset of particles. astar holds precomputed
// full-information actions (g-values in the moment case), may be null.
inline ActionSolveResult solve_action_subset(const ProblemSpec& p, const Mat& pts, const Vec& weights,
                                             const std::vector<Index>& idx, const Mat* astar, double tol,
                                             const ActionOptions& opt = {}) {
    if (idx.empty()) throw PreconditionError("posterior must be nonempty");
    if (!(tol > 0.0)) throw PreconditionError("tolerance must be positive");
    double mass = 0.0;
    for (Index i : idx) mass += weights[i];

    Vec mean = Vec::Zero(p.actionDim);
    for (Index i : idx) {
        if (astar)
            mean += weights[i] * astar->col(i);
        else
            mean += weights[i] * full_info_action(p, pts.col(i));
    }
    mean /= mass;

    ActionSolveResult res;
    if (p.is_moment()) {
        res.action = std::move(mean);
        res.converged = true;
        res.iterations = 1;
        res.damping = 1.0;
        return res;
    }

    const auto& gr = p.general();
    auto expectedG = [&](const Vec& a) {
        Vec s = Vec::Zero(p.actionDim);
        for (Index i : idx) s += weights[i] * eval_G(p, a, pts.col(i));
        return Vec(s / mass);
    };

    Vec a = opt.start ? *opt.start : mean;
    Vec EG = expectedG(a);
    double r = EG.norm();
    double delta = gr.epsilon;
    int it = 0;
    while (r > tol && it < opt.maxIter) {
        ++it;
        Vec cand = a + delta * EG;
        Vec EGc = expectedG(cand);
        const double rc = EGc.norm();
        if (rc < r || delta <= opt.dampingFloor) {
            a = std::move(cand);
            EG = std::move(EGc);
            r = rc;
        } else {
            delta = std::max(0.5 * delta, opt.dampingFloor);
        }
    }
    res.action = a;
    res.residualNorm = r;
    res.iterations = it;
    res.damping = delta;
    res.converged = r <= tol;
    if (!res.converged) throw SolverError("receiver action iteration cap exceeded", r);
    return res;
}

inline ActionSolveResult solve_action(const ProblemSpec& p, const ParticleCloud& posterior, double tol,
                                      const ActionOptions& opt = {}) {
    std::vector<Index> idx(static_cast<std::size_t>(posterior.size()));
    for (Index i = 0; i < posterior.size(); ++i) idx[static_cast<std::size_t>(i)] = i;
    return solve_action_subset(p, posterior.points, posterior.weights, idx, nullptr, tol, opt);
}

}  // namespace persuasion
