#pragma once

#include <functional>
#include <string>
#include <variant>

#include "cloud.hpp"
#include "errors.hpp"
#include "linalg.hpp"
#include "moment_map.hpp"
#include "rng.hpp"
#include "utility.hpp"

namespace persuasion {

// G(a, w) = a - g(w)
struct MomentReceiver {};

struct GeneralReceiver {
    std::function<Vec(const Vec& a, const Vec& w)> G;
    std::function<Mat(const Vec& a, const Vec& w)> jacA;  // optional, FD otherwise
    std::function<Mat(const Vec& a, const Vec& w)> jacW;  // optional, FD otherwise
    double epsilon = 0.0;                                  // declared monotonicity modulus
    std::string name = "general";
};

using ReceiverSpec = std::variant<MomentReceiver, GeneralReceiver>;

// G(a, w) = B w + offset - kappa a^3 - lambda a (componentwise powers)
inline GeneralReceiver cubic_receiver(Mat B, Vec offset, double kappa, double lambda, double epsilon) {
    if (offset.size() == 0) offset = Vec::Zero(B.rows());
    if (kappa < 0.0 || lambda <= 0.0) throw ConfigurationError("cubic receiver needs kappa >= 0 and lambda > 0");
    GeneralReceiver r;
    r.G = [B, offset, kappa, lambda](const Vec& a, const Vec& w) -> Vec {
        return B * w + offset - kappa * a.array().cube().matrix() - lambda * a;
    };
    r.jacA = [kappa, lambda](const Vec& a, const Vec&) -> Mat {
        return (-(3.0 * kappa * a.array().square() + lambda)).matrix().asDiagonal();
    };
    r.jacW = [B](const Vec&, const Vec&) -> Mat { return B; };
    r.epsilon = epsilon;
    r.name = "cubic";
    return r;
}

struct ProblemSpec {
    Index stateDim = 1;
    Index actionDim = 1;
    PriorSpec prior = GaussianPrior{Vec::Zero(1), Mat::Identity(1, 1)};
    MomentMapSpec momentMap = IdentityMap{};
    UtilitySpec utility = QuadraticUtility{Mat::Identity(1, 1), Vec::Zero(1)};
    ReceiverSpec receiver = MomentReceiver{};

    bool is_moment() const { return std::holds_alternative<MomentReceiver>(receiver); }
    const GeneralReceiver& general() const { return std::get<GeneralReceiver>(receiver); }
};

inline void validate_problem(const ProblemSpec& p) {
    if (p.stateDim < 1 || p.actionDim < 1) throw ConfigurationError("stateDim and actionDim must be >= 1");
    validate_prior(p.prior);
    if (prior_dim(p.prior) != p.stateDim) throw ConfigurationError("prior dimension does not match stateDim");
    validate_utility(p.utility, p.actionDim);
    if (p.is_moment()) {
        validate_map(p.momentMap, p.stateDim);
        if (map_out_dim(p.momentMap, p.stateDim) != p.actionDim)
            throw ConfigurationError("moment map output dimension must equal actionDim");
    } else {
        const auto& g = p.general();
        if (!g.G) throw ConfigurationError("general receiver has no evaluator");
        if (!(g.epsilon > 0.0)) throw ConfigurationError("general receiver needs a positive monotonicity modulus");
    }
}

inline Vec eval_G(const ProblemSpec& p, const Vec& a, const Vec& w) {
    if (p.is_moment()) return a - eval_g(p.momentMap, w);
    Vec out = p.general().G(a, w);
    if (!out.allFinite()) throw NumericDomainError("receiver condition produced a non-finite value");
    return out;
}

inline Mat jac_a_G(const ProblemSpec& p, const Vec& a, const Vec& w) {
    if (p.is_moment()) return Mat::Identity(a.size(), a.size());
    const auto& g = p.general();
    if (g.jacA) return g.jacA(a, w);
    return fd_jacobian([&](const Vec& x) { return g.G(x, w); }, a);
}

inline Mat jac_w_G(const ProblemSpec& p, const Vec& a, const Vec& w) {
    if (p.is_moment()) return -jac_g(p.momentMap, w);
    const auto& g = p.general();
    if (g.jacW) return g.jacW(a, w);
    return fd_jacobian([&](const Vec& x) { return g.G(a, x); }, w);
}

struct FullInfoOptions {
    double tol = 1e-12;
    int maxIter = 200;
};

// Newton with backtracking on |G|; uniform monotonicity keeps D_aG invertible.
inline Vec full_info_action(const ProblemSpec& p, const Vec& w, const Vec* start = nullptr,
                            FullInfoOptions opt = {}) {
    if (p.is_moment()) return eval_g(p.momentMap, w);
    Vec a = start ? *start : Vec::Zero(p.actionDim);
    Vec G = eval_G(p, a, w);
    double r = G.norm();
    for (int it = 0; it < opt.maxIter && r > opt.tol; ++it) {
        const Mat J = jac_a_G(p, a, w);
        const Vec step = J.fullPivLu().solve(-G);
        double t = 1.0;
        bool moved = false;
        for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
            Vec cand = a + t * step;
            Vec Gc = eval_G(p, cand, w);
            const double rc = Gc.norm();
            if (rc < r) {
                a = std::move(cand);
                G = std::move(Gc);
                r = rc;
                moved = true;
                break;
            }
        }
        if (!moved) break;
    }
    if (!(r <= 1e-10)) throw SolverError("full-information action did not converge", r);
    return a;
}

// Full-information actions for every particle, M x n.
inline Mat full_info_actions(const ProblemSpec& p, const ParticleCloud& cloud) {
    if (p.is_moment()) return eval_g_all(p.momentMap, cloud.points);
    Mat out(p.actionDim, cloud.size());
    Vec prev;
    for (Index i = 0; i < cloud.size(); ++i) {
        out.col(i) = full_info_action(p, cloud.point(i), i > 0 ? &prev : nullptr);
        prev = out.col(i);
    }
    return out;
}

// Spot check of -z'D_aG z >= eps |z|^2 on random triples; returns the worst
// ratio -z'D_aG z / |z|^2 found.
inline double monotonicity_spot_check(const ProblemSpec& p, const ParticleCloud& cloud, std::uint64_t seed,
                                      int samples = 200) {
    if (p.is_moment()) return 1.0;
    Rng rng(seed, 0xacu);
    double worst = std::numeric_limits<double>::infinity();
    const Mat astar = full_info_actions(p, cloud);
    for (int s = 0; s < samples; ++s) {
        const Index i = static_cast<Index>(rng.index(static_cast<std::size_t>(cloud.size())));
        const Index j = static_cast<Index>(rng.index(static_cast<std::size_t>(cloud.size())));
        Vec a = astar.col(j);
        for (Index d = 0; d < a.size(); ++d) a[d] += 0.5 * rng.normal();
        Vec z(p.actionDim);
        for (Index d = 0; d < z.size(); ++d) z[d] = rng.normal();
        const double q = -z.dot(jac_a_G(p, a, cloud.point(i)) * z) / z.squaredNorm();
        worst = std::min(worst, q);
    }
    return worst;
}

inline void check_declared_modulus(const ProblemSpec& p, const ParticleCloud& cloud, std::uint64_t seed) {
    if (p.is_moment()) return;
    const double worst = monotonicity_spot_check(p, cloud, seed);
    if (worst < p.general().epsilon * (1.0 - 1e-9))
        throw ConfigurationError("declared monotonicity modulus " + std::to_string(p.general().epsilon) +
                                 " exceeds observed " + std::to_string(worst));
}

}  // namespace persuasion
