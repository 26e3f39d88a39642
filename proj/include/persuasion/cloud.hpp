#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "errors.hpp"
#include "linalg.hpp"
#include "rng.hpp"

namespace persuasion {

struct GaussianPrior {
    Vec mean;
    Mat covariance;
};

struct UniformBoxPrior {
    Vec lo, hi;
};

struct MixturePrior {
    std::vector<double> weights;
    std::vector<GaussianPrior> components;
};

// Finite support given directly; columns are states.
struct TabulatedPrior {
    Mat points;
    Vec weights;
};

using PriorSpec = std::variant<GaussianPrior, UniformBoxPrior, MixturePrior, TabulatedPrior>;

enum class CloudMode { Sample, Grid };
enum class SourceKind { Sampled, DeterministicGrid };

inline constexpr double kGaussianTruncation = 6.0;

struct ParticleCloud {
    Mat points;  // L x n, column per particle
    Vec weights;
    std::uint64_t seed = 0;
    SourceKind sourceKind = SourceKind::Sampled;

    Index dim() const { return points.rows(); }
    Index size() const { return points.cols(); }
    Vec point(Index i) const { return points.col(i); }

    Vec mean() const { return points * weights; }
    Mat covariance() const {
        Mat c = points.colwise() - mean();
        return c * weights.asDiagonal() * c.transpose();
    }
};

// Wrap explicit points; weights are normalized to sum 1.
inline ParticleCloud make_cloud(Mat points, Vec weights, std::uint64_t seed = 0,
                                SourceKind kind = SourceKind::DeterministicGrid) {
    if (points.cols() == 0) throw ConfigurationError("cloud must contain at least one particle");
    if (weights.size() != points.cols()) throw ConfigurationError("cloud weights and points disagree in count");
    for (Index i = 0; i < weights.size(); ++i)
        if (!(weights[i] > 0.0) || !std::isfinite(weights[i])) throw ConfigurationError("cloud weights must be positive");
    if (!points.allFinite()) throw ConfigurationError("cloud points must be finite");
    ParticleCloud c;
    c.points = std::move(points);
    c.weights = weights / weights.sum();
    c.seed = seed;
    c.sourceKind = kind;
    return c;
}

inline ParticleCloud make_cloud(Mat points) {
    Vec w = Vec::Constant(points.cols(), 1.0);
    return make_cloud(std::move(points), std::move(w));
}

inline void check_spd(const Mat& cov, const char* what) {
    if (cov.rows() != cov.cols() || cov.rows() == 0) throw ConfigurationError(std::string(what) + " must be square");
    if (!cov.allFinite()) throw ConfigurationError(std::string(what) + " has non-finite entries");
    if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, cov.cwiseAbs().maxCoeff()))
        throw ConfigurationError(std::string(what) + " is not symmetric");
    Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(cov));
    if (es.info() != Eigen::Success || !(es.eigenvalues().minCoeff() > 0.0))
        throw ConfigurationError(std::string(what) + " is not positive definite");
}

inline Index prior_dim(const PriorSpec& prior) {
    struct V {
        Index operator()(const GaussianPrior& g) const { return g.mean.size(); }
        Index operator()(const UniformBoxPrior& u) const { return u.lo.size(); }
        Index operator()(const MixturePrior& m) const {
            return m.components.empty() ? 0 : m.components.front().mean.size();
        }
        Index operator()(const TabulatedPrior& t) const { return t.points.rows(); }
    };
    return std::visit(V{}, prior);
}

inline void validate_prior(const PriorSpec& prior) {
    struct V {
        void operator()(const GaussianPrior& g) const {
            if (g.mean.size() == 0) throw ConfigurationError("gaussian prior needs a mean");
            if (g.covariance.rows() != g.mean.size()) throw ConfigurationError("gaussian covariance dimension mismatch");
            if (!g.mean.allFinite()) throw ConfigurationError("gaussian mean must be finite");
            check_spd(g.covariance, "gaussian covariance");
        }
        void operator()(const UniformBoxPrior& u) const {
            if (u.lo.size() == 0 || u.lo.size() != u.hi.size()) throw ConfigurationError("uniform box bounds mismatch");
            for (Index i = 0; i < u.lo.size(); ++i)
                if (!(u.hi[i] > u.lo[i]) || !std::isfinite(u.lo[i]) || !std::isfinite(u.hi[i]))
                    throw ConfigurationError("uniform box needs finite lo < hi");
        }
        void operator()(const MixturePrior& m) const {
            if (m.components.empty() || m.components.size() != m.weights.size())
                throw ConfigurationError("mixture needs one weight per component");
            for (std::size_t k = 0; k < m.components.size(); ++k) {
                if (!(m.weights[k] > 0.0)) throw ConfigurationError("mixture weights must be positive");
                (*this)(m.components[k]);
                if (m.components[k].mean.size() != m.components.front().mean.size())
                    throw ConfigurationError("mixture components differ in dimension");
            }
        }
        void operator()(const TabulatedPrior& t) const {
            if (t.points.cols() == 0 || t.points.rows() == 0) throw ConfigurationError("tabulated prior is empty");
            if (t.weights.size() != t.points.cols()) throw ConfigurationError("tabulated prior weight count mismatch");
            for (Index i = 0; i < t.weights.size(); ++i)
                if (!(t.weights[i] > 0.0)) throw ConfigurationError("tabulated prior weights must be positive");
        }
    };
    std::visit(V{}, prior);
}

namespace detail {

// m points per axis with m^L <= n
inline Index grid_per_axis(Index n, Index L) {
    auto m = static_cast<Index>(std::floor(std::pow(static_cast<double>(n), 1.0 / static_cast<double>(L))));
    auto fits = [&](Index k) {
        double p = 1.0;
        for (Index d = 0; d < L; ++d) p *= static_cast<double>(k);
        return p <= static_cast<double>(n);
    };
    while (m > 1 && !fits(m)) --m;
    while (fits(m + 1)) ++m;
    return std::max<Index>(m, 1);
}

// Midpoint grid on a box, columns in lexicographic order (last axis fastest).
inline Mat midpoint_grid(const Vec& lo, const Vec& hi, Index m) {
    const Index L = lo.size();
    Index total = 1;
    for (Index d = 0; d < L; ++d) total *= m;
    Mat pts(L, total);
    std::vector<Index> idx(L, 0);
    for (Index c = 0; c < total; ++c) {
        for (Index d = 0; d < L; ++d)
            pts(d, c) = lo[d] + (hi[d] - lo[d]) * (static_cast<double>(idx[d]) + 0.5) / static_cast<double>(m);
        for (Index d = L; d-- > 0;) {
            if (++idx[d] < m) break;
            idx[d] = 0;
        }
    }
    return pts;
}

inline double gaussian_logdensity_unnorm(const Vec& x, const Vec& mean, const Eigen::LLT<Mat>& llt) {
    Vec z = llt.matrixL().solve(x - mean);
    return -0.5 * z.squaredNorm() - std::log(llt.matrixL().toDenseMatrix().diagonal().prod());
}

inline Vec sample_gaussian(Rng& rng, const Vec& mean, const Mat& chol) {
    Vec z(mean.size());
    for (Index d = 0; d < z.size(); ++d) z[d] = rng.normal();
    return mean + chol * z;
}

}  // namespace detail

inline ParticleCloud build_cloud(const PriorSpec& prior, Index n, std::uint64_t seed, CloudMode mode) {
    if (n < 1) throw ConfigurationError("particle count must be >= 1");
    validate_prior(prior);
    const Index L = prior_dim(prior);
    const SourceKind kind = mode == CloudMode::Grid ? SourceKind::DeterministicGrid : SourceKind::Sampled;

    if (const auto* g = std::get_if<GaussianPrior>(&prior)) {
        Eigen::LLT<Mat> llt(symmetrize(g->covariance));
        const Mat chol = llt.matrixL();
        if (mode == CloudMode::Sample) {
            Rng rng(seed);
            Mat pts(L, n);
            for (Index i = 0; i < n; ++i) pts.col(i) = detail::sample_gaussian(rng, g->mean, chol);
            return make_cloud(std::move(pts), Vec::Constant(n, 1.0), seed, kind);
        }
        const Index m = detail::grid_per_axis(n, L);
        Mat z = detail::midpoint_grid(Vec::Constant(L, -kGaussianTruncation), Vec::Constant(L, kGaussianTruncation), m);
        Vec w(z.cols());
        for (Index i = 0; i < z.cols(); ++i) w[i] = std::exp(-0.5 * z.col(i).squaredNorm());
        Mat pts = (chol * z).colwise() + g->mean;
        return make_cloud(std::move(pts), std::move(w), seed, kind);
    }
    if (const auto* u = std::get_if<UniformBoxPrior>(&prior)) {
        if (mode == CloudMode::Sample) {
            Rng rng(seed);
            Mat pts(L, n);
            for (Index i = 0; i < n; ++i)
                for (Index d = 0; d < L; ++d) pts(d, i) = u->lo[d] + (u->hi[d] - u->lo[d]) * rng.uniform();
            return make_cloud(std::move(pts), Vec::Constant(n, 1.0), seed, kind);
        }
        const Index m = detail::grid_per_axis(n, L);
        Mat pts = detail::midpoint_grid(u->lo, u->hi, m);
        Vec w = Vec::Constant(pts.cols(), 1.0);
        return make_cloud(std::move(pts), std::move(w), seed, kind);
    }
    if (const auto* mix = std::get_if<MixturePrior>(&prior)) {
        const std::size_t C = mix->components.size();
        std::vector<Mat> chols;
        std::vector<Eigen::LLT<Mat>> llts;
        for (const auto& comp : mix->components) {
            llts.emplace_back(symmetrize(comp.covariance));
            chols.push_back(llts.back().matrixL());
        }
        double wsum = 0.0;
        for (double w : mix->weights) wsum += w;
        if (mode == CloudMode::Sample) {
            Rng rng(seed);
            Mat pts(L, n);
            for (Index i = 0; i < n; ++i) {
                double u = rng.uniform() * wsum;
                std::size_t k = 0;
                while (k + 1 < C && u > mix->weights[k]) u -= mix->weights[k++];
                pts.col(i) = detail::sample_gaussian(rng, mix->components[k].mean, chols[k]);
            }
            return make_cloud(std::move(pts), Vec::Constant(n, 1.0), seed, kind);
        }
        Vec lo = Vec::Constant(L, std::numeric_limits<double>::infinity());
        Vec hi = -lo;
        for (const auto& comp : mix->components) {
            Vec sd = comp.covariance.diagonal().cwiseSqrt();
            lo = lo.cwiseMin(comp.mean - kGaussianTruncation * sd);
            hi = hi.cwiseMax(comp.mean + kGaussianTruncation * sd);
        }
        const Index m = detail::grid_per_axis(n, L);
        Mat pts = detail::midpoint_grid(lo, hi, m);
        Vec w = Vec::Zero(pts.cols());
        for (std::size_t k = 0; k < C; ++k)
            for (Index i = 0; i < pts.cols(); ++i)
                w[i] += mix->weights[k] / wsum *
                        std::exp(detail::gaussian_logdensity_unnorm(pts.col(i), mix->components[k].mean, llts[k]));
        // drop cells with zero density so every weight stays positive
        std::vector<Index> keep;
        for (Index i = 0; i < w.size(); ++i)
            if (w[i] > 0.0) keep.push_back(i);
        Mat kp(L, static_cast<Index>(keep.size()));
        Vec kw(static_cast<Index>(keep.size()));
        for (std::size_t j = 0; j < keep.size(); ++j) {
            kp.col(static_cast<Index>(j)) = pts.col(keep[j]);
            kw[static_cast<Index>(j)] = w[keep[j]];
        }
        return make_cloud(std::move(kp), std::move(kw), seed, kind);
    }
    const auto& tab = std::get<TabulatedPrior>(prior);
    if (mode == CloudMode::Grid) return make_cloud(tab.points, tab.weights, seed, kind);
    Rng rng(seed);
    const Vec cdf = [&] {
        Vec c(tab.weights.size());
        double s = 0.0;
        for (Index i = 0; i < c.size(); ++i) c[i] = (s += tab.weights[i]);
        return c;
    }();
    Mat pts(L, n);
    for (Index i = 0; i < n; ++i) {
        const double u = rng.uniform() * cdf[cdf.size() - 1];
        Index k = static_cast<Index>(std::lower_bound(cdf.data(), cdf.data() + cdf.size(), u) - cdf.data());
        if (k >= cdf.size()) k = cdf.size() - 1;
        pts.col(i) = tab.points.col(k);
    }
    return make_cloud(std::move(pts), Vec::Constant(n, 1.0), seed, kind);
}

// Number of distinct particle locations (exact comparison).
inline Index distinct_count(const Mat& pts) {
    std::vector<Index> order(static_cast<std::size_t>(pts.cols()));
    for (Index i = 0; i < pts.cols(); ++i) order[static_cast<std::size_t>(i)] = i;
    auto less = [&](Index a, Index b) {
        for (Index d = 0; d < pts.rows(); ++d) {
            if (pts(d, a) < pts(d, b)) return true;
            if (pts(d, a) > pts(d, b)) return false;
        }
        return false;
    };
    std::sort(order.begin(), order.end(), less);
    Index count = order.empty() ? 0 : 1;
    for (std::size_t i = 1; i < order.size(); ++i)
        if (less(order[i - 1], order[i])) ++count;
    return count;
}

}  // namespace persuasion
