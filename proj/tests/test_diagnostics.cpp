#include <gtest/gtest.h>

#include <cmath>

#include <persuasion/diagnostics.hpp>
#include <persuasion/manifold.hpp>

using namespace persuasion;

namespace {

Mat m2(double a, double b, double c, double d) {
    Mat M(2, 2);
    M << a, b, c, d;
    return M;
}

ProblemSpec product_problem() {
    ProblemSpec p;
    p.stateDim = p.actionDim = 2;
    p.prior = GaussianPrior{Vec::Zero(2), Mat::Identity(2, 2)};
    p.utility = make_quadratic(m2(0, 0.5, 0.5, 0));
    return p;
}

Mat per_particle(const PartitionState& s, Index M) {
    Mat A(M, static_cast<Index>(s.labels.size()));
    for (std::size_t i = 0; i < s.labels.size(); ++i) A.col(static_cast<Index>(i)) = s.actions[static_cast<std::size_t>(s.labels[i])];
    return A;
}

ScalarCurve quarter_power() {
    return ScalarCurve::custom([](double x) {
        const double y = x + 1e-12;
        return CurveValue{std::pow(y, 0.25), 0.25 * std::pow(y, -0.75), -0.1875 * std::pow(y, -1.75)};
    });
}

}  // namespace

TEST(Entry, PassMatchesTolerance) {
    EXPECT_TRUE(make_entry("x", 1e-9, Vec(), 1e-8, 1).pass);
    EXPECT_FALSE(make_entry("x", 2e-8, Vec(), 1e-8, 1).pass);
    DiagnosticsReport r;
    r.add(make_entry("a", 0, Vec(), 0, 1));
    EXPECT_TRUE(r.all_pass());
    r.add(make_entry("b", 1, Vec(), 0, 1));
    EXPECT_FALSE(r.all_pass());
}

TEST(Maximality, HyperplaneProductPasses) {
    auto c = build_cloud(GaussianPrior{Vec::Zero(2), Mat::Identity(2, 2)}, 10000, 1, CloudMode::Grid);
    auto hp = hyperplane_policy(m2(0, 0.5, 0.5, 0), Mat::Identity(2, 2));
    auto e = verify_maximality(make_quadratic(m2(0, 0.5, 0.5, 0)), hp.manifold, hull_test_set(c.points, 2000, 3), 1e-8);
    EXPECT_TRUE(e.pass) << e.worstViolation;
}

TEST(Maximality, SingletonOnConvexFails) {
    auto c = build_cloud(GaussianPrior{Vec::Zero(2), Mat::Identity(2, 2)}, 2000, 1, CloudMode::Sample);
    auto e = verify_maximality(make_quadratic(Mat::Identity(2, 2)), PointCloudManifold{Mat::Zero(2, 1)}, hull_test_set(c.points, 500), 1e-8);
    EXPECT_FALSE(e.pass);
    EXPECT_GT(e.worstViolation, 0.0);
}

TEST(Maximality, SphereWithConditionPasses) {
    auto c = build_cloud(GaussianPrior{Vec::Zero(2), Mat::Identity(2, 2)}, 4000, 2, CloudMode::Grid);
    auto u = make_radial(Mat::Identity(2, 2), quarter_power());
    auto s = sphere_policy(c, u, IdentityMap{});
    ASSERT_TRUE(s.conditionHolds);
    auto e = verify_maximality(u, s.manifold, hull_test_set(c.points, 1000, 4), 1e-8);
    EXPECT_TRUE(e.pass) << e.worstViolation;
}

TEST(Maximality, MonotoneInManifold) {
    auto c = build_cloud(GaussianPrior{Vec::Zero(2), Mat::Identity(2, 2)}, 500, 5, CloudMode::Sample);
    auto u = make_quadratic(m2(1, 0.3, 0.3, -0.5));
    const Mat T = hull_test_set(c.points, 200, 6);
    Mat pts(2, 1);
    pts << 0, 0;
    double prev = verify_maximality(u, PointCloudManifold{pts}, T).worstViolation;
    Rng rng(8);
    for (int k = 0; k < 10; ++k) {
        pts.conservativeResize(2, pts.cols() + 1);
        pts.col(pts.cols() - 1) << 2 * rng.normal(), 2 * rng.normal();
        const double w = verify_maximality(u, PointCloudManifold{pts}, T).worstViolation;
        EXPECT_LE(w, prev);
        prev = w;
    }
}

TEST(Monotonicity, Examples) {
    auto u = make_quadratic(m2(0, 0.5, 0.5, 0));
    EXPECT_TRUE(verify_monotonicity(u, m2(0.2, 1.5, 0.2, 1.5)).pass);
    auto bad = verify_monotonicity(u, m2(1, 0, 0, 1));
    EXPECT_FALSE(bad.pass);
    EXPECT_NEAR(bad.worstViolation, 1.0, 1e-12);
    EXPECT_TRUE(verify_monotonicity(u, Mat::Constant(2, 1, 0.3)).pass);
}

TEST(CeResidual, ConvergedPartitionIsExact) {
    auto p = product_problem();
    auto c = build_cloud(p.prior, 3000, 2, CloudMode::Sample);
    auto s = optimize_partition(p, c, 6, 3);
    auto e = ce_residual(p, c, per_particle(s, 2), 64, 1e-8);
    EXPECT_TRUE(e.pass) << e.worstViolation;
}

TEST(CeResidual, HyperplaneGaussian) {
    auto p = product_problem();
    auto c = build_cloud(p.prior, 100000, 1, CloudMode::Grid);
    auto hp = hyperplane_policy(m2(0, 0.5, 0.5, 0), Mat::Identity(2, 2));
    auto e = ce_residual(p, c, apply_policy(p, hp.manifold, c), 64, 0.02);
    EXPECT_TRUE(e.pass) << e.worstViolation;
    EXPECT_EQ(e.samplesUsed, 64);
}

TEST(CeResidual, ConstantPolicy) {
    auto p = product_problem();
    auto c = build_cloud(p.prior, 1000, 3, CloudMode::Sample);
    Vec a0(2);
    a0 << 0.4, -0.2;
    Mat A = a0.replicate(1, c.size());
    auto e = ce_residual(p, c, A, 16);
    EXPECT_EQ(e.samplesUsed, 1);
    EXPECT_NEAR(e.worstViolation, (c.mean() - a0).norm(), 1e-12);
}

TEST(CeResidual, AngularBuckets) {
    Mat A(2, 4);
    A << 1, 0, -1, 0, 0, 1, 0, -1;
    // axes fall mid-sector, one per bucket
    auto l = angular_labels(A, 4);
    EXPECT_EQ(l[0], 2);
    EXPECT_EQ(l[1], 3);
    EXPECT_EQ(l[2], 0);
    EXPECT_EQ(l[3], 1);
    Mat B(2, 2);
    B << 1, 1, 1e-3, -1e-3;
    auto m = angular_labels(B, 4);
    EXPECT_EQ(m[0], m[1]);
}

TEST(TransportOptimality, BestSignalAtLloydFixedPoint) {
    ProblemSpec p = product_problem();
    p.utility = make_quadratic(Mat::Identity(2, 2));
    auto c = build_cloud(p.prior, 2000, 4, CloudMode::Sample);
    auto s = optimize_partition(p, c, 4, 4, 0.0, 500);
    ASSERT_TRUE(s.converged);
    auto t = transport_entries(p, c, s, 1e-7);
    EXPECT_TRUE(t.bestSignal.pass) << t.bestSignal.worstViolation;
    // convex W: revealing a particle alone beats pooling it, so c > 0 inside finite cells
    EXPECT_FALSE(t.negativeCost.pass);
    EXPECT_FALSE(t.combined.pass);

    PartitionState bad = s;
    const Index i = 17;
    int worst = bad.labels[static_cast<std::size_t>(i)];
    double lo = std::numeric_limits<double>::infinity();
    for (Index k = 0; k < s.K; ++k) {
        const Vec& a = s.actions[static_cast<std::size_t>(k)];
        const double sc = W_value(p.utility, a) + W_grad(p.utility, a).dot(c.point(i) - a);
        if (sc < lo) {
            lo = sc;
            worst = static_cast<int>(k);
        }
    }
    ASSERT_NE(worst, s.labels[static_cast<std::size_t>(i)]);
    bad.labels[static_cast<std::size_t>(i)] = worst;
    auto f = transport_entries(p, c, bad, 1e-7);
    EXPECT_FALSE(f.bestSignal.pass);
    EXPECT_TRUE(f.bestSignal.worstLocation == c.point(i));
}

TEST(TransportOptimality, ConcaveSinglePoolPasses) {
    ProblemSpec p = product_problem();
    p.utility = make_quadratic(m2(-1, 0.2, 0.2, -0.5));
    auto c = build_cloud(p.prior, 2000, 4, CloudMode::Sample);
    auto s = optimize_partition(p, c, 3, 3);
    ASSERT_EQ(s.active_count(), 1);
    EXPECT_TRUE(verify_transport_optimality(p, c, s, 1e-7).pass);
    EXPECT_TRUE(pool_inequality(p, c, s, 1000, 11, 1, 1e-6).pass);
}

TEST(TransportOptimality, FullRevelationPolicy) {
    ProblemSpec p = product_problem();
    p.utility = make_quadratic(Mat::Identity(2, 2));
    auto c = build_cloud(p.prior, 300, 4, CloudMode::Sample);
    auto e = verify_transport_optimality(p, c, Mat(c.points), 1e-12);
    EXPECT_TRUE(e.pass) << e.worstViolation;
}

TEST(PoolInequality, EndpointsAndNegativeControl) {
    auto p = product_problem();
    auto c = build_cloud(p.prior, 4000, 6, CloudMode::Sample);
    auto s = optimize_partition(p, c, 8, 4, 0.0, 500);
    // t in {0, 1} reproduces the own-signal transport cost
    const auto t = transport_entries(p, c, s, 1e-6);
    const auto q = pool_inequality(p, c, s, 4000, 2, 1, 1e-6);
    EXPECT_LE(q.worstViolation, std::max(t.negativeCost.worstViolation, 0.0) + 1e-12);

    Rng rng(3);
    std::vector<int> lab(static_cast<std::size_t>(c.size()));
    for (auto& l : lab) l = static_cast<int>(rng.bits() % 8);
    PartitionContext ctx(p, c);
    auto r = consistent_state(ctx, lab, 8);
    EXPECT_FALSE(pool_inequality(p, c, r, 1000, 11, 1, 1e-6).pass);
}

TEST(TotalExpectation, PartitionAndMonotonicity) {
    auto p = product_problem();
    auto c = build_cloud(p.prior, 3000, 6, CloudMode::Sample);
    auto s = optimize_partition(p, c, 5, 2);
    EXPECT_TRUE(total_expectation(p, c, s).pass);
    EXPECT_TRUE(value_monotonicity(s).pass);
    PartitionState t = s;
    t.valueHistory = {1.0, 0.5};
    EXPECT_FALSE(value_monotonicity(t).pass);
}

TEST(NuCounts, Examples) {
    EXPECT_EQ(nu_counts(m2(0, 1, 1, 0)), (NuCounts{1, 0, 1}));
    EXPECT_EQ(nu_counts(m2(-1, 0.2, 0.2, -3)), (NuCounts{0, 0, 2}));
    EXPECT_EQ(nu_counts(m2(1, 0, 0, 0)), (NuCounts{1, 1, 0}));
    Rng rng(2);
    for (int rep = 0; rep < 100; ++rep) {
        const double Gp = 0.1 + rng.uniform(), a1 = 3 * rng.normal(), Gpp = rng.normal();
        EXPECT_EQ(nu_counts(m2(0, Gp, Gp, a1 * Gpp)), (NuCounts{1, 0, 1}));
    }
    Mat H(3, 3);
    H << 2, 0.1, 0, 0.1, -1, 0.3, 0, 0.3, 0;
    const auto base = nu_counts(H);
    for (int rep = 0; rep < 20; ++rep) {
        Mat R(3, 3);
        for (Index i = 0; i < 9; ++i) R(i % 3, i / 3) = rng.normal();
        const Mat Q = Eigen::HouseholderQR<Mat>(R).householderQ();
        EXPECT_EQ(nu_counts(symmetrize(Q * H * Q.transpose())), base);
    }
}

TEST(PoolDimension, Examples) {
    auto p = product_problem();
    auto c = build_cloud(p.prior, 50000, 5, CloudMode::Sample);
    // 64 equal-mass stripes across the diagonal
    std::vector<std::pair<double, Index>> sv;
    for (Index i = 0; i < c.size(); ++i) sv.push_back({c.points(0, i) + c.points(1, i), i});
    std::sort(sv.begin(), sv.end());
    std::vector<int> lab(static_cast<std::size_t>(c.size()));
    for (std::size_t j = 0; j < sv.size(); ++j) lab[static_cast<std::size_t>(sv[j].second)] = static_cast<int>(j * 64 / sv.size());
    const auto dims = pool_dims(p, c, lab, 64);
    for (Index k = 8; k < 56; ++k) EXPECT_EQ(dims[static_cast<std::size_t>(k)], 1) << k;
    EXPECT_EQ(dims[0], 2);

    ProblemSpec q = p;
    q.utility = make_quadratic(-Mat::Identity(2, 2));
    std::vector<int> one(static_cast<std::size_t>(c.size()), 0);
    EXPECT_TRUE(pool_dimension(q, c, one, {c.mean()}).pass);

    std::vector<int> own(static_cast<std::size_t>(c.size()));
    std::vector<Vec> acts;
    for (Index i = 0; i < c.size(); ++i) {
        own[static_cast<std::size_t>(i)] = static_cast<int>(i);
        acts.push_back(c.point(i));
    }
    auto e = pool_dimension(p, c, own, acts);
    EXPECT_TRUE(e.pass);
    EXPECT_EQ(e.samplesUsed, 0);
}

TEST(ConcaveAlongRays, Examples) {
    auto expo = make_radial(Mat::Identity(2, 2), ScalarCurve::exponential(-1.0, -1.0));
    EXPECT_TRUE(concave_along_rays(expo, 3.0, 0.1));
    EXPECT_FALSE(concave_along_rays(make_quadratic(m2(1, 0, 0, -1)), 3.0, 0.1));
    auto quartic = make_radial(Mat::Identity(3, 3), ScalarCurve::polynomial({0, 0, -1}));
    EXPECT_TRUE(concave_along_rays(quartic, 1.0, 0.2));
    EXPECT_THROW(concave_along_rays(quartic, 1.0, 1.5), PreconditionError);
}

TEST(PoolCoeffs, Single) {
    const Vec th = Vec::LinSpaced(21, 0.0, 2.0);
    auto r = single_pool_coeffs(th, th, ScalarCurve::identity());
    EXPECT_LE((r.kappa1 + Vec::Ones(21)).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((r.kappa2 - 2 * th).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_TRUE(r.monotone.pass);

    // convex G, increasing f: kappa1 <= 0
    auto G = ScalarCurve::exponential(1.0, 1.0);
    auto cvx = single_pool_coeffs(th, Vec(th.array() + 1.0), G);
    EXPECT_LE(cvx.kappa1.maxCoeff(), 0.0);

    // constant f: kappa1 = -f G''/G' = -f for exp
    auto k = single_pool_coeffs(th, Vec::Constant(21, 0.5), G);
    for (Index i = 1; i + 1 < 21; ++i) EXPECT_NEAR(k.kappa1[i], -0.5, 2e-2);

    auto bad = single_pool_coeffs(th, Vec(-th), ScalarCurve::identity());
    EXPECT_FALSE(bad.monotone.pass);
}

TEST(PoolCoeffs, MultiProductAndType) {
    auto ok = multi_product_coeffs({Mat::Identity(2, 2), m2(2, 0.5, 0.5, 1)});
    EXPECT_TRUE(ok.nsd.pass);
    EXPECT_LE((ok.kappa1[0] + Mat::Identity(2, 2)).norm(), 0.0);
    EXPECT_FALSE(multi_product_coeffs({m2(-1, 0, 0, 1)}).nsd.pass);
    auto t = multi_type_coeffs({Vec::Constant(3, 1.0), Vec::Constant(3, -0.5)}, {Vec::Ones(3), Vec::Ones(3)});
    EXPECT_TRUE(t.downward.pass);
    EXPECT_FALSE(multi_type_coeffs({Vec::Constant(3, -1.0)}, {Vec::Ones(3)}).downward.pass);
}
