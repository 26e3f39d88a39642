#include <gtest/gtest.h>

#include <cmath>

#include <persuasion/manifold.hpp>

using namespace persuasion;

namespace {

Mat m2(double a, double b, double c, double d) {
    Mat M(2, 2);
    M << a, b, c, d;
    return M;
}

ProblemSpec product_problem(PriorSpec prior) {
    ProblemSpec p;
    p.stateDim = p.actionDim = 2;
    p.prior = std::move(prior);
    p.utility = make_quadratic(m2(0, 0.5, 0.5, 0));
    return p;
}

ScalarCurve quarter_power() {
    return ScalarCurve::custom([](double x) {
        const double y = x + 1e-12;
        return CurveValue{std::pow(y, 0.25), 0.25 * std::pow(y, -0.75), -0.1875 * std::pow(y, -1.75)};
    });
}

}  // namespace

TEST(HyperplanePolicy, Examples) {
    const Mat I = Mat::Identity(2, 2);
    auto a = hyperplane_policy(m2(0, 0.5, 0.5, 0), I);
    EXPECT_LE((a.A - m2(0.5, 0.5, 0.5, 0.5)).norm(), 1e-12);
    auto b = hyperplane_policy(m2(1, 0, 0, -1), I);
    EXPECT_LE((b.A - m2(1, 0, 0, 0)).norm(), 1e-12);
    auto c = hyperplane_policy(m2(-1, 0.2, 0.2, -2), I);
    EXPECT_LE(c.A.norm(), 1e-12);
}

TEST(HyperplanePolicy, Invariants) {
    Rng rng(7);
    for (int rep = 0; rep < 20; ++rep) {
        Mat H(3, 3), R(3, 3);
        for (Index i = 0; i < 3; ++i)
            for (Index j = 0; j < 3; ++j) {
                H(i, j) = rng.normal();
                R(i, j) = rng.normal();
            }
        H = symmetrize(H);
        const Mat Sigma = R * R.transpose() + 0.5 * Mat::Identity(3, 3);
        auto h = hyperplane_policy(H, Sigma);
        EXPECT_LE((h.A * h.A - h.A).norm(), 1e-8);
        const Mat IA = Mat::Identity(3, 3) - h.A;
        EXPECT_LE(sym_eigen(IA.transpose() * H * IA).eigenvalues().maxCoeff(), 1e-8);
        auto h1 = hyperplane_policy(H, Mat::Identity(3, 3));
        Index pos = 0;
        for (Index j = 0; j < 3; ++j) pos += sym_eigen(H).eigenvalues()[j] > 0.0;
        EXPECT_EQ(Eigen::FullPivLU<Mat>(h1.A).rank(), pos);
    }
    EXPECT_THROW(hyperplane_policy(m2(0, 1, 0, 0), Mat::Identity(2, 2)), ConfigurationError);
}

TEST(SpherePolicy, GaussianBeta) {
    auto c = build_cloud(GaussianPrior{Vec::Zero(2), Mat::Identity(2, 2)}, 100000, 5, CloudMode::Sample);
    auto s = sphere_policy(c, make_radial(Mat::Identity(2, 2), quarter_power()), IdentityMap{});
    EXPECT_NEAR(s.beta, std::sqrt(M_PI / 2), 0.01);
    EXPECT_TRUE(s.conditionHolds);
    EXPECT_LE(s.worstSlack, 0.0);
}

TEST(SpherePolicy, Lobbyist) {
    const double alpha = 0.75, gamma = 0.25;
    auto c = build_cloud(GaussianPrior{Vec::Zero(2), Mat::Identity(2, 2)}, 100000, 6, CloudMode::Sample);
    auto s = sphere_policy(c, make_radial(Mat::Identity(2, 2), ScalarCurve::polynomial({0.0, 2 * alpha - 1, -gamma})),
                           IdentityMap{});
    // graph lies below its tangent, but phi' < 0 at beta^2 since beta > 1
    EXPECT_LE(s.worstSlack, 0.0);
    EXPECT_LT(s.phiPrime, 0.0);
    EXPECT_FALSE(s.conditionHolds);
}

TEST(SpherePolicy, LinearPhiFails) {
    auto c = build_cloud(GaussianPrior{Vec::Zero(2), Mat::Identity(2, 2)}, 20000, 2, CloudMode::Sample);
    auto s = sphere_policy(c, make_radial(Mat::Identity(2, 2), ScalarCurve::identity()), IdentityMap{});
    EXPECT_FALSE(s.conditionHolds);
    EXPECT_GT(s.worstSlack, 0.0);
}

TEST(SpherePolicy, Preconditions) {
    auto u = make_radial(Mat::Identity(2, 2), ScalarCurve::identity());
    auto shifted = build_cloud(GaussianPrior{Vec::Constant(2, 0.5), Mat::Identity(2, 2)}, 20000, 2, CloudMode::Sample);
    EXPECT_THROW(sphere_policy(shifted, u, IdentityMap{}), PreconditionError);
    auto stretched = build_cloud(GaussianPrior{Vec::Zero(2), m2(2, 0, 0, 1)}, 20000, 2, CloudMode::Sample);
    EXPECT_THROW(sphere_policy(stretched, u, IdentityMap{}), PreconditionError);
    auto iso = build_cloud(GaussianPrior{Vec::Zero(2), Mat::Identity(2, 2)}, 20000, 2, CloudMode::Sample);
    EXPECT_THROW(sphere_policy(iso, make_quadratic(Mat::Identity(2, 2)), IdentityMap{}), ConfigurationError);
    EXPECT_THROW(sphere_policy(iso, make_radial(m2(1, 0, 0, 2), ScalarCurve::identity()), IdentityMap{}),
                 ConfigurationError);
}

TEST(Curve2d, ProductGaussianFollowsDiagonal) {
    auto p = product_problem(GaussianPrior{Vec::Zero(2), m2(1, 0.3, 0.3, 1)});
    auto c = build_cloud(p.prior, 40000, 1, CloudMode::Grid);
    auto r = solve_curve_2d(p, c, CurveOptions{31, 1e-6, 500});
    ASSERT_GE(r.curve.theta.size(), 2);
    for (Index k = 0; k < r.curve.theta.size(); ++k) {
        if (std::abs(r.curve.theta[k]) > 6.0) continue;
        EXPECT_LE(std::abs(r.curve.phi[k] - r.curve.theta[k]) / std::sqrt(2.0), 0.05);
    }
    for (Index i = 0; i < r.curve.theta.size(); ++i)
        for (Index j = 0; j < r.curve.theta.size(); ++j)
            EXPECT_GE((r.curve.phi[i] - r.curve.phi[j]) * (r.curve.theta[i] - r.curve.theta[j]), -1e-8);
}

TEST(Curve2d, DiagonalSupportIsReproduced) {
    const Index n = 21;
    Mat pts(2, n);
    for (Index i = 0; i < n; ++i) pts(0, i) = pts(1, i) = -2.0 + 0.2 * static_cast<double>(i);
    auto c = make_cloud(pts);
    auto p = product_problem(TabulatedPrior{pts, c.weights});
    auto r = solve_curve_2d(p, c, CurveOptions{n, 1e-10, 100});
    EXPECT_TRUE(r.converged);
    EXPECT_LE(r.residual, 1e-10);
    ASSERT_EQ(r.curve.theta.size(), n);
    for (Index k = 0; k < n; ++k) {
        EXPECT_NEAR(r.curve.theta[k], pts(1, k), 1e-12);
        EXPECT_NEAR(r.curve.phi[k], pts(0, k), 1e-12);
    }
}

TEST(Curve2d, AcceptanceCurveMonotone) {
    ProblemSpec p;
    p.stateDim = p.actionDim = 2;
    p.prior = UniformBoxPrior{Vec::Zero(2), Vec::Ones(2)};
    p.utility = ProductAcceptanceUtility{{ScalarCurve::identity()}};
    auto c = build_cloud(p.prior, 20000, 3, CloudMode::Grid);
    auto r = solve_curve_2d(p, c, CurveOptions{25, 1e-6, 300});
    for (Index k = 1; k < r.curve.theta.size(); ++k) {
        EXPECT_GT(r.curve.theta[k], r.curve.theta[k - 1]);
        EXPECT_GE(r.curve.phi[k] - r.curve.phi[k - 1], -1e-3);
    }
}

TEST(Curve2d, Preconditions) {
    ProblemSpec p;
    EXPECT_THROW(solve_curve_2d(p, build_cloud(p.prior, 100, 1, CloudMode::Sample)), PreconditionError);
}

TEST(ApplyPolicy, Examples) {
    auto c = build_cloud(GaussianPrior{Vec::Zero(2), Mat::Identity(2, 2)}, 2000, 9, CloudMode::Sample);
    auto hp = hyperplane_policy(m2(0, 0.5, 0.5, 0), Mat::Identity(2, 2));
    auto p = product_problem(GaussianPrior{Vec::Zero(2), Mat::Identity(2, 2)});
    const Mat a = apply_policy(p, hp.manifold, c);
    EXPECT_LE((a - hp.A * c.points).cwiseAbs().maxCoeff(), 1e-8);

    auto u = make_radial(Mat::Identity(2, 2), quarter_power());
    auto s = sphere_policy(c, u, IdentityMap{});
    const Mat b = apply_policy(u, s.manifold, IdentityMap{}, c);
    for (Index i = 0; i < c.size(); ++i)
        EXPECT_LE((b.col(i) - s.beta * c.points.col(i).normalized()).norm(), 1e-6);

    Mat a0(2, 1);
    a0 << 0.3, -0.1;
    const Mat k = apply_policy(p, PointCloudManifold{a0}, c);
    for (Index i = 0; i < c.size(); ++i) EXPECT_TRUE(k.col(i) == a0.col(0));
}

TEST(CurveCsv, Rows) {
    Graph1DManifold g{Vec::LinSpaced(3, 0, 1), Vec::LinSpaced(3, 1, 2)};
    const auto s = curve_csv(g);
    EXPECT_EQ(s.substr(0, 12), "theta,a1,a2\n");
    EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 4);
}
