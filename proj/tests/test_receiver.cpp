#include <gtest/gtest.h>

#include <persuasion/receiver.hpp>

using namespace persuasion;

namespace {

ProblemSpec moment2() {
    ProblemSpec p;
    p.stateDim = p.actionDim = 2;
    p.prior = GaussianPrior{Vec::Zero(2), Mat::Identity(2, 2)};
    p.utility = make_quadratic(Mat::Identity(2, 2));
    return p;
}

ProblemSpec cubic1(double eps = 1.0) {
    ProblemSpec p;
    p.stateDim = p.actionDim = 1;
    p.prior = UniformBoxPrior{Vec::Constant(1, 0.0), Vec::Constant(1, 2.0)};
    p.utility = make_quadratic(Mat::Identity(1, 1));
    p.receiver = cubic_receiver(Mat::Identity(1, 1), Vec(), 1.0, 1.0, eps);
    return p;
}

double bisect(std::function<double(double)> f, double lo, double hi) {
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        ((f(lo) < 0) == (f(mid) < 0) ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace

TEST(SolveAction, MomentWeightedMean) {
    Mat pts(2, 2);
    pts << 0, 2, 0, 4;
    auto post = make_cloud(pts, Vec::Constant(2, 1.0));
    auto r = solve_action(moment2(), post, 1e-12);
    EXPECT_TRUE(r.converged);
    EXPECT_EQ(r.iterations, 1);
    EXPECT_DOUBLE_EQ(r.action[0], 1.0);
    EXPECT_DOUBLE_EQ(r.action[1], 2.0);
}

TEST(SolveAction, MomentSingleAtom) {
    Mat pts(2, 1);
    pts << 0.3, -1.7;
    auto r = solve_action(moment2(), make_cloud(pts), 1e-12);
    EXPECT_TRUE(r.action == pts.col(0));
}

TEST(SolveAction, CubicTwoAtoms) {
    Mat pts(1, 2);
    pts << 0, 2;
    auto p = cubic1();
    auto r = solve_action(p, make_cloud(pts, Vec::Constant(2, 1.0)), 1e-12);
    const double ref = bisect([](double a) { return a * a * a + a - 1.0; }, 0.0, 1.0);
    EXPECT_NEAR(r.action[0], 0.682328, 1e-6);
    EXPECT_NEAR(r.action[0], ref, 1e-10);
    EXPECT_LE(r.residualNorm, 1e-12);
    EXPECT_LE(r.damping, 1.0);
}

TEST(SolveAction, UniqueFromRandomStarts) {
    auto p = cubic1(0.5);
    auto post = build_cloud(p.prior, 50, 9, CloudMode::Sample);
    const double tol = 1e-10;
    const Vec ref = solve_action(p, post, tol).action;
    Rng rng(5);
    for (int s = 0; s < 20; ++s) {
        Vec start = Vec::Constant(1, 4.0 * rng.normal());
        ActionOptions opt;
        opt.start = &start;
        auto r = solve_action(p, post, tol, opt);
        EXPECT_NEAR(r.action[0], ref[0], 10 * tol);
    }
}

TEST(SolveAction, ExistenceBound) {
    // two-dimensional cubic receiver with coupling through B
    Mat B(2, 2);
    B << 1.0, 0.5, -0.3, 2.0;
    ProblemSpec p;
    p.stateDim = p.actionDim = 2;
    p.prior = GaussianPrior{Vec::Zero(2), Mat::Identity(2, 2)};
    p.utility = make_quadratic(Mat::Identity(2, 2));
    p.receiver = cubic_receiver(B, Vec::Constant(2, 0.2), 0.5, 0.8, 0.8);
    const double kappa = existence_kappa(0.8);
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        auto post = build_cloud(p.prior, 40, seed, CloudMode::Sample);
        check_declared_modulus(p, post, seed);
        auto r = solve_action(p, post, 1e-11);
        const Mat astar = full_info_actions(p, post);
        double m2 = 0.0;
        for (Index i = 0; i < post.size(); ++i) m2 += post.weights[i] * astar.col(i).squaredNorm();
        EXPECT_LE(r.action.squaredNorm(), kappa * m2);
        Vec EG = Vec::Zero(2);
        for (Index i = 0; i < post.size(); ++i) EG += post.weights[i] * eval_G(p, r.action, post.point(i));
        EXPECT_LE(EG.norm(), 1e-11);
    }
}

TEST(SolveAction, IterationCapRaises) {
    auto p = cubic1(1e-6);
    Mat pts(1, 2);
    pts << 0, 2;
    ActionOptions opt;
    opt.maxIter = 5;
    Vec start = Vec::Constant(1, 50.0);
    opt.start = &start;
    try {
        solve_action(p, make_cloud(pts, Vec::Constant(2, 1.0)), 1e-12, opt);
        FAIL();
    } catch (const SolverError& e) {
        EXPECT_GT(e.residual(), 0.0);
    }
}

TEST(SolveAction, Preconditions) {
    std::vector<Index> none;
    Mat pts(1, 1);
    pts << 1.0;
    EXPECT_THROW(solve_action_subset(cubic1(), pts, Vec::Constant(1, 1.0), none, nullptr, 1e-10), PreconditionError);
    EXPECT_THROW(solve_action(cubic1(), make_cloud(pts), 0.0), PreconditionError);
}
