#include <gtest/gtest.h>

#include <cmath>

#include <persuasion/oracle.hpp>
#include <persuasion/partition.hpp>

using namespace persuasion;

namespace {

ProblemSpec problem_1d(UtilitySpec u, const Mat& pts, const Vec& w) {
    ProblemSpec p;
    p.stateDim = p.actionDim = 1;
    p.prior = TabulatedPrior{pts, w};
    p.utility = std::move(u);
    return p;
}

Mat row(std::initializer_list<double> xs) {
    Mat m(1, static_cast<Index>(xs.size()));
    Index i = 0;
    for (double x : xs) m(0, i++) = x;
    return m;
}

double W1(const UtilitySpec& u, double a) { return W_value(u, Vec::Constant(1, a)); }

}  // namespace

TEST(Enumerate, TwoPointConvexSeparatesConcavePools) {
    const Mat pts = row({-1.0, 1.0});
    auto c = make_cloud(pts);
    auto convex = problem_1d(make_quadratic(Mat::Identity(1, 1)), pts, c.weights);
    auto r = enumerate_partitions(convex, c, 2);
    EXPECT_NE(r.bestLabels[0], r.bestLabels[1]);
    EXPECT_NEAR(r.bestValue, W1(convex.utility, 1.0), 1e-12);
    auto concave = problem_1d(make_quadratic(-Mat::Identity(1, 1)), pts, c.weights);
    auto s = enumerate_partitions(concave, c, 2);
    EXPECT_EQ(s.bestLabels[0], s.bestLabels[1]);
    EXPECT_NEAR(s.bestValue, 0.0, 1e-12);
    EXPECT_EQ(s.method, "exhaustive");
}

TEST(Enumerate, MatchesPartitionSolverOnProductUtility) {
    Rng rng(11);
    Mat pts(2, 8);
    for (Index i = 0; i < 8; ++i) {
        pts(0, i) = rng.normal();
        pts(1, i) = rng.normal();
    }
    auto c = make_cloud(pts);
    ProblemSpec p;
    p.stateDim = p.actionDim = 2;
    p.prior = TabulatedPrior{pts, c.weights};
    Mat H(2, 2);
    H << 0, 0.5, 0.5, 0;
    p.utility = make_quadratic(H);
    auto r = enumerate_partitions(p, c, 2);
    EXPECT_EQ(r.enumeratedCount, 128);
    auto s = optimize_partition(p, c, 2, 64, 1e-12, 500, 3);
    EXPECT_NEAR(r.bestValue, s.value, 1e-9);
}

TEST(Enumerate, DeduplicatedEqualsNaive) {
    Rng rng(5);
    for (Index n = 1; n <= 6; ++n)
        for (Index K = 1; K <= 3; ++K) {
            Mat pts(2, n);
            for (Index i = 0; i < n; ++i) pts.col(i) << rng.normal(), rng.normal();
            auto c = make_cloud(pts);
            ProblemSpec p;
            p.stateDim = p.actionDim = 2;
            p.prior = TabulatedPrior{pts, c.weights};
            Mat H(2, 2);
            H << 1, 0.3, 0.3, -1;
            p.utility = make_quadratic(H);
            auto a = enumerate_partitions(p, c, K);
            auto b = enumerate_partitions_naive(p, c, K);
            EXPECT_NEAR(a.bestValue, b.bestValue, 1e-12);
            EXPECT_LE(a.enumeratedCount, b.enumeratedCount);
        }
}

TEST(Enumerate, RefusesBeyondCap) {
    Mat pts = Mat::Zero(1, 21);
    for (Index i = 0; i < 21; ++i) pts(0, i) = static_cast<double>(i);
    auto c = make_cloud(pts);
    auto p = problem_1d(make_quadratic(Mat::Identity(1, 1)), pts, c.weights);
    try {
        enumerate_partitions(p, c, 2);
        FAIL() << "expected refusal";
    } catch (const PreconditionError& e) {
        EXPECT_NE(std::string(e.what()).find("2097152"), std::string::npos);
    }
    EXPECT_NO_THROW(enumerate_partitions(p, make_cloud(pts.leftCols(19)), 2));
}

TEST(IntervalOracle, MatchesEnumerationIn1d) {
    const Mat pts = row({-2.0, -1.1, -0.3, 0.2, 0.9, 1.7, 2.5});
    auto c = make_cloud(pts);
    auto u = UtilitySpec{CustomUtility{[](const Vec& a) { return std::sin(2.0 * a[0]) + 0.3 * a[0] * a[0]; }, 1}};
    auto p = problem_1d(u, pts, c.weights);
    auto e = enumerate_partitions(p, c, 7);
    auto d = best_interval_partition_1d(p, c);
    EXPECT_GE(d.bestValue, -1e300);
    EXPECT_LE(d.bestValue, e.bestValue + 1e-12);
    EXPECT_EQ(d.method, "interval");
}

TEST(Simplex, SmallProgram) {
    Mat A(2, 2);
    A << 1, 1, 1, 3;
    Vec b(2), c(2);
    b << 4, 6;
    c << 3, 2;
    auto r = simplex_max(A, b, c);
    EXPECT_NEAR(r.value, 12.0, 1e-12);
    EXPECT_NEAR(r.x[0], 4.0, 1e-12);
    EXPECT_NEAR(b.dot(r.duals), r.value, 1e-12);
    Vec cu(2);
    cu << 1, -1;
    Mat Au(1, 2);
    Au << -1, 1;
    EXPECT_THROW(simplex_max(Au, Vec::Ones(1), cu), SolverError);
}

TEST(Majorant, Examples) {
    const Vec x = Vec::LinSpaced(9, -2, 2);
    const Vec w = Vec::Constant(9, 1.0 / 9.0);
    const Vec sq = x.array().square();
    EXPECT_NEAR(convex_majorant_value_1d(x, w, sq), w.dot(sq), 1e-12);

    // concave W: value is W at the prior mean, which falls off the grid
    const Vec xs = (Vec(4) << -1.0, 0.0, 0.5, 3.0).finished();
    const Vec ws = (Vec(4) << 0.1, 0.2, 0.3, 0.4).finished();
    auto W = [](double t) { return -t * t; };
    Vec Wv(4);
    for (Index i = 0; i < 4; ++i) Wv[i] = W(xs[i]);
    const double mean = ws.dot(xs);
    MajorantOptions opt;
    opt.W = W;
    EXPECT_NEAR(convex_majorant_value_1d(xs, ws, Wv, opt), W(mean), 1e-9);
    // grid-only bound sits below it
    EXPECT_LT(convex_majorant_value_1d(xs, ws, Wv), W(mean) - 1e-3);

    EXPECT_NEAR(convex_majorant_value_1d(x, w, Vec::Constant(9, 2.5)), 2.5, 1e-12);
}

TEST(Majorant, WeakDualityAgainstPartitions) {
    Rng rng(21);
    auto u = UtilitySpec{CustomUtility{[](const Vec& a) { return std::cos(3.0 * a[0]) - 0.2 * a[0]; }, 1}};
    for (int rep = 0; rep < 10; ++rep) {
        Vec xs(6);
        for (Index i = 0; i < 6; ++i) xs[i] = rng.normal();
        std::sort(xs.data(), xs.data() + 6);
        Mat pts = xs.transpose();
        Vec w(6);
        for (Index i = 0; i < 6; ++i) w[i] = 0.2 + rng.uniform();
        w /= w.sum();
        auto c = make_cloud(pts, w);
        auto p = problem_1d(u, pts, w);
        const double part = enumerate_partitions(p, c, 6).bestValue;
        Vec Wv(6);
        for (Index i = 0; i < 6; ++i) Wv[i] = W1(u, xs[i]);
        MajorantOptions opt;
        opt.W = [&](double t) { return W1(u, t); };
        const double lp = convex_majorant_value_1d(xs, w, Wv, opt);
        EXPECT_LE(part, lp + 1e-9);
    }
}

TEST(Majorant, PurePartitionsTrailWhenAtomsMustSplit) {
    // peaks at |a| = 1/2; best signal splits the middle atom
    auto u = UtilitySpec{CustomUtility{[](const Vec& a) {
                                           const double d = std::abs(a[0]) - 0.5;
                                           return -d * d;
                                       },
                                       1}};
    const Mat pts = row({-1.0, 0.0, 1.0});
    auto c = make_cloud(pts);
    auto p = problem_1d(u, pts, c.weights);
    const double part = enumerate_partitions(p, c, 3).bestValue;
    EXPECT_NEAR(part, -1.0 / 12.0, 1e-12);
    MajorantOptions opt;
    opt.W = [&](double t) { return W1(u, t); };
    const Vec xs = pts.row(0).transpose();
    Vec Wv(3);
    for (Index i = 0; i < 3; ++i) Wv[i] = W1(u, xs[i]);
    const double lp = convex_majorant_value_1d(xs, c.weights, Wv, opt);
    EXPECT_GE(lp, -1.0 / 36.0 - 1e-9);
    EXPECT_GT(lp - part, 0.05);
}

TEST(Majorant, Preconditions) {
    EXPECT_THROW(convex_majorant_value_1d(Vec::LinSpaced(3, 1, 0), Vec::Ones(3), Vec::Zero(3)), PreconditionError);
    EXPECT_THROW(convex_majorant_value_1d(Vec::LinSpaced(3, 0, 1), Vec::Ones(2), Vec::Zero(3)), PreconditionError);
}
