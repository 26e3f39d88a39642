#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>
#include <unistd.h>

#include <persuasion/cli.hpp>

#ifndef PERSUADE_EXE
#error "PERSUADE_EXE must name the persuade binary"
#endif

using namespace persuasion;
using cli::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / ("persuade_test_" + std::to_string(::getpid())) / name;
    fs::remove_all(d);
    fs::create_directories(d.parent_path());
    return d;
}

fs::path write_config(const std::string& name, const json& j) {
    const fs::path p = scratch(name + ".json");
    std::ofstream(p) << j.dump(2);
    return p;
}

int run_exe(const std::string& args) {
    const std::string cmd = std::string(PERSUADE_EXE) + " " + args + " 2>/dev/null";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json product_config(int particles = 3000) {
    json j = json::parse(R"({
      "problem": {
        "prior": {"type": "gaussian", "mean": [0, 0], "covariance": [[1, 0], [0, 1]]},
        "utility": {"type": "quadratic", "H": [[0, 0.5], [0.5, 0]]}
      },
      "sampling": {"particles": 3000, "seed": 1},
      "solve": {"K": 4, "restarts": 2}
    })");
    j["sampling"]["particles"] = particles;
    return j;
}

}  // namespace

TEST(Overrides, DottedPathsAndTypes) {
    json j = json::parse(R"({"solve": {"K": 4}, "a": [1, 2]})");
    cli::apply_override(j, "solve.K=16");
    cli::apply_override(j, "solve.name=abc");
    cli::apply_override(j, "a.1=5.5");
    cli::apply_override(j, "new.deep.key=[1,2]");
    EXPECT_EQ(j["solve"]["K"], 16);
    EXPECT_EQ(j["solve"]["name"], "abc");
    EXPECT_EQ(j["a"][1], 5.5);
    EXPECT_EQ(j["new"]["deep"]["key"].size(), 2u);
    EXPECT_THROW(cli::apply_override(j, "novalue"), ConfigurationError);
    EXPECT_THROW(cli::apply_override(j, "a.7=1"), ConfigurationError);
    EXPECT_THROW(cli::apply_override(j, "solve.K.x=1"), ConfigurationError);
}

TEST(Config, HashIsStableAndSensitive) {
    const json a = product_config();
    json b = a;
    EXPECT_EQ(cli::config_hash(a), cli::config_hash(b));
    b["solve"]["K"] = 5;
    EXPECT_NE(cli::config_hash(a), cli::config_hash(b));
    EXPECT_EQ(cli::config_hash(a).size(), 16u);
}

TEST(Config, ParsesEveryVariant) {
    json c = product_config();
    auto rc = cli::parse_config(c, "solve", {"sampling.seed=7"}, std::nullopt);
    EXPECT_EQ(rc.seed, 7u);
    EXPECT_EQ(rc.problem.actionDim, 2);
    rc = cli::parse_config(c, "solve", {}, 11);
    EXPECT_EQ(rc.seed, 11u);

    c["problem"]["utility"] = json::parse(R"({"type": "radial", "H": [[1, 0], [0, 1]], "phi": {"type": "polynomial", "coeffs": [0, 1]}})");
    EXPECT_NO_THROW(cli::parse_config(c, "solve", {}, std::nullopt));
    c["problem"]["utility"] = json::parse(R"({"type": "productAcceptance", "G": ["identity"]})");
    c["problem"]["prior"] = json::parse(R"({"type": "uniformBox", "lo": [0, 0], "hi": [1, 1]})");
    EXPECT_NO_THROW(cli::parse_config(c, "solve", {}, std::nullopt));
    c["problem"]["prior"] = json::parse(R"({"type": "tabulated", "points": [[0, 1], [1, 0], [2, 2]]})");
    auto t = cli::parse_config(c, "oracle", {}, std::nullopt);
    EXPECT_EQ(std::get<TabulatedPrior>(t.problem.prior).points.cols(), 3);
    c["problem"]["prior"] = json::parse(R"({"type": "mixture", "weights": [0.5, 0.5],
        "components": [{"mean": [0, 0], "covariance": [[1, 0], [0, 1]]}, {"mean": [1, 1], "covariance": [[1, 0], [0, 1]]}]})");
    EXPECT_NO_THROW(cli::parse_config(c, "solve", {}, std::nullopt));
    c["problem"]["momentMap"] = json::parse(R"({"type": "linear", "B": [[2, 0], [0, 1]]})");
    EXPECT_NO_THROW(cli::parse_config(c, "solve", {}, std::nullopt));
    c["problem"]["receiver"] = json::parse(R"({"type": "cubic", "B": [[1, 0], [0, 1]], "kappa": 1, "lambda": 1, "epsilon": 1})");
    EXPECT_NO_THROW(cli::parse_config(c, "solve", {}, std::nullopt));

    EXPECT_THROW(cli::parse_config(c, "frobnicate", {}, std::nullopt), ConfigurationError);
    json bad = product_config();
    bad["problem"]["utility"]["type"] = "mystery";
    EXPECT_THROW(cli::parse_config(bad, "solve", {}, std::nullopt), ConfigurationError);
    bad = product_config();
    bad["sampling"]["particles"] = 0;
    EXPECT_THROW(cli::parse_config(bad, "solve", {}, std::nullopt), ConfigurationError);
}

TEST(Format, ShortestRoundTrip) {
    for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 12345678.9, 0.0}) {
        const std::string s = cli::fmt(v);
        EXPECT_EQ(std::stod(s), v);
    }
    EXPECT_EQ(cli::fmt(0.1), "0.1");
}

TEST(Run, SolveWritesArtifacts) {
    const auto cfg = write_config("solve", product_config());
    const auto out = scratch("solve_out");
    ASSERT_EQ(run_exe("solve --config " + cfg.string() + " --out " + out.string()), 0);
    const json r = json::parse(slurp(out / "report.json"));
    for (const char* k : {"configHash", "seed", "particles", "wallTimeSeconds", "values", "converged"}) EXPECT_TRUE(r.contains(k)) << k;
    EXPECT_EQ(r["particles"], 3000);
    EXPECT_TRUE(r["converged"]["partition"].get<bool>());
    EXPECT_GT(r["values"]["value"].get<double>(), 0.3);

    const std::string a = slurp(out / "assignments.csv");
    std::istringstream ls(a);
    std::string first, header;
    std::getline(ls, first);
    std::getline(ls, header);
    EXPECT_EQ(first.rfind("# persuade", 0), 0u);
    EXPECT_EQ(header, "label,omega_1,omega_2,action_1,action_2");
    EXPECT_EQ(std::count(a.begin(), a.end(), '\n'), 3002);

    const json d = json::parse(slurp(out / "diagnostics.json"));
    ASSERT_TRUE(d.is_array());
    ASSERT_FALSE(d.empty());
    for (const auto& e : d) {
        EXPECT_EQ(e.size(), 6u);
        for (const char* k : {"checkName", "pass", "worstViolation", "worstLocation", "tolerance", "samplesUsed"})
            EXPECT_TRUE(e.contains(k)) << k;
    }
}

TEST(Run, GaussianProductK32ReachesValue) {
    json c = product_config(5000);
    c["solve"] = json{{"K", 32}, {"restarts", 2}};
    const auto cfg = write_config("k32", c);
    const auto out = scratch("k32_out");
    ASSERT_EQ(run_exe("solve --config " + cfg.string() + " --out " + out.string()), 0);
    EXPECT_GE(json::parse(slurp(out / "report.json"))["values"]["value"].get<double>(), 0.46);
}

TEST(Run, InvalidCovarianceExitsTwoWithoutArtifacts) {
    json c = product_config();
    c["problem"]["prior"]["covariance"] = json::parse("[[1, 2], [2, 1]]");
    const auto cfg = write_config("badcov", c);
    const auto out = scratch("badcov_out");
    EXPECT_EQ(run_exe("solve --config " + cfg.string() + " --out " + out.string()), 2);
    EXPECT_FALSE(fs::exists(out / "report.json"));
    EXPECT_FALSE(fs::exists(out / "assignments.csv"));
    EXPECT_EQ(run_exe("solve --config " + (scratch("missing") / "nope.json").string() + " --out " + out.string()), 2);
    EXPECT_EQ(run_exe("frobnicate --config " + cfg.string()), 2);
}

TEST(Run, VerifySingletonOnConvexFailsMaximality) {
    json c = json::parse(R"({
      "problem": {
        "prior": {"type": "gaussian", "mean": [0, 0], "covariance": [[1, 0], [0, 1]]},
        "utility": {"type": "quadratic", "H": [[1, 0], [0, 1]]}
      },
      "sampling": {"particles": 500, "seed": 3},
      "verify": {"manifold": {"type": "pointCloud", "points": [[0, 0]]}, "checks": ["maximality"], "hullPairs": 200}
    })");
    const auto cfg = write_config("verify", c);
    const auto out = scratch("verify_out");
    EXPECT_EQ(run_exe("verify --config " + cfg.string() + " --out " + out.string()), 4);
    const json d = json::parse(slurp(out / "diagnostics.json"));
    ASSERT_EQ(d.size(), 1u);
    EXPECT_EQ(d[0]["checkName"], "maximality");
    EXPECT_FALSE(d[0]["pass"].get<bool>());
}

TEST(Run, ReproducibleAcrossRunsAndThreads) {
    const auto cfg = write_config("repro", product_config(2000));
    const auto o1 = scratch("repro1"), o2 = scratch("repro2");
    ASSERT_EQ(run_exe("solve --config " + cfg.string() + " --out " + o1.string()), 0);
    ASSERT_EQ(run_exe("solve --config " + cfg.string() + " --threads 1 --out " + o2.string()), 0);
    EXPECT_EQ(slurp(o1 / "assignments.csv"), slurp(o2 / "assignments.csv"));
    const auto o3 = scratch("repro3");
    ASSERT_EQ(run_exe("solve --config " + cfg.string() + " --seed 9 --set solve.K=3 --out " + o3.string()), 0);
    const json r = json::parse(slurp(o3 / "report.json"));
    EXPECT_EQ(r["seed"], 9);
    EXPECT_EQ(r["values"]["K"], 3);
    EXPECT_NE(slurp(o1 / "assignments.csv"), slurp(o3 / "assignments.csv"));
}

TEST(Run, OracleMethodsAgreeOnConcaveUtility) {
    json c = json::parse(R"({
      "problem": {
        "prior": {"type": "tabulated", "points": [[-1.0], [0.2], [0.7], [1.5], [2.0]]},
        "utility": {"type": "quadratic", "H": [[-1]]}
      },
      "sampling": {"particles": 5},
      "oracle": {"method": "exhaustive", "K": 3}
    })");
    const auto cfg = write_config("oracle", c);
    const auto o1 = scratch("oracle1"), o2 = scratch("oracle2");
    ASSERT_EQ(run_exe("oracle --config " + cfg.string() + " --out " + o1.string()), 0);
    ASSERT_EQ(run_exe("oracle --config " + cfg.string() + " --set oracle.method=dualLP --out " + o2.string()), 0);
    const double ex = json::parse(slurp(o1 / "report.json"))["values"]["bestValue"];
    const double lp = json::parse(slurp(o2 / "report.json"))["values"]["bestValue"];
    EXPECT_NEAR(ex, -0.68 * 0.68, 1e-9);
    EXPECT_NEAR(lp, ex, 1e-9);
    EXPECT_TRUE(fs::exists(o2 / "majorant.csv"));
}

TEST(Run, ProjectAndClosedFormHyperplane) {
    json c = product_config(2000);
    c["sampling"]["mode"] = "grid";
    c["project"] = json::parse(R"({"manifold": {"type": "hyperplane", "A": [[0.5, 0.5], [0.5, 0.5]]}})");
    c["closedForm"] = json{{"kind", "hyperplane"}};
    const auto cfg = write_config("proj", c);
    const auto o1 = scratch("proj1"), o2 = scratch("proj2");
    ASSERT_EQ(run_exe("project --config " + cfg.string() + " --out " + o1.string()), 0);
    ASSERT_EQ(run_exe("closed-form --config " + cfg.string() + " --out " + o2.string()), 0);
    const double v1 = json::parse(slurp(o1 / "report.json"))["values"]["value"];
    const double v2 = json::parse(slurp(o2 / "report.json"))["values"]["value"];
    EXPECT_NEAR(v1, 0.5, 0.02);
    EXPECT_NEAR(v1, v2, 1e-6);
    EXPECT_TRUE(fs::exists(o1 / "manifold.csv"));
}

TEST(Run, PoolsMultiTypeReportsEntry) {
    json c = product_config(100);
    c["pools"] = json::parse(R"({"variant": "multiType", "kappa1": [[-1, -1], [0.5, -0.2]], "Gprime": [[1, 1], [1, 1]]})");
    const auto cfg = write_config("pools", c);
    const auto out = scratch("pools_out");
    ASSERT_EQ(run_exe("pools --config " + cfg.string() + " --out " + out.string()), 0);
    const json d = json::parse(slurp(out / "diagnostics.json"));
    ASSERT_EQ(d.size(), 1u);
    EXPECT_EQ(d[0]["checkName"], "multi_type_slope");
    EXPECT_FALSE(d[0]["pass"].get<bool>());
    EXPECT_NEAR(d[0]["worstViolation"].get<double>(), 1.2, 1e-12);
}
