#pragma once

#include <charconv>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "diagnostics.hpp"
#include "linearized.hpp"
#include "manifold.hpp"
#include "oracle.hpp"
#include "parallel.hpp"
#include "partition.hpp"

namespace persuasion::cli {

using json = nlohmann::json;

inline constexpr const char* kToolVersion = "persuade 0.1.0";

enum ExitCode : int { kOk = 0, kInvalidConfig = 2, kNotConverged = 3, kCertificateFailed = 4 };

inline const std::vector<std::string>& commands() {
    static const std::vector<std::string> c{"solve", "project", "verify", "closed-form", "linearize", "oracle", "pools"};
    return c;
}

// config block holding a command's parameters
inline std::string block_name(const std::string& command) {
    if (command == "closed-form") return "closedForm";
    return command;
}

// ---------- parsing helpers ----------

namespace detail {

inline const json& need(const json& j, const char* key, const std::string& where) {
    if (!j.is_object() || !j.contains(key)) throw ConfigurationError(where + ": missing '" + key + "'");
    return j.at(key);
}

inline double number(const json& j, const std::string& what) {
    if (!j.is_number()) throw ConfigurationError(what + " must be a number");
    const double v = j.get<double>();
    if (!std::isfinite(v)) throw ConfigurationError(what + " must be finite");
    return v;
}

inline double number_or(const json& j, const char* key, double def, const std::string& where) {
    return j.is_object() && j.contains(key) ? number(j.at(key), where + "." + key) : def;
}

inline long long integer_or(const json& j, const char* key, long long def, const std::string& where) {
    if (!j.is_object() || !j.contains(key)) return def;
    const auto& v = j.at(key);
    if (!v.is_number_integer() && !(v.is_number() && std::floor(v.get<double>()) == v.get<double>()))
        throw ConfigurationError(where + "." + key + " must be an integer");
    return v.is_number_integer() ? v.get<long long>() : static_cast<long long>(v.get<double>());
}

inline long long positive_int(const json& j, const char* key, long long def, const std::string& where) {
    const long long v = integer_or(j, key, def, where);
    if (v < 1) throw ConfigurationError(where + "." + key + " must be positive");
    return v;
}

inline double positive_or(const json& j, const char* key, double def, const std::string& where) {
    const double v = number_or(j, key, def, where);
    if (!(v > 0.0)) throw ConfigurationError(where + "." + key + " must be positive");
    return v;
}

inline std::string string_or(const json& j, const char* key, const std::string& def, const std::string& where) {
    if (!j.is_object() || !j.contains(key)) return def;
    if (!j.at(key).is_string()) throw ConfigurationError(where + "." + key + " must be a string");
    return j.at(key).get<std::string>();
}

inline Vec vec_of(const json& j, const std::string& what) {
    if (!j.is_array()) throw ConfigurationError(what + " must be an array");
    Vec v(static_cast<Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Index>(i)] = number(j[i], what);
    return v;
}

// nested arrays, row-major
inline Mat mat_of(const json& j, const std::string& what) {
    if (!j.is_array() || j.empty()) throw ConfigurationError(what + " must be a nonempty array of rows");
    const std::size_t r = j.size();
    if (!j[0].is_array()) throw ConfigurationError(what + " rows must be arrays");
    const std::size_t c = j[0].size();
    Mat m(static_cast<Index>(r), static_cast<Index>(c));
    for (std::size_t i = 0; i < r; ++i) {
        if (!j[i].is_array() || j[i].size() != c) throw ConfigurationError(what + " rows differ in length");
        for (std::size_t k = 0; k < c; ++k) m(static_cast<Index>(i), static_cast<Index>(k)) = number(j[i][k], what);
    }
    return m;
}

inline std::vector<double> std_vec(const json& j, const std::string& what) {
    const Vec v = vec_of(j, what);
    return std::vector<double>(v.data(), v.data() + v.size());
}

inline std::string type_of(const json& j, const std::string& where) {
    if (j.is_string()) return j.get<std::string>();
    return need(j, "type", where).get<std::string>();
}

}  // namespace detail

inline ScalarCurve curve_from_json(const json& j, const std::string& where) {
    using namespace detail;
    if (j.is_number()) return ScalarCurve::constant(number(j, where));
    const std::string t = type_of(j, where);
    if (t == "identity") return ScalarCurve::identity();
    if (t == "polynomial") return ScalarCurve::polynomial(std_vec(need(j, "coeffs", where), where + ".coeffs"));
    if (t == "constant") return ScalarCurve::constant(number(need(j, "value", where), where + ".value"));
    if (t == "exponential")
        return ScalarCurve::exponential(number(need(j, "a", where), where + ".a"), number(need(j, "b", where), where + ".b"),
                                        number_or(j, "c", 0.0, where));
    if (t == "logistic")
        return ScalarCurve::logistic(number(need(j, "height", where), where + ".height"),
                                     number(need(j, "slope", where), where + ".slope"),
                                     number(need(j, "mid", where), where + ".mid"));
    if (t == "tabulated")
        return ScalarCurve::tabulated(std_vec(need(j, "x", where), where + ".x"), std_vec(need(j, "y", where), where + ".y"));
    if (t == "csv") return ScalarCurve::from_csv(need(j, "path", where).get<std::string>());
    throw ConfigurationError(where + ": unknown curve type '" + t + "'");
}

inline std::vector<ScalarCurve> curves_from_json(const json& j, const std::string& where) {
    if (!j.is_array() || j.empty()) throw ConfigurationError(where + " must be a nonempty array of curves");
    std::vector<ScalarCurve> out;
    for (std::size_t i = 0; i < j.size(); ++i) out.push_back(curve_from_json(j[i], where + "[" + std::to_string(i) + "]"));
    return out;
}

inline GaussianPrior gaussian_from_json(const json& j, const std::string& where) {
    using namespace detail;
    return GaussianPrior{vec_of(need(j, "mean", where), where + ".mean"),
                         mat_of(need(j, "covariance", where), where + ".covariance")};
}

inline PriorSpec prior_from_json(const json& j) {
    using namespace detail;
    const std::string w = "problem.prior";
    const std::string t = type_of(j, w);
    if (t == "gaussian") return gaussian_from_json(j, w);
    if (t == "uniformBox") return UniformBoxPrior{vec_of(need(j, "lo", w), w + ".lo"), vec_of(need(j, "hi", w), w + ".hi")};
    if (t == "mixture") {
        MixturePrior m;
        m.weights = std_vec(need(j, "weights", w), w + ".weights");
        const auto& comps = need(j, "components", w);
        if (!comps.is_array()) throw ConfigurationError(w + ".components must be an array");
        for (std::size_t i = 0; i < comps.size(); ++i)
            m.components.push_back(gaussian_from_json(comps[i], w + ".components[" + std::to_string(i) + "]"));
        return m;
    }
    if (t == "tabulated") {
        // one row per state
        const Mat rows = mat_of(need(j, "points", w), w + ".points");
        Vec wt = j.contains("weights") ? vec_of(j.at("weights"), w + ".weights") : Vec::Constant(rows.rows(), 1.0 / static_cast<double>(rows.rows()));
        return TabulatedPrior{rows.transpose(), std::move(wt)};
    }
    throw ConfigurationError(w + ": unknown prior type '" + t + "'");
}

inline MomentMapSpec map_from_json(const json& j) {
    using namespace detail;
    const std::string w = "problem.momentMap";
    const std::string t = type_of(j, w);
    if (t == "identity") return IdentityMap{};
    if (t == "linear") {
        const Mat B = mat_of(need(j, "B", w), w + ".B");
        return make_linear_map(B, j.contains("offset") ? vec_of(j.at("offset"), w + ".offset") : Vec());
    }
    if (t == "radialScaled") return RadialScaledMap{curve_from_json(need(j, "psi", w), w + ".psi")};
    if (t == "componentwisePoly") {
        ComponentwisePolyMap m;
        const auto& c = need(j, "coeffs", w);
        if (!c.is_array()) throw ConfigurationError(w + ".coeffs must be an array of arrays");
        for (std::size_t i = 0; i < c.size(); ++i) m.coeffs.push_back(std_vec(c[i], w + ".coeffs"));
        return m;
    }
    throw ConfigurationError(w + ": unknown moment map type '" + t + "'");
}

inline UtilitySpec utility_from_json(const json& j) {
    using namespace detail;
    const std::string w = "problem.utility";
    const std::string t = type_of(j, w);
    if (t == "quadratic") {
        const Mat H = mat_of(need(j, "H", w), w + ".H");
        return make_quadratic(H, j.contains("h") ? vec_of(j.at("h"), w + ".h") : Vec());
    }
    if (t == "productAcceptance") return ProductAcceptanceUtility{curves_from_json(need(j, "G", w), w + ".G")};
    if (t == "multiProduct") return MultiProductUtility{curves_from_json(need(j, "G", w), w + ".G")};
    if (t == "radial") return make_radial(mat_of(need(j, "H", w), w + ".H"), curve_from_json(need(j, "phi", w), w + ".phi"));
    throw ConfigurationError(w + ": unknown utility type '" + t + "' (custom utilities are not configurable)");
}

inline ReceiverSpec receiver_from_json(const json& j) {
    using namespace detail;
    const std::string w = "problem.receiver";
    const std::string t = type_of(j, w);
    if (t == "moment") return MomentReceiver{};
    if (t == "cubic")
        return cubic_receiver(mat_of(need(j, "B", w), w + ".B"), j.contains("offset") ? vec_of(j.at("offset"), w + ".offset") : Vec(),
                              number_or(j, "kappa", 1.0, w), number_or(j, "lambda", 1.0, w), number_or(j, "epsilon", 1.0, w));
    throw ConfigurationError(w + ": unknown receiver type '" + t + "'");
}

inline ManifoldSpec manifold_from_json(const json& j, const std::string& w) {
    using namespace detail;
    const std::string t = type_of(j, w);
    ManifoldSpec m;
    if (t == "hyperplane")
        m = make_hyperplane(mat_of(need(j, "A", w), w + ".A"), j.contains("offset") ? vec_of(j.at("offset"), w + ".offset") : Vec());
    else if (t == "sphere")
        m = SphereManifold{vec_of(need(j, "center", w), w + ".center"), number(need(j, "radius", w), w + ".radius")};
    else if (t == "graph1d")
        m = Graph1DManifold{vec_of(need(j, "theta", w), w + ".theta"), vec_of(need(j, "phi", w), w + ".phi")};
    else if (t == "pointCloud")
        m = PointCloudManifold{mat_of(need(j, "points", w), w + ".points").transpose()};
    else
        throw ConfigurationError(w + ": unknown manifold type '" + t + "'");
    validate_manifold(m);
    return m;
}

inline ProblemSpec problem_from_json(const json& j) {
    using namespace detail;
    if (!j.is_object()) throw ConfigurationError("'problem' must be an object");
    ProblemSpec p;
    p.prior = prior_from_json(need(j, "prior", "problem"));
    p.stateDim = prior_dim(p.prior);
    p.momentMap = j.contains("momentMap") ? map_from_json(j.at("momentMap")) : MomentMapSpec{IdentityMap{}};
    p.utility = utility_from_json(need(j, "utility", "problem"));
    p.actionDim = utility_dim(p.utility);
    p.receiver = j.contains("receiver") ? receiver_from_json(j.at("receiver")) : ReceiverSpec{MomentReceiver{}};
    p.stateDim = integer_or(j, "stateDim", p.stateDim, "problem");
    p.actionDim = integer_or(j, "actionDim", p.actionDim, "problem");
    validate_problem(p);
    return p;
}

// --set a.b.c=value; value parsed as JSON when it parses, else kept as a string
inline void apply_override(json& cfg, const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigurationError("override '" + kv + "' must look like key=value");
    const std::string key = kv.substr(0, eq), raw = kv.substr(eq + 1);
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;
    json* node = &cfg;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) throw ConfigurationError("override key '" + key + "' has an empty component");
        if (node->is_null()) *node = json::object();
        json* next = nullptr;
        if (node->is_array()) {
            std::size_t idx = 0;
            try {
                idx = std::stoul(part);
            } catch (...) {
                throw ConfigurationError("override key '" + key + "' indexes an array with '" + part + "'");
            }
            if (idx >= node->size()) throw ConfigurationError("override key '" + key + "' index out of range");
            next = &(*node)[idx];
        } else if (node->is_object()) {
            next = &(*node)[part];
        } else {
            throw ConfigurationError("override key '" + key + "' descends into a scalar");
        }
        if (dot == std::string::npos) {
            *next = std::move(value);
            return;
        }
        node = next;
        start = dot + 1;
    }
}

// FNV-1a over the canonical dump
inline std::string config_hash(const json& cfg) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : cfg.dump()) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

struct RunConfig {
    json raw;
    std::string command;
    json block;
    ProblemSpec problem;
    Index particles = 0;
    std::uint64_t seed = 0;
    CloudMode mode = CloudMode::Sample;
};

inline RunConfig parse_config(json cfg, const std::string& command, const std::vector<std::string>& overrides,
                              std::optional<std::uint64_t> seed) {
    using namespace detail;
    if (std::find(commands().begin(), commands().end(), command) == commands().end())
        throw ConfigurationError("unknown command '" + command + "'");
    if (!cfg.is_object()) throw ConfigurationError("config must be a JSON object");
    for (const auto& o : overrides) apply_override(cfg, o);
    if (seed) cfg["sampling"]["seed"] = *seed;
    if (cfg.contains("command") && cfg.at("command") != command)
        throw ConfigurationError("config names command '" + cfg.at("command").dump() + "' but '" + command + "' was requested");

    RunConfig rc;
    rc.command = command;
    rc.problem = problem_from_json(need(cfg, "problem", "config"));
    const json& s = cfg.contains("sampling") ? cfg.at("sampling") : json::object();
    rc.particles = positive_int(s, "particles", 10000, "sampling");
    const long long sd = integer_or(s, "seed", 0, "sampling");
    if (sd < 0) throw ConfigurationError("sampling.seed must be nonnegative");
    rc.seed = static_cast<std::uint64_t>(sd);
    const std::string mode = string_or(s, "mode", "sample", "sampling");
    if (mode == "sample") rc.mode = CloudMode::Sample;
    else if (mode == "grid") rc.mode = CloudMode::Grid;
    else throw ConfigurationError("sampling.mode must be 'sample' or 'grid'");
    const std::string bn = block_name(command);
    rc.block = cfg.contains(bn) ? cfg.at(bn) : json::object();
    if (!rc.block.is_object()) throw ConfigurationError("'" + bn + "' must be an object");
    rc.raw = std::move(cfg);
    return rc;
}

inline json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigurationError("cannot open config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    json j = json::parse(ss.str(), nullptr, false);
    if (j.is_discarded()) throw ConfigurationError("config " + path + " is not valid JSON");
    return j;
}

// ---------- artifacts ----------

inline std::string fmt(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

inline std::string csv_header() { return std::string("# ") + kToolVersion + "\n"; }

inline std::string assignments_csv(const ParticleCloud& cloud, const std::vector<int>& labels, const Mat& actions) {
    std::string s = csv_header() + "label";
    for (Index l = 0; l < cloud.dim(); ++l) s += ",omega_" + std::to_string(l + 1);
    for (Index m = 0; m < actions.rows(); ++m) s += ",action_" + std::to_string(m + 1);
    s += '\n';
    for (Index i = 0; i < cloud.size(); ++i) {
        s += std::to_string(labels[static_cast<std::size_t>(i)] + 1);
        for (Index l = 0; l < cloud.dim(); ++l) s += ',' + fmt(cloud.points(l, i));
        for (Index m = 0; m < actions.rows(); ++m) s += ',' + fmt(actions(m, i));
        s += '\n';
    }
    return s;
}

inline std::string manifold_csv(const ManifoldSpec& m) {
    std::string s = csv_header();
    struct V {
        std::string& s;
        void row(const Vec& v) const {
            for (Index i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt(v[i]);
            s += '\n';
        }
        void operator()(const HyperplaneManifold& h) const {
            s += "kind,row";
            for (Index j = 0; j < h.A.cols(); ++j) s += ",c" + std::to_string(j + 1);
            s += '\n';
            for (Index i = 0; i < h.A.rows(); ++i) {
                s += "A," + std::to_string(i + 1) + ',';
                row(h.A.row(i).transpose());
            }
            s += "offset,0,";
            row(h.offset);
        }
        void operator()(const SphereManifold& sp) const {
            s += "radius";
            for (Index j = 0; j < sp.center.size(); ++j) s += ",center_" + std::to_string(j + 1);
            s += '\n' + fmt(sp.radius);
            for (Index j = 0; j < sp.center.size(); ++j) s += ',' + fmt(sp.center[j]);
            s += '\n';
        }
        void operator()(const Graph1DManifold& g) const {
            s += "theta,a1,a2\n";
            for (Index k = 0; k < g.theta.size(); ++k) s += fmt(g.theta[k]) + ',' + fmt(g.phi[k]) + ',' + fmt(g.theta[k]) + '\n';
        }
        void operator()(const PointCloudManifold& p) const {
            for (Index j = 0; j < p.points.rows(); ++j) s += (j ? ",a" : "a") + std::to_string(j + 1);
            s += '\n';
            for (Index k = 0; k < p.points.cols(); ++k) row(p.points.col(k));
        }
    };
    std::visit(V{s}, m);
    return s;
}

inline json vec_json(const Vec& v) {
    json a = json::array();
    for (Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

inline json mat_json(const Mat& m) {
    json a = json::array();
    for (Index i = 0; i < m.rows(); ++i) a.push_back(vec_json(m.row(i).transpose()));
    return a;
}

inline json entry_json(const DiagnosticsEntry& e) {
    return json{{"checkName", e.checkName}, {"pass", e.pass},          {"worstViolation", e.worstViolation},
                {"worstLocation", vec_json(e.worstLocation)}, {"tolerance", e.tolerance}, {"samplesUsed", e.samplesUsed}};
}

inline json diagnostics_json(const std::vector<DiagnosticsEntry>& d) {
    json a = json::array();
    for (const auto& e : d) a.push_back(entry_json(e));
    return a;
}

struct RunOutput {
    int exitCode = kOk;
    json values = json::object();
    json converged = json::object();
    json details = json::object();
    std::vector<std::string> warnings;
    std::optional<std::string> assignments;
    std::optional<std::string> manifold;
    std::map<std::string, std::string> extraFiles;
    std::vector<DiagnosticsEntry> diagnostics;
};

// ---------- commands ----------

namespace detail {

inline Mat state_actions(const PartitionState& s, Index M) {
    Mat A(M, static_cast<Index>(s.labels.size()));
    for (std::size_t i = 0; i < s.labels.size(); ++i) A.col(static_cast<Index>(i)) = s.actions[static_cast<std::size_t>(s.labels[i])];
    return A;
}

inline double tol_for(const json& block, const std::string& check, double def) {
    if (!block.contains("tolerances")) return def;
    const auto& t = block.at("tolerances");
    if (!t.is_object()) throw ConfigurationError("tolerances must be an object");
    return t.contains(check) ? positive_or(t, check.c_str(), def, "tolerances") : def;
}

inline bool wants(const json& block, const std::string& check) {
    if (!block.contains("checks")) return true;
    const auto& c = block.at("checks");
    if (!c.is_array()) throw ConfigurationError("checks must be an array of names");
    for (const auto& x : c)
        if (x.is_string() && x.get<std::string>() == check) return true;
    return false;
}

inline void check_names(const json& block, const std::vector<std::string>& known) {
    if (!block.contains("checks")) return;
    for (const auto& x : block.at("checks")) {
        if (!x.is_string() || std::find(known.begin(), known.end(), x.get<std::string>()) == known.end())
            throw ConfigurationError("unknown check " + x.dump());
    }
}

struct SolveParams {
    Index K;
    int restarts;
    double tol;
    int maxIter;
};

inline SolveParams solve_params(const json& b, const std::string& where) {
    return SolveParams{static_cast<Index>(positive_int(b, "K", 8, where)), static_cast<int>(positive_int(b, "restarts", 8, where)),
                       positive_or(b, "tol", 1e-9, where), static_cast<int>(positive_int(b, "maxIter", 500, where))};
}

inline void add_state_certificates(const ProblemSpec& p, const ParticleCloud& cloud, const PartitionState& s, const json& block,
                                   std::uint64_t seed, std::vector<DiagnosticsEntry>& out) {
    if (wants(block, "transport")) {
        const auto te = transport_entries(p, cloud, s, tol_for(block, "transport", kDefaultCertificateTol));
        out.push_back(te.negativeCost);
        out.push_back(te.bestSignal);
    }
    if (p.is_moment()) {
        if (wants(block, "pool_inequality"))
            out.push_back(pool_inequality(p, cloud, s, static_cast<Index>(positive_int(block, "pairs", 1000, "verify")), 11, seed,
                                          tol_for(block, "pool_inequality", kDefaultCertificateTol)));
        if (wants(block, "total_expectation")) out.push_back(total_expectation(p, cloud, s, tol_for(block, "total_expectation", 1e-8)));
        if (wants(block, "pool_dimension")) out.push_back(pool_dimension(p, cloud, s));
    }
    if (wants(block, "value_monotonicity")) out.push_back(value_monotonicity(s, tol_for(block, "value_monotonicity", 1e-9)));
}

inline void add_policy_certificates(const ProblemSpec& p, const ParticleCloud& cloud, const ManifoldSpec& m, const Mat& actions,
                                    const json& block, std::uint64_t seed, std::vector<DiagnosticsEntry>& out) {
    const Mat G = eval_g_all(p.momentMap, cloud.points);
    if (wants(block, "maximality")) {
        const Mat T = hull_test_set(G, static_cast<Index>(positive_int(block, "hullPairs", 10000, "verify")), seed);
        out.push_back(verify_maximality(p.utility, m, T, tol_for(block, "maximality", kDefaultCertificateTol)));
    }
    if (wants(block, "ce_residual")) {
        const Index bins = static_cast<Index>(positive_int(block, "bins", 64, "verify"));
        const auto* sp = std::get_if<SphereManifold>(&m);
        if (sp && actions.rows() == 2)
            out.push_back(ce_residual_buckets(p, cloud, actions, angular_labels(actions, bins, sp->center),
                                              tol_for(block, "ce_residual", 0.02)));
        else
            out.push_back(ce_residual(p, cloud, actions, bins, tol_for(block, "ce_residual", 0.02)));
    }
    if (wants(block, "transport")) {
        const auto te = transport_entries(p, cloud, actions, tol_for(block, "transport", kDefaultCertificateTol));
        out.push_back(te.negativeCost);
        out.push_back(te.bestSignal);
    }
    if (wants(block, "monotonicity")) {
        const Mat T = hull_test_set(G, 0, seed);
        out.push_back(verify_monotonicity(p.utility, T, tol_for(block, "monotonicity", kDefaultCertificateTol)));
    }
}

inline void fill_state(RunOutput& o, const ParticleCloud& cloud, const PartitionState& s, Index M) {
    o.values["value"] = s.value;
    o.values["activeCells"] = s.active_count();
    o.values["iterations"] = s.iterations;
    o.converged["partition"] = s.converged;
    o.warnings.insert(o.warnings.end(), s.warnings.begin(), s.warnings.end());
    o.assignments = assignments_csv(cloud, s.labels, state_actions(s, M));
}

inline PartitionState run_solve(const RunConfig& rc, const ParticleCloud& cloud, const SolveParams& sp, RunOutput& o) {
    try {
        return optimize_partition(rc.problem, cloud, sp.K, sp.restarts, sp.tol, sp.maxIter, rc.seed);
    } catch (const PartitionSolverError& e) {
        o.values["value"] = e.best().value;
        o.converged["partition"] = false;
        throw;
    }
}

inline RunOutput cmd_solve(const RunConfig& rc, const ParticleCloud& cloud) {
    RunOutput o;
    const auto sp = solve_params(rc.block, "solve");
    const auto s = run_solve(rc, cloud, sp, o);
    fill_state(o, cloud, s, rc.problem.actionDim);
    o.values["K"] = sp.K;
    add_state_certificates(rc.problem, cloud, s, json::object(), rc.seed, o.diagnostics);
    return o;
}

inline RunOutput policy_output(const RunConfig& rc, const ParticleCloud& cloud, const ManifoldSpec& m,
                               const Mat* given = nullptr) {
    RunOutput o;
    const Mat A = given ? *given : apply_policy(rc.problem, m, cloud);
    o.values["value"] = policy_value(rc.problem, cloud, A);
    const auto labels = pools_from_actions(A);
    o.values["pools"] = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
    o.assignments = assignments_csv(cloud, labels, A);
    o.manifold = manifold_csv(m);
    return o;
}

inline RunOutput cmd_project(const RunConfig& rc, const ParticleCloud& cloud) {
    if (!rc.block.contains("manifold")) throw ConfigurationError("project: missing 'manifold'");
    const auto m = manifold_from_json(rc.block.at("manifold"), "project.manifold");
    auto o = policy_output(rc, cloud, m);
    o.converged["projection"] = true;
    return o;
}

inline RunOutput cmd_verify(const RunConfig& rc, const ParticleCloud& cloud) {
    check_names(rc.block, {"maximality", "ce_residual", "transport", "monotonicity", "pool_inequality", "total_expectation",
                           "pool_dimension", "value_monotonicity"});
    RunOutput o;
    if (rc.block.contains("manifold")) {
        const auto m = manifold_from_json(rc.block.at("manifold"), "verify.manifold");
        o = policy_output(rc, cloud, m);
        add_policy_certificates(rc.problem, cloud, m, apply_policy(rc.problem, m, cloud), rc.block, rc.seed, o.diagnostics);
    } else {
        const auto sp = solve_params(rc.block, "verify");
        const auto s = run_solve(rc, cloud, sp, o);
        fill_state(o, cloud, s, rc.problem.actionDim);
        add_state_certificates(rc.problem, cloud, s, rc.block, rc.seed, o.diagnostics);
    }
    bool all = true;
    for (const auto& e : o.diagnostics) all = all && e.pass;
    o.values["allPass"] = all;
    if (!all) o.exitCode = kCertificateFailed;
    return o;
}

inline RunOutput cmd_closed_form(const RunConfig& rc, const ParticleCloud& cloud) {
    const auto& p = rc.problem;
    if (!p.is_moment()) throw PreconditionError("closed-form policies need a moment receiver");
    const std::string kind = string_or(rc.block, "kind", "", "closedForm");
    const Mat G = eval_g_all(p.momentMap, cloud.points);
    const Vec mean = G * cloud.weights;
    const Mat C = G.colwise() - mean;
    const Mat Sigma = symmetrize(C * cloud.weights.asDiagonal() * C.transpose());
    ManifoldSpec m;
    std::optional<Mat> actions;
    json details;
    bool converged = true;
    std::vector<std::string> warnings;
    if (kind == "hyperplane") {
        const auto* q = std::get_if<QuadraticUtility>(&p.utility);
        if (!q) throw ConfigurationError("hyperplane policy needs a quadratic utility");
        const auto h = hyperplane_policy(q->H, Sigma, mean);
        m = h.manifold;
        details["A"] = mat_json(h.A);
    } else if (kind == "sphere") {
        const auto s = sphere_policy(cloud, p.utility, p.momentMap);
        m = s.manifold;
        actions = sphere_actions(s, p.momentMap, cloud);
        details["beta"] = s.beta;
        details["conditionHolds"] = s.conditionHolds;
        details["worstSlack"] = s.worstSlack;
        details["phiPrime"] = s.phiPrime;
        if (!s.conditionHolds) warnings.push_back("tangent condition for the sphere policy does not hold");
    } else if (kind == "curve") {
        CurveOptions co;
        co.nodes = static_cast<Index>(positive_int(rc.block, "nodes", co.nodes, "closedForm"));
        co.tol = positive_or(rc.block, "tol", co.tol, "closedForm");
        co.maxIter = static_cast<int>(positive_int(rc.block, "maxIter", co.maxIter, "closedForm"));
        const auto r = solve_curve_2d(p, cloud, co);
        m = r.manifold;
        converged = r.converged;
        details["residual"] = r.residual;
        details["iterations"] = r.iterations;
        warnings.insert(warnings.end(), r.warnings.begin(), r.warnings.end());
    } else {
        throw ConfigurationError("closedForm.kind must be hyperplane, sphere or curve");
    }
    if (!actions) actions = apply_policy(p, m, cloud);
    auto o = policy_output(rc, cloud, m, &*actions);
    o.details = std::move(details);
    o.details["kind"] = kind;
    o.converged["closedForm"] = converged;
    o.warnings.insert(o.warnings.end(), warnings.begin(), warnings.end());
    json checks = json::object();
    checks["checks"] = json::array({"maximality", "ce_residual"});
    add_policy_certificates(p, cloud, m, *actions, checks, rc.seed, o.diagnostics);
    if (!converged) o.exitCode = kNotConverged;
    return o;
}

inline RunOutput cmd_linearize(const RunConfig& rc, const ParticleCloud& cloud) {
    const double eps = positive_or(rc.block, "epsilon", 0.05, "linearize");
    const Index K = static_cast<Index>(positive_int(rc.block, "K", 4, "linearize"));
    const int restarts = static_cast<int>(positive_int(rc.block, "restarts", 8, "linearize"));
    const auto ir = info_relevance(rc.problem);
    LimitPartitionOptions lo;
    lo.seed = rc.seed;
    lo.maxIter = static_cast<int>(positive_int(rc.block, "maxIter", lo.maxIter, "linearize"));
    const auto s = solve_limit_partition(ir, cloud, K, restarts, positive_or(rc.block, "tol", 1e-9, "linearize"), lo);
    RunOutput o;
    Mat A(rc.problem.actionDim, cloud.size());
    std::vector<Vec> first(static_cast<std::size_t>(s.K));
    for (Index k = 0; k < s.K; ++k)
        if (s.active(k)) first[static_cast<std::size_t>(k)] = first_order_action(ir, s.actions[static_cast<std::size_t>(k)], eps);
    for (Index i = 0; i < cloud.size(); ++i) A.col(i) = first[static_cast<std::size_t>(s.labels[static_cast<std::size_t>(i)])];
    o.values["surrogateValue"] = s.value;
    o.values["activeCells"] = s.active_count();
    o.values["halfspaceViolations"] = halfspace_violations(ir, cloud, s);
    o.converged["limitPartition"] = s.converged;
    o.details["epsilon"] = eps;
    o.details["steadyAction"] = vec_json(ir.steadyAction);
    o.details["Dmat"] = mat_json(ir.Dmat);
    o.details["Gmat"] = mat_json(ir.Gmat);
    o.details["degenerate"] = ir.degenerate;
    o.warnings = ir.warnings;
    o.warnings.insert(o.warnings.end(), s.warnings.begin(), s.warnings.end());
    o.assignments = assignments_csv(cloud, s.labels, A);
    if (!s.converged) o.exitCode = kNotConverged;
    return o;
}

// 1-D moment problem collapsed to its distinct g-values
inline RunOutput dual_lp(const RunConfig& rc, const ParticleCloud& cloud) {
    const auto& p = rc.problem;
    if (!p.is_moment() || p.actionDim != 1) throw PreconditionError("dualLP needs a 1-D moment problem");
    const Mat G = eval_g_all(p.momentMap, cloud.points);
    std::map<double, double> mass;
    for (Index i = 0; i < cloud.size(); ++i) mass[G(0, i)] += cloud.weights[i];
    Vec x(static_cast<Index>(mass.size())), w(x.size()), Wv(x.size());
    Index j = 0;
    for (const auto& [g, m] : mass) {
        x[j] = g;
        w[j] = m;
        Wv[j] = W_value(p.utility, Vec::Constant(1, g));
        ++j;
    }
    MajorantOptions mo;
    if (!(rc.block.contains("gridOnly") && rc.block.at("gridOnly").get<bool>()))
        mo.W = [&p](double t) { return W_value(p.utility, Vec::Constant(1, t)); };
    const auto r = convex_majorant_1d(x, w, Wv, mo);
    RunOutput o;
    o.values["bestValue"] = r.value;
    o.values["lowerBound"] = r.lower;
    o.values["enumeratedCount"] = x.size();
    o.details["method"] = "dualLP";
    o.converged["oracle"] = true;
    std::string s = csv_header() + "x,weight,W,p\n";
    for (Index i = 0; i < x.size(); ++i) s += fmt(x[i]) + ',' + fmt(w[i]) + ',' + fmt(Wv[i]) + ',' + fmt(r.nodes[i]) + '\n';
    o.extraFiles["majorant.csv"] = s;
    return o;
}

inline RunOutput cmd_oracle(const RunConfig& rc, const ParticleCloud& cloud) {
    const std::string method = string_or(rc.block, "method", "exhaustive", "oracle");
    if (method == "dualLP") return dual_lp(rc, cloud);
    if (method != "exhaustive") throw ConfigurationError("oracle.method must be exhaustive or dualLP");
    const Index K = static_cast<Index>(positive_int(rc.block, "K", 2, "oracle"));
    const auto r = enumerate_partitions(rc.problem, cloud, K);
    RunOutput o;
    o.values["bestValue"] = r.bestValue;
    o.values["enumeratedCount"] = r.enumeratedCount;
    o.details["method"] = r.method;
    o.converged["oracle"] = true;
    PartitionContext ctx(rc.problem, cloud);
    const auto s = consistent_state(ctx, r.bestLabels, K);
    o.assignments = assignments_csv(cloud, r.bestLabels, state_actions(s, rc.problem.actionDim));
    return o;
}

inline RunOutput cmd_pools(const RunConfig& rc, const ParticleCloud& cloud) {
    const std::string variant = string_or(rc.block, "variant", "", "pools");
    const double tol = positive_or(rc.block, "tol", variant == "single" ? 1e-3 : kDefaultCertificateTol, "pools");
    RunOutput o;
    o.details["variant"] = variant;
    std::string table = csv_header();
    if (variant == "single") {
        const auto* pa = std::get_if<ProductAcceptanceUtility>(&rc.problem.utility);
        if (!pa || pa->G.size() != 1) throw ConfigurationError("single pools need a product-acceptance utility with one curve");
        CurveOptions co;
        co.nodes = static_cast<Index>(positive_int(rc.block, "nodes", co.nodes, "pools"));
        const auto r = solve_curve_2d(rc.problem, cloud, co);
        const auto c = single_pool_coeffs(r.curve.theta, r.curve.phi, pa->G[0], tol);
        o.diagnostics.push_back(c.monotone);
        o.values["nodes"] = c.theta.size();
        o.values["curveResidual"] = r.residual;
        o.converged["curve"] = r.converged;
        o.warnings = r.warnings;
        o.manifold = manifold_csv(r.manifold);
        const Mat A = apply_policy(rc.problem, r.manifold, cloud);
        o.assignments = assignments_csv(cloud, pools_from_actions(A), A);
        table += "theta,kappa1,kappa2\n";
        for (Index i = 0; i < c.theta.size(); ++i) table += fmt(c.theta[i]) + ',' + fmt(c.kappa1[i]) + ',' + fmt(c.kappa2[i]) + '\n';
    } else if (variant == "multiProduct") {
        const auto& jj = need(rc.block, "jacobians", "pools");
        if (!jj.is_array()) throw ConfigurationError("pools.jacobians must be an array of matrices");
        std::vector<Mat> jac;
        for (const auto& m : jj) jac.push_back(mat_of(m, "pools.jacobians"));
        const auto c = multi_product_coeffs(jac, tol);
        o.diagnostics.push_back(c.nsd);
        table += "node,row,values\n";
        for (std::size_t k = 0; k < c.kappa1.size(); ++k)
            for (Index i = 0; i < c.kappa1[k].rows(); ++i) {
                table += std::to_string(k + 1) + ',' + std::to_string(i + 1);
                for (Index q = 0; q < c.kappa1[k].cols(); ++q) table += ',' + fmt(c.kappa1[k](i, q));
                table += '\n';
            }
    } else if (variant == "multiType") {
        const Mat k1 = mat_of(need(rc.block, "kappa1", "pools"), "pools.kappa1");
        const Mat gp = mat_of(need(rc.block, "Gprime", "pools"), "pools.Gprime");
        std::vector<Vec> a, b;
        for (Index t = 0; t < k1.rows(); ++t) a.push_back(k1.row(t).transpose());
        for (Index t = 0; t < gp.rows(); ++t) b.push_back(gp.row(t).transpose());
        const auto c = multi_type_coeffs(a, b, tol);
        o.diagnostics.push_back(c.downward);
        table += "node,slope\n";
        for (Index i = 0; i < c.slope.size(); ++i) table += std::to_string(i + 1) + ',' + fmt(c.slope[i]) + '\n';
    } else {
        throw ConfigurationError("pools.variant must be single, multiType or multiProduct");
    }
    o.extraFiles["pools.csv"] = table;
    o.values["allPass"] = o.diagnostics.back().pass;
    return o;
}

inline void write_file(const std::filesystem::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out << s;
}

}  // namespace detail

struct RunArgs {
    std::string command;
    std::string configPath;
    std::string outDir = ".";
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    std::vector<std::string> overrides;
};

// Returns the process exit code; messages go to err.
inline int run(const RunArgs& args, std::ostream& err = std::cerr) {
    const auto t0 = std::chrono::steady_clock::now();
    RunConfig rc;
    ParticleCloud cloud;
    try {
        if (args.threads) {
            if (*args.threads < 1) throw ConfigurationError("--threads must be positive");
            set_thread_cap(*args.threads);
        }
        rc = parse_config(read_json_file(args.configPath), args.command, args.overrides, args.seed);
        cloud = build_cloud(rc.problem.prior, rc.particles, rc.seed, rc.mode);
    } catch (const std::exception& e) {
        err << "persuade: invalid config: " << e.what() << '\n';
        return kInvalidConfig;
    }

    RunOutput o;
    std::string failure;
    try {
        if (rc.command == "solve") o = detail::cmd_solve(rc, cloud);
        else if (rc.command == "project") o = detail::cmd_project(rc, cloud);
        else if (rc.command == "verify") o = detail::cmd_verify(rc, cloud);
        else if (rc.command == "closed-form") o = detail::cmd_closed_form(rc, cloud);
        else if (rc.command == "linearize") o = detail::cmd_linearize(rc, cloud);
        else if (rc.command == "oracle") o = detail::cmd_oracle(rc, cloud);
        else o = detail::cmd_pools(rc, cloud);
    } catch (const ConfigurationError& e) {
        err << "persuade: invalid config: " << e.what() << '\n';
        return kInvalidConfig;
    } catch (const PreconditionError& e) {
        err << "persuade: invalid config: " << e.what() << '\n';
        return kInvalidConfig;
    } catch (const json::exception& e) {
        err << "persuade: invalid config: " << e.what() << '\n';
        return kInvalidConfig;
    } catch (const std::exception& e) {
        failure = e.what();
        o.exitCode = kNotConverged;
    }

    json report;
    report["tool"] = kToolVersion;
    report["command"] = rc.command;
    report["configHash"] = config_hash(rc.raw);
    report["seed"] = rc.seed;
    report["particles"] = cloud.size();
    report["wallTimeSeconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report["values"] = o.values;
    report["converged"] = o.converged;
    report["details"] = o.details;
    report["warnings"] = o.warnings;
    report["exitCode"] = o.exitCode;
    if (!failure.empty()) report["error"] = failure;

    try {
        const std::filesystem::path out(args.outDir);
        std::filesystem::create_directories(out);
        detail::write_file(out / "report.json", report.dump(2) + "\n");
        if (o.exitCode != kNotConverged || failure.empty()) {
            if (o.assignments) detail::write_file(out / "assignments.csv", *o.assignments);
            if (o.manifold) detail::write_file(out / "manifold.csv", *o.manifold);
            for (const auto& [name, body] : o.extraFiles) detail::write_file(out / name, body);
            detail::write_file(out / "diagnostics.json", diagnostics_json(o.diagnostics).dump(2) + "\n");
        }
    } catch (const std::exception& e) {
        err << "persuade: " << e.what() << '\n';
        return kInvalidConfig;
    }
    if (!failure.empty()) err << "persuade: " << failure << '\n';
    for (const auto& e : o.diagnostics)
        if (!e.pass) err << "persuade: check " << e.checkName << " failed, worst " << e.worstViolation << '\n';
    return o.exitCode;
}

}  // namespace persuasion::cli
