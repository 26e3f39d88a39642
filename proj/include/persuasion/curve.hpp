#pragma once

#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "errors.hpp"

namespace persuasion {

struct CurveValue {
    double v = 0.0;
    double d1 = 0.0;
    double d2 = 0.0;
};

// Scalar function with first and second derivatives.
class ScalarCurve {
public:
    struct Polynomial {
        std::vector<double> c;  // c[0] + c[1] x + ...
    };
    struct Exponential {
        double a, b, c;  // a exp(b x) + c
    };
    struct Logistic {
        double height, slope, mid;  // height / (1 + exp(-slope (x - mid)))
    };
    struct Tabulated {
        std::vector<double> x, y, m;  // m: Fritsch-Carlson node tangents
    };
    struct Custom {
        std::function<CurveValue(double)> fn;
    };

    ScalarCurve() : rep_(Polynomial{{0.0}}) {}

    static ScalarCurve polynomial(std::vector<double> coeffs) {
        if (coeffs.empty()) coeffs.push_back(0.0);
        return ScalarCurve(Polynomial{std::move(coeffs)});
    }
    static ScalarCurve identity() { return polynomial({0.0, 1.0}); }
    static ScalarCurve constant(double c) { return polynomial({c}); }
    static ScalarCurve exponential(double a, double b, double c = 0.0) { return ScalarCurve(Exponential{a, b, c}); }
    static ScalarCurve logistic(double height, double slope, double mid) {
        return ScalarCurve(Logistic{height, slope, mid});
    }
    static ScalarCurve custom(std::function<CurveValue(double)> fn) { return ScalarCurve(Custom{std::move(fn)}); }

    static ScalarCurve tabulated(std::vector<double> xs, std::vector<double> ys) {
        if (xs.size() != ys.size() || xs.size() < 2) throw ConfigurationError("tabulated curve needs >= 2 (x, y) pairs");
        for (std::size_t i = 0; i < xs.size(); ++i) {
            if (!std::isfinite(xs[i]) || !std::isfinite(ys[i])) throw ConfigurationError("tabulated curve has non-finite entries");
            if (i > 0 && !(xs[i] > xs[i - 1])) throw ConfigurationError("tabulated curve x must be strictly increasing");
        }
        const std::size_t n = xs.size();
        std::vector<double> delta(n - 1), m(n);
        for (std::size_t i = 0; i + 1 < n; ++i) delta[i] = (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i]);
        m[0] = delta[0];
        m[n - 1] = delta[n - 2];
        for (std::size_t i = 1; i + 1 < n; ++i) m[i] = (delta[i - 1] * delta[i] <= 0.0) ? 0.0 : 0.5 * (delta[i - 1] + delta[i]);
        for (std::size_t i = 0; i + 1 < n; ++i) {
            if (delta[i] == 0.0) {
                m[i] = 0.0;
                m[i + 1] = 0.0;
                continue;
            }
            const double a = m[i] / delta[i];
            const double b = m[i + 1] / delta[i];
            const double s = a * a + b * b;
            if (s > 9.0) {
                const double t = 3.0 / std::sqrt(s);
                m[i] = t * a * delta[i];
                m[i + 1] = t * b * delta[i];
            }
        }
        return ScalarCurve(Tabulated{std::move(xs), std::move(ys), std::move(m)});
    }

    // two columns x,value; optional header line; strictly increasing x
    static ScalarCurve from_csv(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigurationError("cannot open curve file " + path);
        std::vector<double> xs, ys;
        std::string line;
        bool first = true;
        while (std::getline(in, line)) {
            if (line.empty() || line[0] == '#') continue;
            for (char& ch : line)
                if (ch == ',' || ch == ';' || ch == '\t') ch = ' ';
            std::istringstream ss(line);
            double x, y;
            if (!(ss >> x >> y)) {
                if (first) {
                    first = false;
                    continue;
                }
                throw ConfigurationError("malformed row in curve file " + path + ": " + line);
            }
            first = false;
            xs.push_back(x);
            ys.push_back(y);
        }
        return tabulated(std::move(xs), std::move(ys));
    }

    CurveValue eval(double x) const {
        return std::visit([x](const auto& r) { return evalRep(r, x); }, rep_);
    }
    double operator()(double x) const { return eval(x).v; }
    double d1(double x) const { return eval(x).d1; }
    double d2(double x) const { return eval(x).d2; }

    bool is_tabulated() const { return std::holds_alternative<Tabulated>(rep_); }

private:
    using Rep = std::variant<Polynomial, Exponential, Logistic, Tabulated, Custom>;
    explicit ScalarCurve(Rep r) : rep_(std::move(r)) {}

    static CurveValue evalRep(const Polynomial& p, double x) {
        CurveValue out;
        for (std::size_t k = p.c.size(); k-- > 0;) {
            out.d2 = out.d2 * x + 2.0 * out.d1;
            out.d1 = out.d1 * x + out.v;
            out.v = out.v * x + p.c[k];
        }
        return out;
    }
    static CurveValue evalRep(const Exponential& e, double x) {
        const double ex = std::exp(e.b * x);
        return {e.a * ex + e.c, e.a * e.b * ex, e.a * e.b * e.b * ex};
    }
    static CurveValue evalRep(const Logistic& l, double x) {
        const double s = 1.0 / (1.0 + std::exp(-l.slope * (x - l.mid)));
        const double ds = l.slope * s * (1.0 - s);
        return {l.height * s, l.height * ds, l.height * l.slope * ds * (1.0 - 2.0 * s)};
    }
    static CurveValue evalRep(const Tabulated& t, double x) {
        const std::size_t n = t.x.size();
        if (x <= t.x.front()) return {t.y.front() + t.m.front() * (x - t.x.front()), t.m.front(), 0.0};
        if (x >= t.x.back()) return {t.y.back() + t.m.back() * (x - t.x.back()), t.m.back(), 0.0};
        std::size_t lo = 0, hi = n - 1;
        while (hi - lo > 1) {
            const std::size_t mid = (lo + hi) / 2;
            (t.x[mid] <= x ? lo : hi) = mid;
        }
        const double h = t.x[hi] - t.x[lo];
        const double s = (x - t.x[lo]) / h;
        const double s2 = s * s, s3 = s2 * s;
        const double y0 = t.y[lo], y1 = t.y[hi], m0 = t.m[lo] * h, m1 = t.m[hi] * h;
        const double v = (2 * s3 - 3 * s2 + 1) * y0 + (s3 - 2 * s2 + s) * m0 + (-2 * s3 + 3 * s2) * y1 + (s3 - s2) * m1;
        const double dv = (6 * s2 - 6 * s) * y0 + (3 * s2 - 4 * s + 1) * m0 + (-6 * s2 + 6 * s) * y1 + (3 * s2 - 2 * s) * m1;
        const double ddv = (12 * s - 6) * y0 + (6 * s - 4) * m0 + (-12 * s + 6) * y1 + (6 * s - 2) * m1;
        return {v, dv / h, ddv / (h * h)};
    }
    static CurveValue evalRep(const Custom& c, double x) {
        CurveValue out = c.fn(x);
        if (!std::isfinite(out.v) || !std::isfinite(out.d1) || !std::isfinite(out.d2))
            throw NumericDomainError("custom curve returned a non-finite value");
        return out;
    }

    Rep rep_;
};

}  // namespace persuasion
