#pragma once

#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "assumptions.hpp"
#include "common.hpp"
#include "problem.hpp"

namespace mcss {

/// Parameter bag for builtin problem families. Unknown keys are rejected with
/// a nearest-key suggestion; missing required keys are listed in one error.
struct BuiltinParams {
    std::map<std::string, double> scalars;
    std::map<std::string, std::vector<double>> arrays;
    std::map<std::string, std::string> strings;

    double get(const std::string& key, double fallback) const {
        auto it = scalars.find(key);
        return it == scalars.end() ? fallback : it->second;
    }
    std::vector<double> get(const std::string& key, const std::vector<double>& fallback) const {
        auto it = arrays.find(key);
        return it == arrays.end() ? fallback : it->second;
    }
    std::string get(const std::string& key, const std::string& fallback) const {
        auto it = strings.find(key);
        return it == strings.end() ? fallback : it->second;
    }
    bool has(const std::string& key) const {
        return scalars.count(key) || arrays.count(key) || strings.count(key);
    }
};

inline const std::vector<std::string>& builtin_names() {
    static const std::vector<std::string> names = {"affine", "controlled-drift", "american-put",
                                                   "linear-pide"};
    return names;
}

namespace detail {

// Reward shapes: affine, call, put, step, quad-clip, table, none (h only).
struct ShapeSpec {
    std::function<double(double)> fn;
    double growth_C = 0.0;
    double growth_p = 1.0;
    bool present = true;
};

inline ShapeSpec make_shape(const std::string& prefix, const BuiltinParams& p,
                            const std::string& fallback_kind, double box_hw) {
    ShapeSpec out;
    const std::string kind = p.get(prefix + "_shape", fallback_kind);
    const double strike = p.get(prefix + "_strike", 1.0);
    const double intercept = p.get(prefix + "_intercept", 0.0);
    const double slope = p.get(prefix + "_slope", 1.0);
    if (kind == "none") {
        out.present = false;
        out.fn = [](double) { return no_obstacle; };
        out.growth_C = 0.0;
        out.growth_p = 0.0;
    } else if (kind == "affine") {
        out.fn = [intercept, slope](double x) { return intercept + slope * x; };
        out.growth_C = std::max(std::abs(intercept), std::abs(slope));
    } else if (kind == "call") {
        out.fn = [strike](double x) { return std::max(x - strike, 0.0); };
        out.growth_C = std::max(1.0, std::abs(strike));
    } else if (kind == "put") {
        out.fn = [strike](double x) { return std::max(strike - x, 0.0); };
        out.growth_C = std::max(1.0, std::abs(strike));
    } else if (kind == "step") {
        const double lo = p.get(prefix + "_lo", 0.0);
        const double hi = p.get(prefix + "_hi", 1.0);
        out.fn = [strike, lo, hi](double x) { return x >= strike ? hi : lo; };
        out.growth_C = std::max(std::abs(lo), std::abs(hi));
        out.growth_p = 0.0;
    } else if (kind == "quad-clip") {
        const double center = p.get(prefix + "_center", 0.0);
        const double scale = p.get(prefix + "_scale", 1.0);
        const double cap = p.get(prefix + "_cap", 1.0);
        out.fn = [center, scale, cap](double x) {
            return std::min(scale * (x - center) * (x - center), cap);
        };
        out.growth_C = std::abs(cap);
        out.growth_p = 0.0;
    } else if (kind == "table") {
        const auto xs = p.get(prefix + "_xs", std::vector<double>{});
        const auto vals = p.get(prefix + "_values", std::vector<double>{});
        if (xs.size() < 2 || xs.size() != vals.size())
            throw config_error("builtin shape '" + prefix
                               + "': table needs matching xs/values with >= 2 entries");
        for (std::size_t i = 1; i < xs.size(); ++i)
            if (!(xs[i] > xs[i - 1]))
                throw config_error("builtin shape '" + prefix + "': table xs must increase");
        out.fn = [xs, vals](double x) {
            if (x <= xs.front()) return vals.front();
            if (x >= xs.back()) return vals.back();
            std::size_t lo = 0, hi = xs.size() - 1;
            while (hi - lo > 1) {
                const std::size_t mid = (lo + hi) / 2;
                (xs[mid] <= x ? lo : hi) = mid;
            }
            const double w = (xs[lo + 1] - x) / (xs[lo + 1] - xs[lo]);
            return w * vals[lo] + (1.0 - w) * vals[lo + 1];
        };
        double mx = 0.0;
        for (double v : vals) mx = std::max(mx, std::abs(v));
        out.growth_C = mx;
        out.growth_p = 0.0;
    } else {
        throw config_error("builtin shape '" + prefix + "': unknown kind '" + kind + "'");
    }
    (void)box_hw;
    return out;
}

inline void check_keys(const std::string& family, const BuiltinParams& p,
                       const std::set<std::string>& known) {
    std::vector<std::string> known_v(known.begin(), known.end());
    auto complain = [&](const std::string& key) {
        std::string msg = "builtin '" + family + "': unknown parameter '" + key + "'";
        const std::string hint = nearest_key(key, known_v);
        if (!hint.empty()) msg += " (did you mean '" + hint + "'?)";
        throw config_error(msg);
    };
    for (const auto& [k, v] : p.scalars)
        if (!known.count(k)) complain(k);
    for (const auto& [k, v] : p.arrays)
        if (!known.count(k)) complain(k);
    for (const auto& [k, v] : p.strings)
        if (!known.count(k)) complain(k);
}

inline void require_keys(const std::string& family, const BuiltinParams& p,
                         const std::vector<std::string>& required) {
    std::string missing;
    for (const auto& k : required)
        if (!p.has(k)) missing += (missing.empty() ? "" : ", ") + k;
    if (!missing.empty())
        throw config_error("builtin '" + family + "': missing required parameters: " + missing);
}

inline std::set<std::string> shape_keys(const std::string& prefix) {
    return {prefix + "_shape", prefix + "_strike", prefix + "_intercept", prefix + "_slope",
            prefix + "_lo",    prefix + "_hi",     prefix + "_center",    prefix + "_scale",
            prefix + "_cap",   prefix + "_xs",     prefix + "_values"};
}

/// Shared constructor for the affine coefficient/driver family:
///   b = b0 + b1 x + b2 a,  sigma = max(s0 + s2 a, sigma_min),
///   beta_i = e_i (c0 + c2 a),
///   f = l0 + l1 x + l2 a + l3 x a + cy y + cz z + sum_i gamma_i nu_i k_i.
/// Lipschitz/growth constants are computed against the default sample box, so
/// check_assumptions passes with ~zero margins out of the box.
inline ProblemSpec make_affine_family(const std::string& family, const BuiltinParams& p) {
    ProblemSpec spec;
    const double b0 = p.get("b0", 0.0), b1 = p.get("b1", 0.0), b2 = p.get("b2", 0.0);
    const double s0 = p.get("s0", 0.0), s2 = p.get("s2", 0.0);
    const double sigma_min = p.get("sigma_min", 0.0);
    const double c0 = p.get("c0", 0.0), c2 = p.get("c2", 0.0);
    const double l0 = p.get("l0", 0.0), l1 = p.get("l1", 0.0);
    const double l2 = p.get("l2", 0.0), l3 = p.get("l3", 0.0);
    const double cy = p.get("cy", 0.0), cz = p.get("cz", 0.0);

    spec.horizon_T = p.get("T", 1.0);

    const std::vector<double> marks = p.get("marks", std::vector<double>{});
    std::vector<double> weights = p.get("weights", std::vector<double>(marks.size(), 0.5));
    std::vector<double> psis = p.get("psis", std::vector<double>{});
    std::vector<double> gammas = p.get("gammas", std::vector<double>(marks.size(), 0.0));
    if (psis.empty()) {
        psis.resize(marks.size());
        for (std::size_t i = 0; i < marks.size(); ++i) psis[i] = std::max(1.0, std::abs(marks[i]));
    }
    spec.nu.marks = marks;
    spec.nu.weights = weights;
    spec.nu.psi = psis;
    spec.nu.validate();
    if (gammas.size() != marks.size())
        throw config_error("builtin '" + family + "': gammas length must match marks");
    for (std::size_t i = 0; i < gammas.size(); ++i) {
        if (gammas[i] < -1.0)
            throw config_error("builtin '" + family + "': gamma[" + std::to_string(i)
                               + "] < -1 violates jump monotonicity");
        if (std::abs(gammas[i]) > spec.nu.psi[i])
            throw config_error("builtin '" + family + "': |gamma[" + std::to_string(i)
                               + "]| exceeds psi");
    }

    const double a_min = p.get("a_min", 0.0);
    const double a_max = p.get("a_max", a_min);
    const std::size_t q = static_cast<std::size_t>(p.get("n_controls", 1.0));
    if (q == 0) throw config_error("builtin '" + family + "': n_controls must be >= 1");
    if (a_max < a_min) throw config_error("builtin '" + family + "': a_max < a_min");
    spec.controls.a_min = a_min;
    spec.controls.a_max = a_max;
    spec.controls.values.resize(q);
    for (std::size_t i = 0; i < q; ++i)
        spec.controls.values[i] =
            q == 1 ? a_min : a_min + (a_max - a_min) * static_cast<double>(i) / double(q - 1);

    spec.coeffs.b = [b0, b1, b2](double x, double a) { return b0 + b1 * x + b2 * a; };
    spec.coeffs.sigma = [s0, s2, sigma_min](double, double a) {
        return std::max(s0 + s2 * a, sigma_min);
    };
    spec.coeffs.beta = [marks, c0, c2](double, double a, std::size_t i) {
        return marks[i] * (c0 + c2 * a);
    };

    const SampleBox box;
    const double A = std::max(std::abs(a_min), std::abs(a_max));
    double beta_over_psi = 0.0;
    for (std::size_t i = 0; i < marks.size(); ++i)
        beta_over_psi = std::max(beta_over_psi, std::abs(marks[i]) / psis[i]);
    spec.coeffs.lipschitz_C = std::max({std::abs(b1), std::abs(b2), std::abs(s2),
                                        beta_over_psi * (std::abs(c0) + std::abs(c2) * A),
                                        beta_over_psi * std::abs(c2)});

    const std::vector<double> nu_w = weights;
    const std::vector<double> gam = gammas;
    spec.driver.f = [l0, l1, l2, l3, cy, cz, nu_w, gam](double a, double, double x, double y,
                                                        double z, std::span<const double> k) {
        double s = l0 + l1 * x + l2 * a + l3 * x * a + cy * y + cz * z;
        for (std::size_t i = 0; i < gam.size(); ++i) s += gam[i] * nu_w[i] * k[i];
        return s;
    };
    spec.driver.gamma = [gam](double, double, double, double, double, std::span<const double>,
                              std::span<const double>) { return gam; };
    const double Bx = box.x_hi;  // box is symmetric
    double gam_norm = 0.0;
    for (std::size_t i = 0; i < gam.size(); ++i) gam_norm += nu_w[i] * gam[i] * gam[i];
    gam_norm = std::sqrt(gam_norm);
    spec.driver.lipschitz_C = std::max({std::abs(l1) + std::abs(l3) * A,
                                        std::abs(l2) + std::abs(l3) * Bx, std::abs(cy),
                                        std::abs(cz), gam_norm});
    spec.driver.growth_C =
        std::max(std::abs(l0) + std::abs(l2) * A, std::abs(l1) + std::abs(l3) * A);
    spec.driver.growth_p = 1.0;

    const ShapeSpec gs = make_shape("g", p, "affine", box.x_hi);
    const ShapeSpec hs = make_shape("h", p, "none", box.x_hi);
    if (!gs.present) throw config_error("builtin '" + family + "': terminal shape cannot be none");
    spec.reward.g = gs.fn;
    spec.reward.has_obstacle = hs.present;
    if (hs.present) {
        auto hf = hs.fn;
        spec.reward.h = [hf](double, double x) { return hf(x); };
    }
    spec.reward.growth_C = std::max(gs.growth_C, hs.present ? hs.growth_C : 0.0);
    spec.reward.growth_p = std::max(gs.growth_p, hs.present ? hs.growth_p : 0.0);

    spec.validate();
    return spec;
}

}  // namespace detail

/// Construct a builtin problem family by name. Families:
///  - "affine": the full affine coefficient/driver family (all parameters).
///  - "controlled-drift": affine preset with a live control in the drift.
///  - "american-put": arithmetic put, b=0, sigma=vol, f=-rate*y, h=g=(K-x)^+.
///  - "linear-pide": obstacle-free linear expectation, f=-rate*y, g(x)=x.
inline ProblemSpec builtin_registry(const std::string& name, const BuiltinParams& params = {}) {
    using namespace detail;
    static const std::set<std::string> affine_keys = [] {
        std::set<std::string> k = {"b0", "b1", "b2", "s0",      "s2",      "sigma_min", "c0",
                                   "c2", "l0", "l1", "l2",      "l3",      "cy",        "cz",
                                   "T",  "a_min",    "a_max",   "n_controls", "marks",  "weights",
                                   "psis", "gammas"};
        for (const auto& s : shape_keys("g")) k.insert(s);
        for (const auto& s : shape_keys("h")) k.insert(s);
        return k;
    }();

    if (name == "affine") {
        check_keys(name, params, affine_keys);
        return make_affine_family(name, params);
    }
    if (name == "controlled-drift") {
        check_keys(name, params, affine_keys);
        BuiltinParams p = params;
        auto def_scalar = [&p](const std::string& k, double v) {
            if (!p.scalars.count(k)) p.scalars[k] = v;
        };
        def_scalar("b2", 1.0);
        def_scalar("s0", 0.25);
        def_scalar("a_min", -1.0);
        def_scalar("a_max", 1.0);
        def_scalar("n_controls", 5.0);
        def_scalar("l1", 0.5);
        def_scalar("cy", -0.1);
        return make_affine_family(name, p);
    }
    if (name == "american-put") {
        static const std::set<std::string> keys = {"strike", "rate", "vol", "T"};
        check_keys(name, params, keys);
        require_keys(name, params, {"strike", "rate", "vol"});
        const double strike = params.get("strike", 1.0);
        const double rate = params.get("rate", 0.05);
        const double vol = params.get("vol", 0.2);
        BuiltinParams p;
        p.scalars["s0"] = vol;
        p.scalars["cy"] = -rate;
        p.scalars["T"] = params.get("T", 1.0);
        p.strings["g_shape"] = "put";
        p.scalars["g_strike"] = strike;
        p.strings["h_shape"] = "put";
        p.scalars["h_strike"] = strike;
        return make_affine_family(name, p);
    }
    if (name == "linear-pide") {
        static const std::set<std::string> keys = [] {
            std::set<std::string> k = {"rate", "sigma", "T", "marks", "weights",
                                       "psis", "c0",    "c2"};
            for (const auto& s : shape_keys("g")) k.insert(s);
            return k;
        }();
        check_keys(name, params, keys);
        BuiltinParams p;
        p.scalars["s0"] = params.get("sigma", 0.2);
        p.scalars["cy"] = -params.get("rate", 0.05);
        p.scalars["T"] = params.get("T", 1.0);
        p.arrays["marks"] = params.get("marks", std::vector<double>{});
        if (params.has("weights")) p.arrays["weights"] = params.get("weights", std::vector<double>{});
        if (params.has("psis")) p.arrays["psis"] = params.get("psis", std::vector<double>{});
        p.scalars["c0"] = params.get("c0", 0.0);
        p.scalars["c2"] = params.get("c2", 0.0);
        p.strings["g_shape"] = params.get("g_shape", std::string("affine"));
        for (const auto& key : shape_keys("g")) {
            if (key == "g_shape") continue;
            if (params.scalars.count(key)) p.scalars[key] = params.scalars.at(key);
            if (params.arrays.count(key)) p.arrays[key] = params.arrays.at(key);
        }
        p.strings["h_shape"] = "none";
        return make_affine_family(name, p);
    }
    std::string msg = "unknown builtin '" + name + "'";
    const std::string hint = nearest_key(name, builtin_names());
    if (!hint.empty()) msg += " (did you mean '" + hint + "'?)";
    msg += "; known: affine, controlled-drift, american-put, linear-pide";
    throw config_error(msg);
}

}  // namespace mcss
