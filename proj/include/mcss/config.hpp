#pragma once

#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "builtins.hpp"
#include "common.hpp"
#include "problem.hpp"

namespace mcss {

/// Everything a run needs beyond the CLI flags: the problem instance plus
/// discretization and per-command knobs. Unknown keys anywhere in the file
/// are rejected with the offending key path and a nearest-match hint.
struct RunConfig {
    std::string builtin = "affine";
    BuiltinParams params;

    double x_min = -2.0, x_max = 2.0;
    std::size_t n_space = 100, n_steps = 100;
    double x0 = 0.0;

    std::size_t n_paths = 256;

    std::string boundary = "reflecting";
    double cfl_margin = 0.05;

    std::size_t n_rungs = 3;
    std::size_t n_instances = 64;
    std::size_t dpp_rules = 10;

    ProblemSpec make_spec() const { return builtin_registry(builtin, params); }
};

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& obj, const std::string& path,
                                const std::vector<std::string>& allowed) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool known = false;
        for (const auto& k : allowed) known = known || k == it.key();
        if (known) continue;
        std::string full = path.empty() ? it.key() : path + "." + it.key();
        std::string msg = "config: unknown key '" + full + "'";
        const std::string hint = nearest_key(it.key(), allowed);
        if (!hint.empty()) msg += " (did you mean '" + hint + "'?)";
        throw config_error(msg);
    }
}

inline double want_number(const nlohmann::json& v, const std::string& path) {
    if (!v.is_number()) throw config_error("config: '" + path + "' must be a number");
    return v.get<double>();
}

inline std::size_t want_count(const nlohmann::json& v, const std::string& path) {
    if (!v.is_number_integer() || v.get<long long>() <= 0)
        throw config_error("config: '" + path + "' must be a positive integer");
    return v.get<std::size_t>();
}

inline std::string want_string(const nlohmann::json& v, const std::string& path) {
    if (!v.is_string()) throw config_error("config: '" + path + "' must be a string");
    return v.get<std::string>();
}

inline BuiltinParams parse_builtin_params(const nlohmann::json& obj, const std::string& path) {
    BuiltinParams p;
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        const std::string kp = path + "." + it.key();
        const nlohmann::json& v = it.value();
        if (v.is_number()) {
            p.scalars[it.key()] = v.get<double>();
        } else if (v.is_string()) {
            p.strings[it.key()] = v.get<std::string>();
        } else if (v.is_array()) {
            std::vector<double> arr;
            for (const auto& e : v) {
                if (!e.is_number())
                    throw config_error("config: '" + kp + "' must be an array of numbers");
                arr.push_back(e.get<double>());
            }
            p.arrays[it.key()] = arr;
        } else {
            throw config_error("config: '" + kp
                               + "' must be a number, a string, or an array of numbers");
        }
    }
    return p;
}

inline std::pair<std::size_t, std::size_t> line_column(const std::string& text,
                                                       std::size_t byte) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return {line, col};
}

}  // namespace detail

/// Parse a config from JSON text. Syntax errors report line and column;
/// schema errors report the full key path.
inline RunConfig parse_config_text(const std::string& text) {
    nlohmann::json root;
    try {
        root = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        const auto [line, col] = detail::line_column(text, e.byte > 0 ? e.byte - 1 : 0);
        throw config_error("config: JSON syntax error at line " + std::to_string(line)
                           + ", column " + std::to_string(col) + ": " + e.what());
    }
    if (!root.is_object()) throw config_error("config: top level must be a JSON object");

    detail::reject_unknown_keys(
        root, "", {"problem", "grid", "x0", "simulation", "pide", "cross_validate", "verify"});

    RunConfig cfg;
    if (root.contains("problem")) {
        const auto& pr = root["problem"];
        if (!pr.is_object()) throw config_error("config: 'problem' must be an object");
        detail::reject_unknown_keys(pr, "problem", {"builtin", "params"});
        if (pr.contains("builtin")) cfg.builtin = detail::want_string(pr["builtin"], "problem.builtin");
        if (pr.contains("params")) {
            if (!pr["params"].is_object())
                throw config_error("config: 'problem.params' must be an object");
            cfg.params = detail::parse_builtin_params(pr["params"], "problem.params");
        }
    }
    if (root.contains("grid")) {
        const auto& gr = root["grid"];
        if (!gr.is_object()) throw config_error("config: 'grid' must be an object");
        detail::reject_unknown_keys(gr, "grid", {"x_min", "x_max", "n_space", "n_steps"});
        if (gr.contains("x_min")) cfg.x_min = detail::want_number(gr["x_min"], "grid.x_min");
        if (gr.contains("x_max")) cfg.x_max = detail::want_number(gr["x_max"], "grid.x_max");
        if (gr.contains("n_space")) cfg.n_space = detail::want_count(gr["n_space"], "grid.n_space");
        if (gr.contains("n_steps")) cfg.n_steps = detail::want_count(gr["n_steps"], "grid.n_steps");
        if (!(cfg.x_min < cfg.x_max))
            throw config_error("config: grid.x_min must be below grid.x_max");
    }
    if (root.contains("x0")) cfg.x0 = detail::want_number(root["x0"], "x0");
    if (root.contains("simulation")) {
        const auto& si = root["simulation"];
        if (!si.is_object()) throw config_error("config: 'simulation' must be an object");
        detail::reject_unknown_keys(si, "simulation", {"n_paths"});
        if (si.contains("n_paths"))
            cfg.n_paths = detail::want_count(si["n_paths"], "simulation.n_paths");
    }
    if (root.contains("pide")) {
        const auto& pi = root["pide"];
        if (!pi.is_object()) throw config_error("config: 'pide' must be an object");
        detail::reject_unknown_keys(pi, "pide", {"boundary", "cfl_margin"});
        if (pi.contains("boundary")) {
            cfg.boundary = detail::want_string(pi["boundary"], "pide.boundary");
            if (cfg.boundary != "reflecting" && cfg.boundary != "dirichlet-from-terminal")
                throw config_error("config: pide.boundary must be 'reflecting' or "
                                   "'dirichlet-from-terminal', got '"
                                   + cfg.boundary + "'");
        }
        if (pi.contains("cfl_margin"))
            cfg.cfl_margin = detail::want_number(pi["cfl_margin"], "pide.cfl_margin");
    }
    if (root.contains("cross_validate")) {
        const auto& cv = root["cross_validate"];
        if (!cv.is_object()) throw config_error("config: 'cross_validate' must be an object");
        detail::reject_unknown_keys(cv, "cross_validate", {"n_rungs"});
        if (cv.contains("n_rungs"))
            cfg.n_rungs = detail::want_count(cv["n_rungs"], "cross_validate.n_rungs");
    }
    if (root.contains("verify")) {
        const auto& ve = root["verify"];
        if (!ve.is_object()) throw config_error("config: 'verify' must be an object");
        detail::reject_unknown_keys(ve, "verify", {"n_instances", "dpp_rules"});
        if (ve.contains("n_instances"))
            cfg.n_instances = detail::want_count(ve["n_instances"], "verify.n_instances");
        if (ve.contains("dpp_rules"))
            cfg.dpp_rules = detail::want_count(ve["dpp_rules"], "verify.dpp_rules");
    }
    return cfg;
}

inline RunConfig parse_config_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw config_error("config: cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

}  // namespace mcss
