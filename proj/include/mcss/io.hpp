#pragma once

#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "assumptions.hpp"
#include "backward.hpp"
#include "common.hpp"
#include "lattice.hpp"
#include "pide.hpp"
#include "simulate.hpp"
#include "theorems.hpp"
#include "time_grid.hpp"
#include "value.hpp"

namespace mcss {

/// One row per (path, layer): path,layer,t,x with 17 significant digits.
inline void write_csv_paths(std::ostream& os, const PathBatch& batch) {
    os << "path,layer,t,x\n";
    for (std::size_t p = 0; p < batch.n_paths; ++p)
        for (std::size_t k = 0; k < batch.grid.layers(); ++k)
            os << p << ',' << k << ',' << fmt17(batch.grid.time(k)) << ','
               << fmt17(batch.state(p, k)) << '\n';
}

inline void write_csv_jumps(std::ostream& os, const PathBatch& batch) {
    os << "path,step,mark\n";
    for (const auto& e : batch.jump_log) os << e.path << ',' << e.step << ',' << e.mark << '\n';
}

/// Backward field rows: layer,t,x,y,z,a_inc,k_1..k_m.
inline void write_csv_field(std::ostream& os, const Lattice& lat, const BackwardField& f) {
    os << "layer,t,x,y,z,a_inc";
    for (std::size_t i = 0; i < f.m; ++i) os << ",k_" << (i + 1);
    os << '\n';
    for (std::size_t k = f.k_lo; k <= f.k_hi; ++k)
        for (std::size_t j = 0; j < f.n_nodes; ++j) {
            os << k << ',' << fmt17(lat.grid.time(k)) << ',' << fmt17(lat.xs[j]) << ','
               << fmt17(f.y(k, j)) << ',' << fmt17(f.z(k, j)) << ',' << fmt17(f.a_inc(k, j));
            for (double kv : f.kvec(k, j)) os << ',' << fmt17(kv);
            os << '\n';
        }
}

/// Value surface rows: layer,t,x,u,stop,control.
inline void write_csv_surface(std::ostream& os, const std::vector<double>& xs,
                              const TimeGrid& grid, const ValueSurface& s) {
    os << "layer,t,x,u,stop,control\n";
    for (std::size_t k = 0; k < s.layers; ++k)
        for (std::size_t j = 0; j < s.n_nodes; ++j)
            os << k << ',' << fmt17(grid.time(k)) << ',' << fmt17(xs[j]) << ','
               << fmt17(s.at(k, j)) << ',' << (s.stopped(k, j) ? 1 : 0) << ','
               << s.argmax.at(k, j) << '\n';
}

inline nlohmann::json to_json(const LatticeBuildReport& r) {
    return {{"dt", r.dt},
            {"dx", r.dx},
            {"cfl_ratio", r.cfl_ratio},
            {"jump_mass", r.jump_mass},
            {"max_row_defect", r.max_row_defect},
            {"max_var_overshoot", r.max_var_overshoot},
            {"max_var_deficit", r.max_var_deficit},
            {"clamped_jumps", r.clamped_jumps}};
}

inline nlohmann::json to_json(const ConsistencyReport& r) {
    return {{"max_mean_err", r.max_mean_err},
            {"max_var_err", r.max_var_err},
            {"tolerance", r.tolerance},
            {"interior_rows", r.interior_rows},
            {"skipped_rows", r.skipped_rows},
            {"pass", r.pass}};
}

inline nlohmann::json to_json(const AssumptionReport& r) {
    return {{"driver_growth", r.driver_growth},
            {"driver_lipschitz", r.driver_lipschitz},
            {"driver_monotone", r.driver_monotone},
            {"gamma_lower", r.gamma_lower},
            {"gamma_psi", r.gamma_psi},
            {"beta_bound", r.beta_bound},
            {"coeff_lipschitz", r.coeff_lipschitz},
            {"reward_growth", r.reward_growth},
            {"worst", r.worst()},
            {"samples", r.samples},
            {"pass", r.pass}};
}

inline nlohmann::json to_json(const DppReport& r) {
    return {{"sub_gap", r.sub_gap},
            {"super_gap", r.super_gap},
            {"tolerance", r.tolerance},
            {"pass", r.pass}};
}

inline nlohmann::json to_json(const ResidualReport& r) {
    return {{"max_abs", r.max_abs},
            {"at_layer", r.at_layer},
            {"at_node", r.at_node},
            {"tolerance", r.tolerance},
            {"stop_branch_ok", r.stop_branch_ok},
            {"pass", r.pass}};
}

inline nlohmann::json to_json(const CrossReport& r) {
    nlohmann::json rungs = nlohmann::json::array();
    for (const auto& g : r.rungs)
        rungs.push_back({{"n_time", g.n_time},
                         {"n_space", g.n_space},
                         {"dt", g.dt},
                         {"dx", g.dx},
                         {"sup_err", g.sup_err}});
    return {{"rungs", rungs},
            {"scale", r.scale},
            {"final_tol", r.final_tol},
            {"monotone", r.monotone},
            {"pass", r.pass}};
}

inline nlohmann::json to_json(const PropertyReport& r) {
    return {{"name", r.name},
            {"cases", r.n_cases},
            {"failures", r.n_failures},
            {"worst_margin", r.worst_margin},
            {"notes", r.notes},
            {"pass", r.pass}};
}

inline nlohmann::json to_json(const VerificationSummary& s) {
    nlohmann::json reports = nlohmann::json::array();
    for (const auto& r : s.reports) reports.push_back(to_json(r));
    return {{"reports", reports}, {"pass", s.pass}};
}

namespace detail {

inline std::string xml_escape(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    return out;
}

}  // namespace detail

/// JUnit-style XML for the structural battery. Deliberately carries no
/// timestamps or hostnames so reruns are byte-identical.
inline void write_junit(std::ostream& os, const VerificationSummary& s) {
    std::size_t failures = 0;
    for (const auto& r : s.reports)
        if (!r.pass) ++failures;
    os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    os << "<testsuite name=\"structural-battery\" tests=\"" << s.reports.size()
       << "\" failures=\"" << failures << "\">\n";
    for (const auto& r : s.reports) {
        os << "  <testcase name=\"" << detail::xml_escape(r.name) << "\" assertions=\""
           << r.n_cases << "\"";
        if (r.pass) {
            os << "/>\n";
            continue;
        }
        os << ">\n    <failure message=\"" << r.n_failures << " of " << r.n_cases
           << " checks failed; worst margin " << fmt17(r.worst_margin) << "\">";
        for (const auto& n : r.notes) os << detail::xml_escape(n) << "&#10;";
        os << "</failure>\n  </testcase>\n";
    }
    os << "</testsuite>\n";
}

/// Companion gnuplot script for a surface CSV written by write_csv_surface.
inline std::string gnuplot_surface_script(const std::string& csv_path,
                                          const std::string& title) {
    std::string s;
    s += "set datafile separator comma\n";
    s += "set title '" + title + "'\n";
    s += "set xlabel 'x'\n";
    s += "set ylabel 'u(0, x)'\n";
    s += "set key off\n";
    s += "plot '" + csv_path + "' using 3:($1 == 0 ? $4 : 1/0) with lines\n";
    return s;
}

}  // namespace mcss
