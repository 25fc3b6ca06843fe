#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mcss/mcss.hpp"

namespace {

using namespace mcss;

struct CommonOpts {
    std::string config;
    std::uint64_t seed = 12345;
    int threads = 1;
    std::string out;
    bool dry_run = false;
    bool emit_gnuplot = false;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--config", o.config, "JSON run configuration")->required();
    cmd->add_option("--seed", o.seed, "base seed for all randomness");
    cmd->add_option("--threads", o.threads, "worker threads")->check(CLI::PositiveNumber);
    cmd->add_option("--out", o.out, "output file (CSV or JSON, command dependent)");
    cmd->add_flag("--dry-run", o.dry_run, "validate the configuration, print the plan, solve nothing");
    cmd->add_flag("--emit-gnuplot", o.emit_gnuplot, "write a companion gnuplot script next to --out");
}

std::ofstream open_out(const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw validation_error("cannot open output file '" + path + "'");
    return f;
}

void maybe_gnuplot(const CommonOpts& o, const std::string& title) {
    if (!o.emit_gnuplot) return;
    if (o.out.empty())
        throw validation_error("--emit-gnuplot needs --out (the script references the CSV)");
    auto f = open_out(o.out + ".gp");
    f << gnuplot_surface_script(o.out, title);
}

nlohmann::json plan_json(const RunConfig& cfg, const Lattice& lat, const ProblemSpec& spec) {
    return {{"builtin", cfg.builtin},
            {"horizon", spec.horizon_T},
            {"x0", cfg.x0},
            {"grid",
             {{"x_min", cfg.x_min},
              {"x_max", cfg.x_max},
              {"n_space", cfg.n_space},
              {"n_steps", cfg.n_steps}}},
            {"n_controls", lat.n_controls()},
            {"n_marks", lat.n_marks()},
            {"lattice", to_json(lat.report)}};
}

struct Loaded {
    RunConfig cfg;
    ProblemSpec spec;
    Lattice lat;
};

Loaded load(const CommonOpts& o, int threads) {
    Loaded l;
    l.cfg = parse_config_file(o.config);
    l.spec = l.cfg.make_spec();
    const TimeGrid tg(0.0, l.spec.horizon_T, l.cfg.n_steps);
    l.lat = build_lattice(l.spec, tg, l.cfg.x_min, l.cfg.x_max, l.cfg.n_space, threads);
    return l;
}

bool handle_dry_run(const CommonOpts& o, const Loaded& l) {
    if (!o.dry_run) return false;
    std::cout << plan_json(l.cfg, l.lat, l.spec).dump(2) << "\n";
    return true;
}

Policy policy_from_flag(const Lattice& lat, long control_index) {
    if (control_index < 0 || static_cast<std::size_t>(control_index) >= lat.n_controls())
        throw validation_error("--control index " + std::to_string(control_index)
                               + " out of range (have " + std::to_string(lat.n_controls())
                               + " controls)");
    return Policy::constant(lat, static_cast<std::size_t>(control_index));
}

int cmd_simulate(const CommonOpts& o, long control_index) {
    Loaded l = load(o, o.threads);
    if (handle_dry_run(o, l)) return 0;
    const double a = l.lat.controls[policy_from_flag(l.lat, control_index).at(0, 0)];
    const PathBatch batch =
        simulate_paths(l.spec, l.lat.grid, l.cfg.x0, l.cfg.n_paths, o.seed,
                       [a](std::size_t, double) { return a; }, o.threads);
    if (o.out.empty()) {
        write_csv_paths(std::cout, batch);
    } else {
        auto f = open_out(o.out);
        write_csv_paths(f, batch);
        auto fj = open_out(o.out + ".jumps.csv");
        write_csv_jumps(fj, batch);
    }
    std::cout << "simulated " << batch.n_paths << " paths, " << batch.jump_log.size()
              << " jumps\n";
    return 0;
}

int cmd_solve_backward(const CommonOpts& o, long control_index, bool reflected) {
    Loaded l = load(o, o.threads);
    if (handle_dry_run(o, l)) return 0;
    const Policy pol = policy_from_flag(l.lat, control_index);
    const DriverSpec d(l.spec.driver);
    const auto terminal = terminal_values(l.lat, l.spec.reward);
    BackwardField field;
    if (reflected) {
        if (!l.spec.reward.has_obstacle)
            throw validation_error("reflected solve requested but the problem has no "
                                   "intermediate reward (obstacle)");
        field = solve_rbsde(l.lat, pol, terminal, obstacle_table(l.lat, l.spec.reward), d,
                            o.threads);
    } else {
        field = solve_bsde(l.lat, pol, terminal, d, o.threads);
    }
    if (!o.out.empty()) {
        auto f = open_out(o.out);
        write_csv_field(f, l.lat, field);
    }
    std::cout << "y0 " << fmt17(field.y(0, l.lat.locate(l.cfg.x0))) << "\n";
    return 0;
}

int cmd_value(const CommonOpts& o, const std::string& report_path) {
    Loaded l = load(o, o.threads);
    if (handle_dry_run(o, l)) return 0;
    const ValueSurface s = solve_value(l.lat, l.spec, o.threads);
    if (!o.out.empty()) {
        auto f = open_out(o.out);
        write_csv_surface(f, l.lat.xs, l.lat.grid, s);
    }
    maybe_gnuplot(o, "mixed control/stopping value");
    if (!report_path.empty()) {
        nlohmann::json rep = plan_json(l.cfg, l.lat, l.spec);
        rep["consistency"] = to_json(local_consistency_check(l.lat, l.spec));
        rep["value_at_x0"] = s.at(0, l.lat.locate(l.cfg.x0));
        auto f = open_out(report_path);
        f << rep.dump(2) << "\n";
    }
    std::cout << "u0 " << fmt17(s.at(0, l.lat.locate(l.cfg.x0))) << "\n";
    return 0;
}

int cmd_hjbvi(const CommonOpts& o, const std::string& report_path, bool check_residual) {
    Loaded l = load(o, o.threads);  // builds the lattice too: same plan, same checks
    if (handle_dry_run(o, l)) return 0;
    PIDEScheme scheme;
    scheme.space = SpatialGrid(l.cfg.x_min, l.cfg.x_max, l.cfg.n_space);
    scheme.time = TimeGrid(0.0, l.spec.horizon_T, l.cfg.n_steps);
    scheme.cfl_margin = l.cfg.cfl_margin;
    scheme.boundary = l.cfg.boundary == "reflecting" ? PIDEScheme::Boundary::reflecting
                                                     : PIDEScheme::Boundary::dirichlet_g;
    const ValueSurface s = solve_hjbvi(l.spec, scheme, o.threads);
    const ResidualReport res = viscosity_residual(l.spec, scheme, s);
    if (!o.out.empty()) {
        auto f = open_out(o.out);
        write_csv_surface(f, scheme.space.xs, scheme.time, s);
    }
    maybe_gnuplot(o, "finite-difference value");
    if (!report_path.empty()) {
        nlohmann::json rep = plan_json(l.cfg, l.lat, l.spec);
        rep["residual"] = to_json(res);
        auto f = open_out(report_path);
        f << rep.dump(2) << "\n";
    }
    const std::size_t j0 = l.lat.locate(l.cfg.x0);
    std::cout << "u0 " << fmt17(s.at(0, j0)) << "\n";
    std::cout << "residual " << fmt17(res.max_abs) << " tol " << fmt17(res.tolerance)
              << (res.pass ? " pass" : " FAIL") << "\n";
    return check_residual && !res.pass ? 3 : 0;
}

int cmd_cross_validate(const CommonOpts& o, long refine) {
    RunConfig cfg = parse_config_file(o.config);
    ProblemSpec spec = cfg.make_spec();
    const std::size_t rungs = refine > 0 ? static_cast<std::size_t>(refine) : cfg.n_rungs;
    if (o.dry_run) {
        const TimeGrid tg(0.0, spec.horizon_T, cfg.n_steps);
        Lattice lat = build_lattice(spec, tg, cfg.x_min, cfg.x_max, cfg.n_space, o.threads);
        nlohmann::json plan = plan_json(cfg, lat, spec);
        plan["n_rungs"] = rungs;
        std::cout << plan.dump(2) << "\n";
        return 0;
    }
    const CrossReport rep = cross_validate(spec, cfg.x_min, cfg.x_max, cfg.n_space,
                                           cfg.n_steps, rungs, o.threads, cfg.cfl_margin);
    if (!o.out.empty()) {
        auto f = open_out(o.out);
        f << to_json(rep).dump(2) << "\n";
    }
    for (const auto& r : rep.rungs)
        std::cout << "rung " << r.n_time << "x" << r.n_space << " sup_err "
                  << fmt17(r.sup_err) << "\n";
    std::cout << "cross-validation " << (rep.pass ? "pass" : "FAIL") << " (final tol "
              << fmt17(rep.final_tol) << ")\n";
    return rep.pass ? 0 : 3;
}

int cmd_dpp_check(const CommonOpts& o) {
    Loaded l = load(o, o.threads);
    if (handle_dry_run(o, l)) return 0;
    const ValueSurface direct = solve_value(l.lat, l.spec, o.threads);
    const std::size_t n_steps = l.lat.grid.n_steps;
    rng_stream rs(o.seed, 0x0DEDull);
    bool all_pass = true;
    nlohmann::json rules = nlohmann::json::array();
    for (std::size_t r = 0; r < l.cfg.dpp_rules; ++r) {
        StoppingRule theta = StoppingRule::none(l.lat);
        std::string desc;
        if (r % 2 == 0) {
            const std::size_t layer = 1 + rs.next_u64() % n_steps;
            theta = StoppingRule::at_layer(l.lat, layer);
            desc = "layer " + std::to_string(layer);
        } else {
            const std::size_t k0 = 1 + rs.next_u64() % std::max<std::size_t>(n_steps / 2, 1);
            const double c = l.lat.xs[rs.next_u64() % l.lat.n_nodes()];
            for (std::size_t k = k0; k < n_steps; ++k)
                for (std::size_t j = 0; j < l.lat.n_nodes(); ++j)
                    if (l.lat.xs[j] >= c) theta.set(k, j, true);
            desc = "first hit of x >= " + fmt17(c) + " from layer " + std::to_string(k0);
        }
        const DppReport rep = dpp_check(l.lat, l.spec, theta, o.threads, &direct);
        all_pass = all_pass && rep.pass;
        nlohmann::json rj = to_json(rep);
        rj["rule"] = desc;
        rules.push_back(rj);
        std::cout << "rule " << r << " (" << desc << "): sub " << fmt17(rep.sub_gap)
                  << " super " << fmt17(rep.super_gap) << (rep.pass ? " pass" : " FAIL")
                  << "\n";
    }
    if (!o.out.empty()) {
        auto f = open_out(o.out);
        f << nlohmann::json{{"rules", rules}, {"pass", all_pass}}.dump(2) << "\n";
    }
    std::cout << "programming principle " << (all_pass ? "pass" : "FAIL") << "\n";
    return all_pass ? 0 : 3;
}

int cmd_verify(const CommonOpts& o, const std::string& junit_path) {
    RunConfig cfg = parse_config_file(o.config);
    if (o.dry_run) {
        std::cout << nlohmann::json{{"n_instances", cfg.n_instances}, {"seed", o.seed}}.dump(2)
                  << "\n";
        return 0;
    }
    const VerificationSummary sum = run_verification_suite(o.seed, cfg.n_instances, o.threads);
    for (const auto& r : sum.reports) {
        std::cout << r.name << ": " << (r.n_cases - r.n_failures) << "/" << r.n_cases
                  << " checks, worst margin " << fmt17(r.worst_margin)
                  << (r.pass ? " pass" : " FAIL") << "\n";
        for (const auto& n : r.notes) std::cout << "  " << n << "\n";
    }
    if (!o.out.empty()) {
        auto f = open_out(o.out);
        f << to_json(sum).dump(2) << "\n";
    }
    if (!junit_path.empty()) {
        auto f = open_out(junit_path);
        write_junit(f, sum);
    }
    std::cout << "verification " << (sum.pass ? "pass" : "FAIL") << "\n";
    return sum.pass ? 0 : 3;
}

int cmd_check_assumptions(const CommonOpts& o, std::size_t samples) {
    RunConfig cfg = parse_config_file(o.config);
    ProblemSpec spec = cfg.make_spec();
    if (o.dry_run) {
        std::cout << nlohmann::json{{"builtin", cfg.builtin}, {"samples", samples}}.dump(2)
                  << "\n";
        return 0;
    }
    const AssumptionReport rep = check_assumptions(spec, samples, o.seed);
    if (!o.out.empty()) {
        auto f = open_out(o.out);
        f << to_json(rep).dump(2) << "\n";
    }
    std::cout << "assumptions worst margin " << fmt17(rep.worst())
              << (rep.pass ? " pass" : " FAIL") << "\n";
    return rep.pass ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"lattice and finite-difference solvers for controlled optimal stopping "
                 "under driver-induced nonlinear expectations with jumps"};
    app.require_subcommand(1);

    CommonOpts o_sim, o_bsde, o_rbsde, o_val, o_hjb, o_cross, o_dpp, o_ver, o_asm;
    long ctrl_sim = 0, ctrl_bsde = 0, ctrl_rbsde = 0;
    long refine = 0;
    std::string report_val, report_hjb, junit_path;
    bool check_residual = false;
    std::size_t samples = 512;

    auto* sim = app.add_subcommand("simulate", "sample forward paths of the controlled chain");
    add_common(sim, o_sim);
    sim->add_option("--control", ctrl_sim, "control index applied on every step");

    auto* bsde = app.add_subcommand("solve-bsde", "plain backward solve along a frozen control");
    add_common(bsde, o_bsde);
    bsde->add_option("--control", ctrl_bsde, "control index applied on every step");

    auto* rbsde = app.add_subcommand("solve-rbsde",
                                     "reflected backward solve along a frozen control");
    add_common(rbsde, o_rbsde);
    rbsde->add_option("--control", ctrl_rbsde, "control index applied on every step");

    auto* val = app.add_subcommand("value", "mixed control/stopping value by backward induction");
    add_common(val, o_val);
    val->add_option("--report", report_val, "write a JSON diagnostic report");

    auto* hjb = app.add_subcommand("hjbvi", "explicit finite-difference variational solve");
    add_common(hjb, o_hjb);
    hjb->add_option("--report", report_hjb, "write a JSON diagnostic report");
    hjb->add_flag("--check-residual", check_residual, "exit 3 if the residual check fails");

    auto* cross = app.add_subcommand("cross-validate",
                                     "chain vs finite-difference on a refinement ladder");
    add_common(cross, o_cross);
    cross->add_option("--refine", refine, "number of refinement rungs (overrides config)");

    auto* dpp = app.add_subcommand("dpp-check",
                                   "restart the value at stopping rules and compare");
    add_common(dpp, o_dpp);

    auto* ver = app.add_subcommand("verify", "run the structural property battery");
    add_common(ver, o_ver);
    ver->add_option("--junit", junit_path, "write a JUnit-style XML summary");

    auto* asm_ = app.add_subcommand("check-assumptions",
                                    "sample the standing assumptions on a box");
    add_common(asm_, o_asm);
    asm_->add_option("--samples", samples, "quasi-random sample count");

    CLI11_PARSE(app, argc, argv);

    try {
        if (sim->parsed()) return cmd_simulate(o_sim, ctrl_sim);
        if (bsde->parsed()) return cmd_solve_backward(o_bsde, ctrl_bsde, false);
        if (rbsde->parsed()) return cmd_solve_backward(o_rbsde, ctrl_rbsde, true);
        if (val->parsed()) return cmd_value(o_val, report_val);
        if (hjb->parsed()) return cmd_hjbvi(o_hjb, report_hjb, check_residual);
        if (cross->parsed()) return cmd_cross_validate(o_cross, refine);
        if (dpp->parsed()) return cmd_dpp_check(o_dpp);
        if (ver->parsed()) return cmd_verify(o_ver, junit_path);
        if (asm_->parsed()) return cmd_check_assumptions(o_asm, samples);
    } catch (const mcss::validation_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const mcss::error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
