// Acceptance gate: one PASS/FAIL line per criterion, exit code = number of
// failed criteria. Every tolerance here is pinned; loosening one to make a
// run green defeats the point of the gate.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "mcss/mcss.hpp"

using namespace mcss;

namespace {

std::string g3(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

std::string config_path(const std::string& name) {
    return std::string(MCSS_CONFIG_DIR) + "/" + name;
}

int run_cmd(const std::string& cmd) {
    FILE* pipe = popen((cmd + " >/dev/null 2>&1").c_str(), "r");
    if (!pipe) return -1;
    const int status = pclose(pipe);
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

/// Reference price for the flat-rate arithmetic American put: standard
/// backward binomial tree on an additive stock lattice with step vol*sqrt(dt).
double binomial_put(double x0, double K, double r, double vol, double T, int n) {
    const double dt = T / n, up = vol * std::sqrt(dt), disc = std::exp(-r * dt);
    std::vector<double> v(n + 1);
    for (int i = 0; i <= n; ++i) v[i] = std::max(K - (x0 + (2.0 * i - n) * up), 0.0);
    for (int k = n; k-- > 0;)
        for (int i = 0; i <= k; ++i) {
            const double x = x0 + (2.0 * i - k) * up;
            v[i] = std::max(std::max(K - x, 0.0), disc * 0.5 * (v[i] + v[i + 1]));
        }
    return v[0];
}

/// Shrink all transitions of a drawn instance to at most one grid cell per
/// step on an 8-interval box so the exhaustive oracle's reachable cone stays
/// within its enumeration guard: jumps below 0.9 dx, drift below dx/4 per step.
ProblemSpec clamp_for_enumeration(const RandomInstance& inst, std::size_t n_space,
                                  std::size_t n_steps, bool clamp_drift) {
    ProblemSpec sp = inst.spec;
    const double dxw = (inst.x_max - inst.x_min) / static_cast<double>(n_space);
    auto beta0 = sp.coeffs.beta;
    sp.coeffs.beta = [beta0, dxw](double x, double a, std::size_t i) {
        return std::clamp(beta0(x, a, i), -0.9 * dxw, 0.9 * dxw);
    };
    if (clamp_drift) {
        auto b0 = sp.coeffs.b;
        const double bcap = 0.25 * dxw / (sp.horizon_T / static_cast<double>(n_steps));
        sp.coeffs.b = [b0, bcap](double x, double a) { return std::clamp(b0(x, a), -bcap, bcap); };
    }
    return sp;
}

bool crit_snell_oracle(std::string& detail) {
    double worst = 0.0;
    const std::size_t n_seeds = 50;
    for (std::uint64_t sd = 0; sd < n_seeds; ++sd) {
        const RandomInstance inst = make_random_instance(1000 + sd, 0);
        const ProblemSpec sp = clamp_for_enumeration(inst, 8, 4, true);
        const TimeGrid tg(0.0, sp.horizon_T, 4);
        const Lattice lat = build_lattice(sp, tg, inst.x_min, inst.x_max, 8);
        const Policy pol = random_policy(lat, 77, sd);

        const std::size_t n = lat.n_nodes();
        rng_stream rs(55, sd);
        std::vector<double> pay(lat.grid.layers() * n);
        for (auto& v : pay) v = -1.0 + 2.0 * rs.next_uniform();
        const std::vector<double> terminal(pay.end() - static_cast<std::ptrdiff_t>(n), pay.end());
        std::vector<double> obstacle = pay;
        for (std::size_t j = 0; j < n; ++j)
            obstacle[(lat.grid.layers() - 1) * n + j] = no_obstacle;

        const DriverSpec d = DriverSpec::zero();
        const BackwardField f = solve_rbsde(lat, pol, terminal, obstacle, d);
        const double oracle = snell_bruteforce(lat, pol, pay, d, inst.x0);
        worst = std::max(worst, std::abs(f.y(0, lat.locate(inst.x0)) - oracle));
    }
    detail = std::to_string(n_seeds) + " instances, worst |reflected - oracle| = " + g3(worst);
    return worst <= 1e-12;
}

bool crit_value_oracle(std::string& detail) {
    double worst = 0.0;
    const std::size_t n_seeds = 12;
    for (std::uint64_t sd = 0; sd < n_seeds; ++sd) {
        InstanceOptions opt;
        opt.n_steps = 2;
        opt.max_marks = 1;
        const RandomInstance inst = make_random_instance(2000 + sd, 0, opt);
        const ProblemSpec sp = clamp_for_enumeration(inst, 4, 2, false);
        const TimeGrid tg(0.0, sp.horizon_T, 2);
        const Lattice lat = build_lattice(sp, tg, inst.x_min, inst.x_max, 4);
        const double direct = solve_value(lat, sp).at(0, lat.locate(inst.x0));
        const double oracle = bruteforce_value(lat, sp, inst.x0);
        worst = std::max(worst, std::abs(direct - oracle));
    }
    detail = std::to_string(n_seeds) + " instances, worst |value - enumeration| = " + g3(worst);
    return worst <= 1e-12;
}

bool crit_dpp(std::string& detail) {
    double worst = 0.0;
    std::size_t n_rules = 0, n_bad = 0;
    for (std::uint64_t sd = 0; sd < 20; ++sd) {
        const RandomInstance inst = make_random_instance(3000 + sd, 0);
        const Lattice lat = instance_lattice(inst);
        const ValueSurface direct = solve_value(lat, inst.spec);
        const std::size_t n_steps = lat.grid.n_steps;
        rng_stream rs(333, sd);
        for (std::size_t r = 0; r < 10; ++r) {
            StoppingRule theta = StoppingRule::none(lat);
            if (r % 2 == 0) {
                theta = StoppingRule::at_layer(lat, 1 + rs.next_u64() % n_steps);
            } else {
                const std::size_t k0 = 1 + rs.next_u64() % (n_steps / 2);
                const double c = lat.xs[rs.next_u64() % lat.n_nodes()];
                for (std::size_t k = k0; k < n_steps; ++k)
                    for (std::size_t j = 0; j < lat.n_nodes(); ++j)
                        if (lat.xs[j] >= c) theta.set(k, j, true);
            }
            const DppReport rep = dpp_check(lat, inst.spec, theta, 1, &direct);
            worst = std::max({worst, rep.sub_gap, rep.super_gap});
            ++n_rules;
            if (!rep.pass) ++n_bad;
        }
    }
    detail = std::to_string(n_rules) + " restart rules on 20 instances, worst gap = " + g3(worst)
             + ", failures " + std::to_string(n_bad);
    return n_bad == 0 && worst <= 1e-10;
}

bool crit_comparison(std::string& detail) {
    const PropertyReport rep = test_comparison_shift(2026, 200, 1);
    detail = std::to_string(rep.n_cases) + " cases, " + std::to_string(rep.n_failures)
             + " failures, worst margin " + g3(rep.worst_margin);
    if (!rep.notes.empty()) detail += "; " + rep.notes.front();
    return rep.pass && rep.n_failures == 0;
}

bool crit_batteries(std::string& detail) {
    const std::array<PropertyReport, 4> reps = {
        test_bsde_vs_rbsde(2027, 48, 1),
        test_continuity_fatou(2028, 12, 1),
        test_stability_estimate(2029, 16, 1),
        test_flow_property(2030, 16, 1),
    };
    bool ok = true;
    detail.clear();
    for (const auto& r : reps) {
        ok = ok && r.pass && r.n_failures == 0;
        if (!detail.empty()) detail += ", ";
        detail += r.name + " " + std::to_string(r.n_cases - r.n_failures) + "/"
                  + std::to_string(r.n_cases);
    }
    return ok;
}

bool crit_closed_form(std::string& detail) {
    const RunConfig cfg = parse_config_file(config_path("linear_pide.json"));
    const ProblemSpec spec = cfg.make_spec();
    const double rate = cfg.params.get("rate", 0.05);
    const double T = cfg.params.get("T", 1.0);
    const double truth = cfg.x0 * std::exp(-rate * T);

    std::array<double, 3> err{};
    for (int r = 0; r < 3; ++r) {
        const std::size_t nx = 200u << r, nt = 400u << r;
        PIDEScheme sch;
        sch.space = SpatialGrid(cfg.x_min, cfg.x_max, nx);
        sch.time = TimeGrid(0.0, T, nt);
        const ValueSurface s = solve_hjbvi(spec, sch);
        const std::size_t j0 = static_cast<std::size_t>(
            std::llround((cfg.x0 - cfg.x_min) / sch.space.dx()));
        err[r] = std::abs(s.at(0, j0) - truth);
    }
    const double rel = err[0] / std::abs(truth);
    const double o1 = std::log2(err[0] / err[1]);
    const double o2 = std::log2(err[1] / err[2]);
    detail = "rel err " + g3(rel) + " at 400x200, orders " + g3(o1) + ", " + g3(o2)
             + " on a dt,dx-halving ladder";
    return rel <= 0.01 && o1 >= 0.8 && o1 <= 1.2 && o2 >= 0.8 && o2 <= 1.2;
}

bool crit_binomial(std::string& detail) {
    const RunConfig cfg = parse_config_file(config_path("american_put.json"));
    const ProblemSpec spec = cfg.make_spec();
    const double strike = cfg.params.get("strike", 1.0);
    const double rate = cfg.params.get("rate", 0.05);
    const double vol = cfg.params.get("vol", 0.2);
    const double T = cfg.params.get("T", 1.0);
    const double bench = binomial_put(cfg.x0, strike, rate, vol, T, 200);

    const TimeGrid tg(0.0, T, cfg.n_steps);
    const Lattice lat = build_lattice(spec, tg, cfg.x_min, cfg.x_max, cfg.n_space);
    const double u_chain = solve_value(lat, spec).at(0, lat.locate(cfg.x0));

    PIDEScheme sch;
    sch.space = SpatialGrid(cfg.x_min, cfg.x_max, cfg.n_space);
    sch.time = tg;
    const ValueSurface s = solve_hjbvi(spec, sch);
    const double u_fd = s.at(0, lat.locate(cfg.x0));

    const double rel_chain = std::abs(u_chain - bench) / bench;
    const double rel_fd = std::abs(u_fd - bench) / bench;
    detail = "binomial " + g3(bench) + ", chain rel " + g3(rel_chain) + ", fd rel "
             + g3(rel_fd);
    return rel_chain <= 0.02 && rel_fd <= 0.02;
}

bool crit_cross(std::string& detail) {
    struct Family {
        std::string name;
        ProblemSpec spec;
        double x_min, x_max;
        std::size_t n_space0, n_time0;
    };
    BuiltinParams cd_params;
    cd_params.scalars["T"] = 1.0;
    const std::array<Family, 4> families = {
        Family{"american-put", parse_config_file(config_path("american_put.json")).make_spec(),
               0.0, 2.0, 40, 48},
        Family{"affine", parse_config_file(config_path("affine_jumps.json")).make_spec(),
               -2.0, 2.0, 40, 20},
        Family{"controlled-drift", builtin_registry("controlled-drift", cd_params),
               -2.0, 2.0, 40, 48},
        Family{"linear-pide", parse_config_file(config_path("linear_pide.json")).make_spec(),
               -3.0, 5.0, 40, 16},
    };
    bool ok = true;
    detail.clear();
    for (const auto& fam : families) {
        const CrossReport rep = cross_validate(fam.spec, fam.x_min, fam.x_max, fam.n_space0,
                                               fam.n_time0, 3, 1, 0.05);
        ok = ok && rep.pass;
        if (!detail.empty()) detail += ", ";
        detail += fam.name + " " + g3(rep.rungs.back().sup_err) + "/" + g3(rep.final_tol)
                  + (rep.monotone ? "" : " NOT-MONOTONE") + (rep.pass ? "" : " FAIL");
    }
    return ok;
}

bool crit_residual(std::string& detail) {
    const ProblemSpec put = parse_config_file(config_path("american_put.json")).make_spec();
    PIDEScheme sch;
    sch.space = SpatialGrid(0.0, 2.0, 80);
    sch.time = TimeGrid(0.0, put.horizon_T, 96);
    const ValueSurface s = solve_hjbvi(put, sch);
    const ResidualReport base = viscosity_residual(put, sch, s);

    ValueSurface bad = s;
    bad.u[40 * s.n_nodes + 35] += 1.0;
    const bool corruption_caught = !viscosity_residual(put, sch, bad).pass;

    std::size_t done = 0, bad_corpus = 0;
    double worst_ratio = base.max_abs / base.tolerance;
    for (std::uint64_t sd = 4000; sd < 4040 && done < 6; ++sd) {
        const RandomInstance inst = make_random_instance(sd, 0);
        PIDEScheme isch;
        isch.space = SpatialGrid(inst.x_min, inst.x_max, inst.n_space);
        isch.time = TimeGrid(0.0, inst.spec.horizon_T, inst.n_steps);
        try {
            isch.validate(inst.spec);
        } catch (const scheme_error&) {
            continue;  // drawn outside the explicit scheme's stability envelope
        }
        const ResidualReport rep = viscosity_residual(inst.spec, isch, solve_hjbvi(inst.spec, isch));
        ++done;
        if (!rep.pass) ++bad_corpus;
        worst_ratio = std::max(worst_ratio, rep.max_abs / rep.tolerance);
    }
    detail = "put residual " + g3(base.max_abs) + " <= " + g3(base.tolerance) + ", "
             + std::to_string(done) + " corpus instances, worst residual/tol = " + g3(worst_ratio)
             + ", corruption " + (corruption_caught ? "detected" : "MISSED");
    return base.pass && corruption_caught && done == 6 && bad_corpus == 0;
}

bool crit_cli_determinism(std::string& detail) {
    char tmpl[] = "/tmp/mcss_accept_XXXXXX";
    if (!mkdtemp(tmpl)) {
        detail = "mkdtemp failed";
        return false;
    }
    const std::string dir = tmpl;
    const std::string cli = MCSS_CLI_PATH;
    bool ok = true;
    for (const auto& [cmd, cfg, stem] :
         {std::tuple{std::string("value"), std::string("affine_jumps.json"), std::string("v")},
          std::tuple{std::string("verify --seed 42"), std::string("verify_smoke.json"),
                     std::string("b")}}) {
        std::string ref;
        for (int threads : {1, 2, 8}) {
            const std::string out = dir + "/" + stem + std::to_string(threads);
            const int rc = run_cmd(cli + " " + cmd + " --config " + config_path(cfg)
                                   + " --threads " + std::to_string(threads) + " --out " + out);
            if (rc != 0) {
                detail = cmd + " exited " + std::to_string(rc) + " at --threads "
                         + std::to_string(threads);
                return false;
            }
            const std::string bytes = slurp(out);
            if (ref.empty()) ref = bytes;
            ok = ok && !bytes.empty() && bytes == ref;
        }
    }
    detail = "value and verify outputs byte-identical at --threads 1, 2, 8";
    if (!ok) detail = "outputs differ across thread counts";
    return ok;
}

}  // namespace

int main() {
    using clock = std::chrono::steady_clock;
    struct Criterion {
        const char* what;
        bool (*fn)(std::string&);
    };
    const std::array<Criterion, 10> criteria = {{
        {"reflected backward solves match the exhaustive stopping oracle", crit_snell_oracle},
        {"mixed value matches exhaustive control/stopping enumeration", crit_value_oracle},
        {"value surfaces restarted at stopping rules reproduce themselves", crit_dpp},
        {"shifted comparison holds corpus-wide and its violating twin has teeth",
         crit_comparison},
        {"reflection, continuity, stability, and flow batteries pass", crit_batteries},
        {"linear jump problem hits its closed form at first order", crit_closed_form},
        {"american put within 2% of a 200-step binomial benchmark", crit_binomial},
        {"chain and finite-difference solvers cross-validate on four families", crit_cross},
        {"finite-difference surfaces pass the variational residual check", crit_residual},
        {"cli outputs are byte-identical across thread counts", crit_cli_determinism},
    }};

    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        std::string detail;
        bool ok = false;
        const auto t0 = clock::now();
        try {
            ok = criteria[i].fn(detail);
        } catch (const std::exception& e) {
            detail = std::string("exception: ") + e.what();
        }
        const double secs = std::chrono::duration<double>(clock::now() - t0).count();
        std::cout << (ok ? "PASS" : "FAIL") << " criterion " << (i + 1) << ": "
                  << criteria[i].what << " (" << detail << ") [" << g3(secs) << "s]\n"
                  << std::flush;
        if (!ok) ++failures;
    }
    std::cout << (failures == 0 ? "ACCEPTANCE PASS " : "ACCEPTANCE FAIL ")
              << (criteria.size() - failures) << "/" << criteria.size() << " criteria\n";
    return failures;
}
