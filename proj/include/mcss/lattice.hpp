#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "common.hpp"
#include "problem.hpp"
#include "time_grid.hpp"

namespace mcss {

/// One transition of a kernel row: target node, probability, and the
/// Brownian-increment proxy xi^W attached to the move. Under each row,
/// E[xi^W] = 0 and E[(xi^W)^2] = dt exactly; jump branches carry xi^W = 0.
struct LatticeEntry {
    std::uint32_t target = 0;
    double prob = 0.0;
    double xw = 0.0;
};

/// Linear interpolation footprint of a jump destination x + beta(x,a,e_i)
/// on the next layer: value ~ w_lo * V[lo] + (1 - w_lo) * V[lo+1].
struct JumpTarget {
    std::uint32_t lo = 0;
    double w_lo = 1.0;
    double beta = 0.0;
    bool clamped = false;
};

struct LatticeBuildReport {
    double dt = 0.0, dx = 0.0;
    double cfl_ratio = 0.0;        ///< dt / (dx^2 / max(sigma^2 + |b| dx)); <= 1 required
    double jump_mass = 0.0;        ///< dt * sum_i nu_i; < 1 required
    double max_row_defect = 0.0;   ///< max |1 - sum(prob)| over rows
    double max_var_overshoot = 0.0;///< conditional-variance clamp, see build notes
    double max_var_deficit = 0.0;  ///< boundary rows: variance dropped to stay on-grid
    std::size_t clamped_jumps = 0; ///< jump targets pushed back into the box
};

/// Controlled Markov chain on a shared uniform spatial grid. Coefficients are
/// time-independent, so one kernel family serves every layer; accessors still
/// take a layer index for call-site clarity. Rows factor as a diffusion
/// trinomial (probability 1 - dt sum nu_i) plus one bracketing pair per mark
/// (probability nu_i dt), each row a probability vector.
class Lattice {
  public:
    TimeGrid grid;
    std::vector<double> xs;
    std::vector<double> controls;
    LatticeBuildReport report;

    std::size_t n_nodes() const { return xs.size(); }
    std::size_t n_controls() const { return controls.size(); }
    std::size_t n_marks() const { return m_; }
    std::size_t row_width() const { return row_width_; }
    double dx() const { return dx_; }
    double dt() const { return grid.dt(); }

    std::span<const LatticeEntry> row(std::size_t /*layer*/, std::size_t node,
                                      std::size_t ctrl) const {
        return {&entries_[(node * controls.size() + ctrl) * row_width_], row_width_};
    }

    std::span<const JumpTarget> jump_targets(std::size_t /*layer*/, std::size_t node,
                                             std::size_t ctrl) const {
        return {&jumps_[(node * controls.size() + ctrl) * m_], m_};
    }

    /// Node index for a grid-aligned abscissa (within 1e-9 * dx); errors
    /// otherwise so that anchors are never silently snapped.
    std::size_t locate(double x) const {
        const double pos = (x - xs.front()) / dx_;
        const double r = std::round(pos);
        if (r < 0 || r >= static_cast<double>(xs.size()) || std::abs(pos - r) > 1e-9)
            throw validation_error("lattice: x=" + fmt17(x) + " is not a grid node");
        return static_cast<std::size_t>(r);
    }

    /// Interpolation pair for an arbitrary in-box abscissa.
    std::pair<std::size_t, double> bracket(double x) const {
        if (x <= xs.front()) return {0, 1.0};
        if (x >= xs.back()) return {xs.size() - 2, 0.0};
        auto lo = static_cast<std::size_t>((x - xs.front()) / dx_);
        if (lo >= xs.size() - 1) lo = xs.size() - 2;
        return {lo, (xs[lo + 1] - x) / dx_};
    }

    // Populated by build_lattice.
    std::vector<LatticeEntry> entries_;
    std::vector<JumpTarget> jumps_;
    std::size_t m_ = 0;
    std::size_t row_width_ = 3;
    double dx_ = 0.0;
};

namespace detail {

/// Build one kernel row. The diffusion branch is a trinomial centred on the
/// node nearest to the conditionally-compensated drift target x + m1, with
/// probabilities solving the exact mean/second-moment equations
///   p_u - p_d = delta/dx,   p_u + p_d = (v + delta^2)/dx^2.
/// Exact matching is admissible iff v >= |delta|(dx - |delta|); below that
/// floor no grid-supported distribution attains the target variance, so the
/// row takes the minimum-variance pair and records the overshoot.
inline void build_row(const ProblemSpec& spec, const std::vector<double>& xs, double dx,
                      double dt, std::size_t j, double a, LatticeEntry* out,
                      JumpTarget* jt_out, LatticeBuildReport& rep, std::mutex& rep_mu) {
    const std::size_t m = spec.nu.size();
    const std::size_t n = xs.size();
    const double x = xs[j];
    const double bv = spec.coeffs.b(x, a);
    const double sv = spec.coeffs.sigma(x, a);
    require_finite(bv, "drift", "node " + fmt17(x) + ", control " + fmt17(a));
    require_finite(sv, "volatility", "node " + fmt17(x) + ", control " + fmt17(a));

    double q0 = 1.0;
    double S1 = 0.0, S2 = 0.0;     // jump-branch raw moments of displacement
    double beta2_nu = 0.0;         // sum_i nu_i beta_i^2 (true, pre-clamp)
    std::size_t clamped = 0;

    for (std::size_t i = 0; i < m; ++i) {
        const double qi = spec.nu.weights[i] * dt;
        q0 -= qi;
        const double beta = spec.coeffs.beta(x, a, i);
        require_finite(beta, "jump size", "node " + fmt17(x) + ", control " + fmt17(a));
        beta2_nu += spec.nu.weights[i] * beta * beta;
        double y = x + beta;
        bool was_clamped = false;
        if (y < xs.front()) { y = xs.front(); was_clamped = true; }
        if (y > xs.back()) { y = xs.back(); was_clamped = true; }
        auto lo = static_cast<std::size_t>((y - xs.front()) / dx);
        if (lo >= n - 1) lo = n - 2;
        double w = (xs[lo + 1] - y) / dx;
        w = std::min(1.0, std::max(0.0, w));
        jt_out[i] = {static_cast<std::uint32_t>(lo), w, beta, was_clamped};
        if (was_clamped) ++clamped;
        const double d_lo = xs[lo] - x, d_hi = xs[lo + 1] - x;
        out[3 + 2 * i] = {static_cast<std::uint32_t>(lo), qi * w, 0.0};
        out[3 + 2 * i + 1] = {static_cast<std::uint32_t>(lo + 1), qi * (1.0 - w), 0.0};
        S1 += qi * (w * d_lo + (1.0 - w) * d_hi);
        S2 += qi * (w * d_lo * d_lo + (1.0 - w) * d_hi * d_hi);
    }

    const double M1 = bv * dt;
    const double M2 = (sv * sv + beta2_nu) * dt + M1 * M1;
    const double m1 = (M1 - S1) / q0;
    const double m2 = (M2 - S2) / q0;
    const double v = m2 - m1 * m1;

    double y0 = x + m1;
    bool y0_clamped = false;
    if (y0 < xs.front()) { y0 = xs.front(); y0_clamped = true; }
    if (y0 > xs.back()) { y0 = xs.back(); y0_clamped = true; }
    auto c = static_cast<std::size_t>(std::llround((y0 - xs.front()) / dx));
    if (c >= n) c = n - 1;
    const double delta = y0 - xs[c];
    const double v_min = std::abs(delta) * (dx - std::abs(delta));
    double overshoot = 0.0;
    double v_eff = v;
    if (v_eff < v_min) {
        overshoot = v_min - v_eff;
        v_eff = v_min;
    }

    // Clamped jump branches hand their variance to the conditional trinomial
    // (total moments are matched). Near the box edge that can exceed what one
    // grid cell supports; such boundary rows drop the excess (they are
    // excluded from the consistency score anyway). An interior overflow is a
    // genuine step-size violation and aborts with the admissible dt.
    const bool boundary_affected = clamped > 0 || y0_clamped || c == 0 || c + 1 >= n;
    const double v_cap = dx * dx - delta * delta;
    double deficit = 0.0;
    if (v_eff > v_cap) {
        if (!boundary_affected)
            throw scheme_error("lattice row at x=" + fmt17(x) + ", a=" + fmt17(a)
                               + " needs conditional variance " + fmt17(v_eff)
                               + " > grid capacity " + fmt17(v_cap) + "; reduce dt below "
                               + fmt17(dx * dx
                                       / std::max(1e-300,
                                                  sv * sv + beta2_nu + std::abs(bv) * dx)));
        deficit = v_eff - v_cap;
        v_eff = v_cap;
    }

    const double p_sum = (v_eff + delta * delta) / (dx * dx);
    const double p_diff = delta / dx;
    double p_u = 0.5 * (p_sum + p_diff);
    double p_d = 0.5 * (p_sum - p_diff);
    double p_c = 1.0 - p_u - p_d;
    if (p_c < -1e-12 || p_u < -1e-12 || p_d < -1e-12)
        throw scheme_error("lattice row at x=" + fmt17(x) + ", a=" + fmt17(a)
                           + " is not a probability vector (p_mid=" + fmt17(p_c)
                           + "); reduce dt below " + fmt17(dx * dx / std::max(1e-300, sv * sv + beta2_nu + std::abs(bv) * dx)));
    p_u = std::max(0.0, p_u);
    p_d = std::max(0.0, p_d);
    p_c = std::max(0.0, p_c);

    const std::uint32_t t_d = static_cast<std::uint32_t>(c == 0 ? 0 : c - 1);
    const std::uint32_t t_c = static_cast<std::uint32_t>(c);
    const std::uint32_t t_u = static_cast<std::uint32_t>(c + 1 >= n ? n - 1 : c + 1);
    out[0] = {t_d, q0 * p_d, 0.0};
    out[1] = {t_c, q0 * p_c, 0.0};
    out[2] = {t_u, q0 * p_u, 0.0};

    // Brownian proxy from the realised diffusion branch: conditional moments
    // of the actual (possibly boundary-folded) entries, so E[xi^W]=0 and
    // E[(xi^W)^2]=dt hold by construction.
    double mh = 0.0, vh = 0.0;
    for (int r = 0; r < 3; ++r) mh += out[r].prob * (xs[out[r].target] - x);
    mh /= q0;
    for (int r = 0; r < 3; ++r) vh += out[r].prob * sqr(xs[out[r].target] - x - mh);
    vh /= q0;
    const double s = vh > 1e-300 ? std::sqrt(dt / (q0 * vh)) : 0.0;
    for (int r = 0; r < 3; ++r) out[r].xw = (xs[out[r].target] - x - mh) * s;

    double defect = -1.0;
    for (std::size_t r = 0; r < 3 + 2 * m; ++r) defect += out[r].prob;
    {
        std::lock_guard<std::mutex> lk(rep_mu);
        rep.max_row_defect = std::max(rep.max_row_defect, std::abs(defect));
        rep.max_var_overshoot = std::max(rep.max_var_overshoot, overshoot);
        rep.max_var_deficit = std::max(rep.max_var_deficit, deficit);
        rep.clamped_jumps += clamped;
    }
}

}  // namespace detail

/// Build the controlled chain on [x_min, x_max] with n_space intervals.
/// Preconditions (scheme errors otherwise, stating the admissible step):
/// dt <= dx^2 / max_{x,a}(sigma^2 + |b| dx) and dt * sum_i nu_i < 1.
inline Lattice build_lattice(const ProblemSpec& spec, const TimeGrid& grid, double x_min,
                             double x_max, std::size_t n_space, int n_threads = 1) {
    spec.validate();
    if (!(x_max > x_min)) throw validation_error("build_lattice: x_max must exceed x_min");
    if (n_space < 2) throw validation_error("build_lattice: need at least 2 intervals");

    Lattice lat;
    lat.grid = grid;
    lat.controls = spec.controls.values;
    lat.m_ = spec.nu.size();
    lat.row_width_ = 3 + 2 * lat.m_;
    lat.dx_ = (x_max - x_min) / static_cast<double>(n_space);
    lat.xs.resize(n_space + 1);
    for (std::size_t j = 0; j <= n_space; ++j)
        lat.xs[j] = j == n_space ? x_max : x_min + static_cast<double>(j) * lat.dx_;

    const double dt = grid.dt();
    const double dx = lat.dx_;
    const double jump_mass = spec.nu.total_mass() * dt;
    if (jump_mass >= 1.0)
        throw scheme_error("build_lattice: dt * total jump intensity = " + fmt17(jump_mass)
                           + " >= 1; maximal admissible dt = "
                           + fmt17(1.0 / spec.nu.total_mass()));

    double worst = 0.0;
    for (std::size_t j = 0; j <= n_space; ++j)
        for (double a : lat.controls) {
            const double bv = spec.coeffs.b(lat.xs[j], a);
            const double sv = spec.coeffs.sigma(lat.xs[j], a);
            worst = std::max(worst, sv * sv + std::abs(bv) * dx);
        }
    const double dt_max = worst > 0.0 ? dx * dx / worst : std::numeric_limits<double>::infinity();
    if (dt > dt_max * (1.0 + 1e-12))
        throw scheme_error("build_lattice: CFL violated: dt=" + fmt17(dt)
                           + " exceeds dx^2/max(sigma^2+|b|dx)=" + fmt17(dt_max)
                           + "; increase n_steps to "
                           + std::to_string(static_cast<std::size_t>(
                                 std::ceil((grid.T - grid.t0) / dt_max))));

    lat.report.dt = dt;
    lat.report.dx = dx;
    lat.report.cfl_ratio = worst > 0.0 ? dt / dt_max : 0.0;
    lat.report.jump_mass = jump_mass;

    const std::size_t q = lat.controls.size();
    lat.entries_.resize((n_space + 1) * q * lat.row_width_);
    lat.jumps_.resize((n_space + 1) * q * std::max<std::size_t>(lat.m_, 1));
    if (lat.m_ == 0) lat.jumps_.clear();

    std::mutex rep_mu;
    parallel_for(n_space + 1, n_threads, [&](std::size_t j) {
        for (std::size_t ci = 0; ci < q; ++ci) {
            LatticeEntry* out = &lat.entries_[(j * q + ci) * lat.row_width_];
            JumpTarget* jt = lat.m_ ? &lat.jumps_[(j * q + ci) * lat.m_] : nullptr;
            detail::build_row(spec, lat.xs, dx, dt, j, lat.controls[ci], out, jt, lat.report,
                              rep_mu);
        }
    });
    log_info("lattice built: " + std::to_string(lat.xs.size()) + " nodes, "
             + std::to_string(q) + " controls, cfl_ratio=" + fmt17(lat.report.cfl_ratio)
             + ", clamped_jumps=" + std::to_string(lat.report.clamped_jumps));
    return lat;
}

struct ConsistencyReport {
    double max_mean_err = 0.0;
    double max_var_err = 0.0;
    double tolerance = 0.0;      ///< 10 * dt^2
    std::size_t interior_rows = 0;
    std::size_t skipped_rows = 0;  ///< boundary-affected rows, not scored
    bool pass = false;
};

/// Recompute first/second moments from the stored kernel rows and compare
/// with b*dt and (sigma^2 + sum nu_i beta_i^2)*dt on interior rows (rows whose
/// stencil and jump targets were not boundary-clamped). Tolerance 10*dt^2.
inline ConsistencyReport local_consistency_check(const Lattice& lat, const ProblemSpec& spec) {
    ConsistencyReport rep;
    const double dt = lat.dt();
    rep.tolerance = 10.0 * dt * dt;
    const std::size_t n = lat.n_nodes();
    for (std::size_t j = 0; j < n; ++j) {
        const double x = lat.xs[j];
        for (std::size_t ci = 0; ci < lat.n_controls(); ++ci) {
            const double a = lat.controls[ci];
            bool interior = j > 0 && j + 1 < n;
            auto row = lat.row(0, j, ci);
            for (const auto& e : row)
                if (e.target == 0 || e.target + 1 == n) interior = false;
            for (const auto& t : lat.jump_targets(0, j, ci))
                if (t.clamped) interior = false;
            if (!interior) {
                ++rep.skipped_rows;
                continue;
            }
            double m1 = 0.0, m2 = 0.0;
            for (const auto& e : row) {
                const double d = lat.xs[e.target] - x;
                m1 += e.prob * d;
                m2 += e.prob * d * d;
            }
            double beta2 = 0.0;
            for (std::size_t i = 0; i < lat.n_marks(); ++i)
                beta2 += spec.nu.weights[i] * sqr(spec.coeffs.beta(x, a, i));
            const double target_mean = spec.coeffs.b(x, a) * dt;
            const double target_var = (sqr(spec.coeffs.sigma(x, a)) + beta2) * dt;
            rep.max_mean_err = std::max(rep.max_mean_err, std::abs(m1 - target_mean));
            rep.max_var_err = std::max(rep.max_var_err, std::abs(m2 - m1 * m1 - target_var));
            ++rep.interior_rows;
        }
    }
    rep.pass = rep.max_mean_err <= rep.tolerance && rep.max_var_err <= rep.tolerance;
    return rep;
}

}  // namespace mcss
