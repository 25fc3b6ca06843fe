#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "common.hpp"
#include "problem.hpp"
#include "rng.hpp"

namespace mcss {

/// Box over which structural assumptions are sampled. Declared Lipschitz and
/// growth constants are only claimed over this region; the builtin families
/// compute their constants against the default box below.
struct SampleBox {
    double x_lo = -5.0, x_hi = 5.0;
    double y_lo = -5.0, y_hi = 5.0;
    double z_lo = -5.0, z_hi = 5.0;
    double k_lo = -5.0, k_hi = 5.0;
};

inline constexpr double assumption_tolerance = 1e-9;

/// Worst observed violation margins for each structural requirement
/// (<= 0 means satisfied; pass demands margin <= 1e-9 for all).
struct AssumptionReport {
    double driver_growth = 0.0;      ///< |f(a,t,x,0,0,0)| - C(1+|x|^p)
    double driver_lipschitz = 0.0;   ///< |f(P)-f(P')| - C*dist
    double driver_monotone = 0.0;    ///< <gamma,dk>_nu - (f(k2)-f(k1))
    double gamma_lower = 0.0;        ///< -1 - gamma_i
    double gamma_psi = 0.0;          ///< |gamma_i| - Psi_i
    double beta_bound = 0.0;         ///< |beta(x,a,i)| - C*Psi_i
    double coeff_lipschitz = 0.0;    ///< coefficient difference quotients - C
    double reward_growth = 0.0;      ///< |h|,|g| - C(1+|x|^p)
    std::size_t samples = 0;
    bool pass = false;

    double worst() const {
        return std::max({driver_growth, driver_lipschitz, driver_monotone, gamma_lower,
                         gamma_psi, beta_bound, coeff_lipschitz, reward_growth});
    }
};

namespace detail {

inline double box_point(double u, double lo, double hi) { return lo + u * (hi - lo); }

}  // namespace detail

/// Quasi-random (Halton) sampling of the structural assumptions over `box`:
/// driver growth, joint Lipschitz via difference quotients, gamma-monotonicity
/// in the jump argument with the declared slope witness, gamma in [-1, Psi],
/// |beta| <= C*Psi, coefficient Lipschitz quotients, and reward growth.
/// `seed` offsets the Halton index so suites can draw distinct point sets.
inline AssumptionReport check_assumptions(const ProblemSpec& spec, std::size_t sample_count,
                                          std::uint64_t seed, const SampleBox& box = {}) {
    spec.validate();
    const std::size_t m = spec.nu.size();
    const double T = spec.horizon_T;
    const double Cf = spec.driver.lipschitz_C;
    const double Cc = spec.coeffs.lipschitz_C;

    AssumptionReport rep;
    rep.samples = sample_count;

    // Halton dimensions: a,t,x,y,z + k + (second point) a',x',y',z' + k'.
    const std::size_t dims = 5 + m + 4 + m;
    std::vector<double> u(dims);
    std::vector<double> k1(m), k2(m);

    const std::uint64_t base_index = 1 + (seed % 9973) * sample_count;
    for (std::size_t s = 0; s < sample_count; ++s) {
        const std::uint64_t idx = base_index + s;
        for (std::size_t d = 0; d < dims; ++d) u[d] = halton(idx, nth_prime(d));

        const double a = detail::box_point(u[0], spec.controls.a_min, spec.controls.a_max);
        const double t = detail::box_point(u[1], 0.0, T);
        const double x = detail::box_point(u[2], box.x_lo, box.x_hi);
        const double y = detail::box_point(u[3], box.y_lo, box.y_hi);
        const double z = detail::box_point(u[4], box.z_lo, box.z_hi);
        for (std::size_t i = 0; i < m; ++i)
            k1[i] = detail::box_point(u[5 + i], box.k_lo, box.k_hi);
        const double a2 = detail::box_point(u[5 + m], spec.controls.a_min, spec.controls.a_max);
        const double x2 = detail::box_point(u[6 + m], box.x_lo, box.x_hi);
        const double y2 = detail::box_point(u[7 + m], box.y_lo, box.y_hi);
        const double z2 = detail::box_point(u[8 + m], box.z_lo, box.z_hi);
        for (std::size_t i = 0; i < m; ++i)
            k2[i] = detail::box_point(u[9 + m + i], box.k_lo, box.k_hi);

        // (i) growth of f(a,t,x,0,0,0)
        std::vector<double> k0(m, 0.0);
        const double f0 = spec.driver.f(a, t, x, 0.0, 0.0, k0);
        require_finite(f0, "driver value", "assumption sampling");
        rep.driver_growth =
            std::max(rep.driver_growth, std::abs(f0) - spec.driver.growth_C
                                            * (1.0 + std::pow(std::abs(x), spec.driver.growth_p)));

        // (ii) joint Lipschitz (t held fixed, as assumed)
        std::vector<double> dk(m);
        for (std::size_t i = 0; i < m; ++i) dk[i] = k2[i] - k1[i];
        const double dist = std::abs(a - a2) + std::abs(x - x2) + std::abs(y - y2)
                            + std::abs(z - z2) + l2nu_norm(spec.nu, dk);
        const double fv1 = spec.driver.f(a, t, x, y, z, k1);
        const double fv2 = spec.driver.f(a2, t, x2, y2, z2, k2);
        rep.driver_lipschitz =
            std::max(rep.driver_lipschitz, std::abs(fv1 - fv2) - Cf * dist);

        // (iii) monotonicity in k with the declared slope witness
        if (m > 0) {
            const double fk1 = spec.driver.f(a, t, x, y, z, k1);
            const double fk2 = spec.driver.f(a, t, x, y, z, k2);
            if (spec.driver.gamma) {
                const std::vector<double> g = spec.driver.gamma(a, t, x, y, z, k1, k2);
                if (g.size() != m)
                    throw validation_error("gamma witness has wrong dimension");
                rep.driver_monotone =
                    std::max(rep.driver_monotone, l2nu_inner(spec.nu, g, dk) - (fk2 - fk1));
                for (std::size_t i = 0; i < m; ++i) {
                    rep.gamma_lower = std::max(rep.gamma_lower, -1.0 - g[i]);
                    rep.gamma_psi = std::max(rep.gamma_psi, std::abs(g[i]) - spec.nu.psi[i]);
                }
            }
        }

        // beta domination and coefficient Lipschitz quotients
        for (std::size_t i = 0; i < m; ++i) {
            const double bv = spec.coeffs.beta(x, a, i);
            require_finite(bv, "beta", "assumption sampling");
            rep.beta_bound = std::max(rep.beta_bound, std::abs(bv) - Cc * spec.nu.psi[i]);
            const double bv2 = spec.coeffs.beta(x2, a2, i);
            const double denom = std::abs(x - x2) + std::abs(a - a2);
            if (denom > 1e-8)
                rep.coeff_lipschitz = std::max(
                    rep.coeff_lipschitz, std::abs(bv - bv2) / denom - Cc * spec.nu.psi[i]);
        }
        {
            const double denom = std::abs(x - x2) + std::abs(a - a2);
            if (denom > 1e-8) {
                rep.coeff_lipschitz = std::max(
                    rep.coeff_lipschitz,
                    std::abs(spec.coeffs.b(x, a) - spec.coeffs.b(x2, a2)) / denom - Cc);
                rep.coeff_lipschitz = std::max(
                    rep.coeff_lipschitz,
                    std::abs(spec.coeffs.sigma(x, a) - spec.coeffs.sigma(x2, a2)) / denom - Cc);
            }
        }

        // reward growth
        const double env =
            spec.reward.growth_C * (1.0 + std::pow(std::abs(x), spec.reward.growth_p));
        rep.reward_growth = std::max(rep.reward_growth, std::abs(spec.reward.g(x)) - env);
        if (spec.reward.has_obstacle)
            rep.reward_growth = std::max(rep.reward_growth, std::abs(spec.reward.h(t, x)) - env);
    }

    rep.pass = rep.worst() <= assumption_tolerance;
    return rep;
}

}  // namespace mcss
