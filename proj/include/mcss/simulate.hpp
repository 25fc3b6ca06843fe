#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "common.hpp"
#include "problem.hpp"
#include "rng.hpp"
#include "time_grid.hpp"

namespace mcss {

struct JumpEvent {
    std::uint32_t path;
    std::uint32_t step;   ///< transition index k (jump acts on [t_k, t_{k+1}))
    std::uint32_t mark;
};

/// Euler paths of the controlled jump diffusion. states is laid out
/// [path * layers + k]; the batch is bit-exact reproducible from
/// (coefficients, control, grid, x0, n_paths, seed) for any thread count.
struct PathBatch {
    TimeGrid grid;
    std::size_t n_paths = 0;
    std::vector<double> states;
    std::vector<JumpEvent> jump_log;

    double state(std::size_t path, std::size_t layer) const {
        return states[path * grid.layers() + layer];
    }
};

/// Left-point Euler scheme with compensated Bernoulli jumps:
///   X_{k+1} = X_k + b dt + sigma sqrt(dt) zeta + sum_i beta_i (J_i - nu_i dt),
/// J_i ~ Bernoulli(nu_i dt). Each path draws from its own counter-based
/// stream keyed by (seed, path). Requires dt * sum_i nu_i < 1.
/// `control` maps (layer, x) to the control in force on [t_k, t_{k+1}).
inline PathBatch simulate_paths(const ProblemSpec& spec, const TimeGrid& grid, double x0,
                                std::size_t n_paths,
                                std::uint64_t seed,
                                const std::function<double(std::size_t, double)>& control,
                                int n_threads = 1) {
    spec.validate();
    const std::size_t m = spec.nu.size();
    const double dt = grid.dt();
    const double jump_mass = spec.nu.total_mass() * dt;
    if (jump_mass >= 1.0)
        throw scheme_error("simulate_paths: dt * total jump intensity = "
                           + std::to_string(jump_mass)
                           + " >= 1; maximal admissible dt = "
                           + std::to_string(1.0 / spec.nu.total_mass()));

    PathBatch batch;
    batch.grid = grid;
    batch.n_paths = n_paths;
    batch.states.assign(n_paths * grid.layers(), 0.0);
    const double sqrt_dt = std::sqrt(dt);

    std::vector<std::vector<JumpEvent>> logs(n_paths);
    parallel_for(n_paths, n_threads, [&](std::size_t p) {
        rng_stream rs(seed, p);
        double x = x0;
        batch.states[p * grid.layers()] = x;
        for (std::size_t k = 0; k < grid.n_steps; ++k) {
            const double t = grid.time(k);
            const double a = control ? control(k, x) : spec.controls.values.front();
            const double bv = spec.coeffs.b(x, a);
            const double sv = spec.coeffs.sigma(x, a);
            const double zeta = rs.next_normal();
            double dx = bv * dt + sv * sqrt_dt * zeta;
            for (std::size_t i = 0; i < m; ++i) {
                const double beta = spec.coeffs.beta(x, a, i);
                const bool jumped = rs.next_bernoulli(spec.nu.weights[i] * dt);
                dx += beta * ((jumped ? 1.0 : 0.0) - spec.nu.weights[i] * dt);
                if (jumped)
                    logs[p].push_back({static_cast<std::uint32_t>(p),
                                       static_cast<std::uint32_t>(k),
                                       static_cast<std::uint32_t>(i)});
            }
            x += dx;
            if (!std::isfinite(x))
                throw numeric_error("simulate_paths: non-finite state at step "
                                    + std::to_string(k) + ", x=" + fmt17(batch.states[p * grid.layers() + k])
                                    + ", a=" + fmt17(a) + " (t=" + fmt17(t) + ")");
            batch.states[p * grid.layers() + k + 1] = x;
        }
    });

    for (auto& lg : logs)
        batch.jump_log.insert(batch.jump_log.end(), lg.begin(), lg.end());
    return batch;
}

}  // namespace mcss
