#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <vector>

#include "mcss/builtins.hpp"
#include "mcss/rng.hpp"
#include "mcss/simulate.hpp"

using namespace mcss;
using Catch::Approx;

namespace {

ProblemSpec jumpy_spec() {
    BuiltinParams p;
    p.scalars = {{"s0", 0.3}, {"b0", 0.1}, {"c0", 1.0}, {"T", 1.0}};
    p.arrays["marks"] = {0.4};
    p.arrays["weights"] = {0.5};
    return builtin_registry("affine", p);
}

}  // namespace

TEST_CASE("per-stream rng is deterministic and decorrelated", "[forward][rng]") {
    rng_stream a(42, 7), b(42, 7), c(42, 8);
    for (int i = 0; i < 16; ++i) {
        const std::uint64_t va = a.next_u64();
        REQUIRE(va == b.next_u64());
        REQUIRE(va != c.next_u64());
    }
    rng_stream u(1, 0);
    for (int i = 0; i < 1000; ++i) {
        const double x = u.next_uniform();
        REQUIRE(x >= 0.0);
        REQUIRE(x < 1.0);
    }
}

TEST_CASE("normal draws have sane first moments", "[forward][rng]") {
    rng_stream rs(2024, 3);
    const int n = 20000;
    double s1 = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double z = rs.next_normal();
        s1 += z;
        s2 += z * z;
    }
    REQUIRE(s1 / n == Approx(0.0).margin(4.0 / std::sqrt(double(n))));
    REQUIRE(s2 / n == Approx(1.0).margin(6.0 / std::sqrt(double(n))));
}

TEST_CASE("path batches are identical for any thread count", "[forward][determinism]") {
    const ProblemSpec spec = jumpy_spec();
    const TimeGrid grid(0.0, 1.0, 50);
    auto ctrl = [](std::size_t, double) { return 0.0; };
    const PathBatch one = simulate_paths(spec, grid, 0.5, 64, 99, ctrl, 1);
    const PathBatch four = simulate_paths(spec, grid, 0.5, 64, 99, ctrl, 4);
    REQUIRE(one.states == four.states);
    REQUIRE(one.jump_log.size() == four.jump_log.size());
    for (std::size_t i = 0; i < one.jump_log.size(); ++i) {
        REQUIRE(one.jump_log[i].path == four.jump_log[i].path);
        REQUIRE(one.jump_log[i].step == four.jump_log[i].step);
        REQUIRE(one.jump_log[i].mark == four.jump_log[i].mark);
    }
    const PathBatch other = simulate_paths(spec, grid, 0.5, 64, 100, ctrl, 1);
    REQUIRE(one.states != other.states);
}

TEST_CASE("degenerate dynamics stay put", "[forward]") {
    BuiltinParams p;
    p.scalars["s0"] = 0.0;
    ProblemSpec spec = builtin_registry("affine", p);
    const TimeGrid grid(0.0, 1.0, 10);
    const PathBatch batch = simulate_paths(spec, grid, 1.25, 8, 5,
                                           [](std::size_t, double) { return 0.0; }, 1);
    for (std::size_t pth = 0; pth < batch.n_paths; ++pth)
        for (std::size_t k = 0; k <= 10; ++k) REQUIRE(batch.state(pth, k) == 1.25);
    REQUIRE(batch.jump_log.empty());
}

TEST_CASE("pure drift integrates exactly", "[forward]") {
    BuiltinParams p;
    p.scalars = {{"s0", 0.0}, {"b0", 0.3}};
    ProblemSpec spec = builtin_registry("affine", p);
    const TimeGrid grid(0.0, 2.0, 40);
    const PathBatch batch = simulate_paths(spec, grid, -1.0, 4, 5,
                                           [](std::size_t, double) { return 0.0; }, 1);
    for (std::size_t pth = 0; pth < batch.n_paths; ++pth)
        REQUIRE(batch.state(pth, 40) == Approx(-1.0 + 0.3 * 2.0).epsilon(1e-12));
}

TEST_CASE("diffusion moments match the generator", "[forward][moments]") {
    BuiltinParams p;
    p.scalars = {{"s0", 0.4}, {"b0", 0.2}};
    ProblemSpec spec = builtin_registry("affine", p);
    const TimeGrid grid(0.0, 1.0, 50);
    const std::size_t n = 4000;
    const PathBatch batch = simulate_paths(spec, grid, 0.0, n, 31,
                                           [](std::size_t, double) { return 0.0; }, 2);
    double mean = 0.0, var = 0.0;
    for (std::size_t pth = 0; pth < n; ++pth) mean += batch.state(pth, 50);
    mean /= double(n);
    for (std::size_t pth = 0; pth < n; ++pth) {
        const double d = batch.state(pth, 50) - mean;
        var += d * d;
    }
    var /= double(n - 1);
    // X_T ~ N(bT, sigma^2 T); allow 4 standard errors
    REQUIRE(mean == Approx(0.2).margin(4.0 * 0.4 / std::sqrt(double(n))));
    REQUIRE(var == Approx(0.16).margin(6.0 * 0.16 * std::sqrt(2.0 / double(n))));
}

TEST_CASE("jump frequency and compensation", "[forward][moments]") {
    const ProblemSpec spec = jumpy_spec();  // nu = 0.5, beta = 0.4, b0 = 0.1
    const TimeGrid grid(0.0, 1.0, 100);
    const std::size_t n = 4000;
    const PathBatch batch = simulate_paths(spec, grid, 0.0, n, 17,
                                           [](std::size_t, double) { return 0.0; }, 2);
    const double rate = double(batch.jump_log.size()) / double(n);
    REQUIRE(rate == Approx(0.5).margin(4.0 * std::sqrt(0.5 / double(n))));
    for (const auto& ev : batch.jump_log) {
        REQUIRE(ev.path < n);
        REQUIRE(ev.step < 100);
        REQUIRE(ev.mark == 0);
    }
    // compensated jumps leave the drift alone: E[X_T] = b0 * T
    double mean = 0.0;
    for (std::size_t pth = 0; pth < n; ++pth) mean += batch.state(pth, 100);
    mean /= double(n);
    const double sd = std::sqrt(0.09 + 0.5 * 0.16);  // sigma^2 + nu beta^2
    REQUIRE(mean == Approx(0.1).margin(4.0 * sd / std::sqrt(double(n))));
}

TEST_CASE("a jump moves the state by beta on its step", "[forward]") {
    BuiltinParams p;
    p.scalars = {{"s0", 0.0}, {"c0", 1.0}};
    p.arrays["marks"] = {0.7};
    p.arrays["weights"] = {0.5};
    ProblemSpec spec = builtin_registry("affine", p);
    const TimeGrid grid(0.0, 1.0, 20);
    const PathBatch batch = simulate_paths(spec, grid, 0.0, 32, 23,
                                           [](std::size_t, double) { return 0.0; }, 1);
    REQUIRE_FALSE(batch.jump_log.empty());
    const double comp = 0.7 * 0.5 * grid.dt();  // compensator drift per step
    for (const auto& ev : batch.jump_log) {
        const double inc = batch.state(ev.path, ev.step + 1) - batch.state(ev.path, ev.step);
        REQUIRE(inc == Approx(0.7 - comp).epsilon(1e-12));
    }
}

TEST_CASE("excessive jump mass per step is rejected", "[forward]") {
    BuiltinParams p;
    p.scalars["s0"] = 0.2;
    p.arrays["marks"] = {0.5};
    p.arrays["weights"] = {3.0};
    ProblemSpec spec = builtin_registry("affine", p);
    const TimeGrid grid(0.0, 1.0, 2);  // dt * nu = 1.5
    REQUIRE_THROWS_MATCHES(
        simulate_paths(spec, grid, 0.0, 4, 1, [](std::size_t, double) { return 0.0; }, 1),
        scheme_error,
        Catch::Matchers::MessageMatches(
            Catch::Matchers::ContainsSubstring("maximal admissible dt")));
}

TEST_CASE("control feeds back into the simulated drift", "[forward]") {
    BuiltinParams p;
    p.scalars = {{"s0", 0.0}, {"b2", 1.0}, {"a_min", -1.0}, {"a_max", 1.0},
                 {"n_controls", 3.0}};
    ProblemSpec spec = builtin_registry("affine", p);
    const TimeGrid grid(0.0, 1.0, 10);
    const PathBatch batch = simulate_paths(
        spec, grid, 0.0, 2, 1, [](std::size_t k, double) { return k < 5 ? 1.0 : -1.0; }, 1);
    REQUIRE(batch.state(0, 5) == Approx(0.5).epsilon(1e-12));
    REQUIRE(batch.state(0, 10) == Approx(0.0).margin(1e-12));
}
