#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>
#include <vector>

#include "mcss/assumptions.hpp"
#include "mcss/theorems.hpp"

using namespace mcss;
using Catch::Approx;
using Catch::Matchers::ContainsSubstring;

TEST_CASE("instance generator is deterministic in (seed, index)", "[theorems][corpus]") {
    const RandomInstance a = make_random_instance(12, 3, {});
    const RandomInstance b = make_random_instance(12, 3, {});
    const RandomInstance c = make_random_instance(12, 4, {});
    REQUIRE(a.n_space == b.n_space);
    REQUIRE(a.n_steps == b.n_steps);
    REQUIRE(a.x0 == b.x0);
    REQUIRE(a.spec.controls.values == b.spec.controls.values);
    REQUIRE(a.spec.nu.weights == b.spec.nu.weights);
    bool same_as_c = a.spec.nu.weights == c.spec.nu.weights
                     && a.spec.controls.values == c.spec.controls.values;
    for (double x : {-1.0, 0.3, 1.7}) {
        REQUIRE(a.spec.coeffs.b(x, 0.0) == b.spec.coeffs.b(x, 0.0));
        REQUIRE(a.spec.coeffs.sigma(x, 0.0) == b.spec.coeffs.sigma(x, 0.0));
        same_as_c = same_as_c && a.spec.coeffs.b(x, 0.0) == c.spec.coeffs.b(x, 0.0);
    }
    REQUIRE_FALSE(same_as_c);
}

TEST_CASE("corpus instances honor their declared constants", "[theorems][corpus]") {
    for (std::uint64_t sd = 0; sd < 8; ++sd) {
        const RandomInstance inst = make_random_instance(600, sd, {});
        const AssumptionReport rep = check_assumptions(inst.spec, 200, 5);
        INFO("index " << sd << ": worst " << rep.worst());
        CHECK(rep.pass);
    }
}

TEST_CASE("corpus lattices build and stay locally consistent", "[theorems][corpus]") {
    for (std::uint64_t sd = 0; sd < 6; ++sd) {
        const RandomInstance inst = make_random_instance(700, sd, {});
        const Lattice lat = instance_lattice(inst, 1);
        REQUIRE(lat.n_nodes() == inst.n_space + 1);
        const ConsistencyReport rep = local_consistency_check(lat, inst.spec);
        INFO("index " << sd << ": mean " << rep.max_mean_err << ", var " << rep.max_var_err);
        CHECK(rep.pass);
    }
}

TEST_CASE("dyadic projection of deterministic rules", "[theorems][dyadic]") {
    const RandomInstance inst = make_random_instance(42, 0, {});
    const Lattice lat = instance_lattice(inst, 1);  // 16 steps
    REQUIRE(lat.grid.n_steps == 16);

    SECTION("rounds up to the next dyadic layer strictly after") {
        const StoppingRule shifted = dyadic_shift(lat, StoppingRule::at_layer(lat, 5), 2);
        // level 2: 4 cells of width 4; 5 -> 8
        for (std::size_t j = 0; j < lat.n_nodes(); ++j) REQUIRE(shifted.at(8, j));
        for (std::size_t j = 0; j < lat.n_nodes(); ++j) REQUIRE_FALSE(shifted.at(7, j));
        // an exactly dyadic firing layer still moves strictly later
        const StoppingRule bumped = dyadic_shift(lat, StoppingRule::at_layer(lat, 4), 2);
        REQUIRE(bumped.at(8, 0));
        REQUIRE_FALSE(bumped.at(4, 0));
    }
    SECTION("the horizon is a fixed point") {
        const StoppingRule same = dyadic_shift(lat, StoppingRule::at_layer(lat, 16), 2);
        for (std::size_t k = 0; k < 16; ++k) REQUIRE_FALSE(same.at(k, 0));
    }
    SECTION("level must divide the step count") {
        REQUIRE_THROWS_MATCHES(dyadic_shift(lat, StoppingRule::at_layer(lat, 5), 5),
                               validation_error,
                               Catch::Matchers::MessageMatches(
                                   ContainsSubstring("multiple of 2^level")));
    }
    SECTION("state-dependent rules are rejected with a pointer to the sweep") {
        StoppingRule theta = StoppingRule::none(lat);
        theta.set(3, 0, true);
        REQUIRE_THROWS_MATCHES(dyadic_shift(lat, theta, 2), validation_error,
                               Catch::Matchers::MessageMatches(
                                   ContainsSubstring("dyadic_stopped_value")));
    }
}

TEST_CASE("two-plane sweep matches the shifted deterministic solve", "[theorems][dyadic]") {
    const RandomInstance inst = make_random_instance(43, 1, {});
    ProblemSpec spec = inst.spec;
    const Lattice lat = instance_lattice(inst, 1);
    const std::size_t n = lat.n_nodes();
    const Policy pol = random_policy(lat, 44, 0);
    const DriverSpec d(spec.driver);

    std::vector<double> xi(lat.grid.layers() * n);
    for (std::size_t k = 0; k < lat.grid.layers(); ++k)
        for (std::size_t j = 0; j < n; ++j)
            xi[k * n + j] = 0.2 + 0.3 * lat.xs[j] - 0.1 * lat.grid.time(k);

    for (std::size_t k0 : {3ul, 5ul, 11ul}) {
        const StoppingRule theta = StoppingRule::at_layer(lat, k0);
        const std::size_t level = 3;  // 8 cells of width 2
        const std::vector<double> W = dyadic_stopped_value(lat, pol, theta, xi, d, level, 1);

        HorizonSpec hz;
        hz.theta = dyadic_shift(lat, theta, level);
        hz.xi = xi;
        const double exact = nonlinear_expectation(lat, pol, hz, d, inst.x0, 1);
        INFO("fire layer " << k0);
        REQUIRE(W[lat.locate(inst.x0)] == Approx(exact).margin(1e-12));
    }
}

TEST_CASE("one-sided limit bounds demand domination on the stopped set",
          "[theorems][dyadic]") {
    const RandomInstance inst = make_random_instance(45, 2, {});
    const Lattice lat = instance_lattice(inst, 1);
    const std::size_t n = lat.n_nodes();
    const StoppingRule theta = StoppingRule::at_layer(lat, 4);
    std::vector<double> xi(lat.grid.layers() * n, 1.0), eta(lat.grid.layers() * n, 0.5);
    REQUIRE_NOTHROW(require_stopped_domination(lat, theta, xi, eta));
    xi[4 * n + 2] = 0.2;  // below eta where the rule stops
    try {
        require_stopped_domination(lat, theta, xi, eta);
        FAIL("expected validation_error");
    } catch (const validation_error& e) {
        const std::string msg = e.what();
        REQUIRE(msg.find("layer 4") != std::string::npos);
        REQUIRE(msg.find("node 2") != std::string::npos);
    }
    // drops outside the stopped set are irrelevant
    xi[4 * n + 2] = 1.0;
    xi[3 * n + 2] = -2.0;
    REQUIRE_NOTHROW(require_stopped_domination(lat, theta, xi, eta));
}

TEST_CASE("epsilon-shift comparison holds across the corpus", "[theorems][battery]") {
    const PropertyReport rep = test_comparison_shift(7, 10, 2);
    INFO("worst margin " << rep.worst_margin);
    REQUIRE(rep.n_failures == 0);
    REQUIRE(rep.pass);
    REQUIRE(rep.n_cases >= 10);
}

TEST_CASE("the slope floor is sharp: gamma below -1 breaks comparison",
          "[theorems][battery]") {
    REQUIRE(detail::comparison_gamma_twin_violates(1));
}

TEST_CASE("reflected solutions dominate and push minimally across the corpus",
          "[theorems][battery]") {
    const PropertyReport rep = test_bsde_vs_rbsde(8, 6, 2);
    INFO("worst margin " << rep.worst_margin);
    REQUIRE(rep.n_failures == 0);
    REQUIRE(rep.pass);
}

TEST_CASE("values are right-continuous along dyadic shifts", "[theorems][battery]") {
    const PropertyReport rep = test_continuity_fatou(9, 3, 2);
    INFO("worst margin " << rep.worst_margin);
    REQUIRE(rep.n_failures == 0);
    REQUIRE(rep.pass);
}

TEST_CASE("a-priori stability bounds the solution drift", "[theorems][battery]") {
    const PropertyReport rep = test_stability_estimate(10, 4, 2);
    INFO("worst margin " << rep.worst_margin);
    REQUIRE(rep.n_failures == 0);
    REQUIRE(rep.pass);
}

TEST_CASE("solves restrict and concatenate along sub-intervals", "[theorems][battery]") {
    const PropertyReport rep = test_flow_property(11, 4, 2);
    INFO("worst margin " << rep.worst_margin);
    REQUIRE(rep.n_failures == 0);
    REQUIRE(rep.pass);
}

TEST_CASE("the full battery aggregates its verdicts", "[theorems][battery]") {
    const VerificationSummary sum = run_verification_suite(5, 8, 2);
    REQUIRE(sum.pass);
    std::set<std::string> names;
    for (const auto& r : sum.reports) {
        INFO(r.name << ": " << r.n_failures << "/" << r.n_cases << " failures");
        CHECK(r.pass);
        REQUIRE(r.n_cases > 0);
        names.insert(r.name);
    }
    REQUIRE(names.size() == sum.reports.size());
}
