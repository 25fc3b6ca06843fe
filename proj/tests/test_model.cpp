#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <span>
#include <vector>

#include "mcss/assumptions.hpp"
#include "mcss/builtins.hpp"
#include "mcss/mark_measure.hpp"
#include "mcss/problem.hpp"
#include "mcss/time_grid.hpp"

using namespace mcss;
using Catch::Approx;
using Catch::Matchers::ContainsSubstring;

TEST_CASE("mark measure validates shapes and signs", "[model][measure]") {
    MarkMeasure nu;
    nu.marks = {1.0, 2.0};
    nu.weights = {0.5, 0.3};
    nu.psi = {1.0, 2.0};
    REQUIRE_NOTHROW(nu.validate());
    REQUIRE(nu.total_mass() == Approx(0.8));

    SECTION("length mismatch") {
        nu.psi.pop_back();
        REQUIRE_THROWS_MATCHES(nu.validate(), validation_error,
                               Catch::Matchers::MessageMatches(ContainsSubstring("lengths differ")));
    }
    SECTION("nonpositive weight") {
        nu.weights[1] = 0.0;
        REQUIRE_THROWS_AS(nu.validate(), validation_error);
    }
    SECTION("nonpositive psi") {
        nu.psi[0] = -1.0;
        REQUIRE_THROWS_AS(nu.validate(), validation_error);
    }
}

TEST_CASE("weighted mark pairing", "[model][measure]") {
    MarkMeasure nu;
    nu.marks = {1.0, -1.0};
    nu.weights = {2.0, 0.5};
    nu.psi = {1.0, 1.0};
    const std::vector<double> k1{1.0, 2.0}, k2{3.0, -1.0};
    REQUIRE(l2nu_inner(nu, k1, k2) == Approx(2.0 * 3.0 + 0.5 * -2.0));
    REQUIRE(l2nu_norm(nu, k1) == Approx(std::sqrt(2.0 + 0.5 * 4.0)));
    REQUIRE_THROWS_MATCHES(l2nu_inner(nu, {1.0}, k2), validation_error,
                           Catch::Matchers::MessageMatches(ContainsSubstring("dimension mismatch")));
}

TEST_CASE("control grid rejects bad layouts", "[model]") {
    ControlGrid c;
    REQUIRE_THROWS_AS(c.validate(), validation_error);
    c.values = {0.5, -0.5};
    c.a_min = -1.0;
    c.a_max = 1.0;
    REQUIRE_THROWS_AS(c.validate(), validation_error);  // unsorted
    c.values = {-0.5, 0.5};
    REQUIRE_NOTHROW(c.validate());
    c.values = {-0.5, 1.5};
    REQUIRE_THROWS_AS(c.validate(), validation_error);  // outside declared bounds
}

TEST_CASE("problem spec demands complete callbacks", "[model]") {
    ProblemSpec s = builtin_registry("american-put", [] {
        BuiltinParams p;
        p.scalars = {{"strike", 1.0}, {"rate", 0.05}, {"vol", 0.2}};
        return p;
    }());
    REQUIRE_NOTHROW(s.validate());

    SECTION("missing sigma") {
        s.coeffs.sigma = nullptr;
        REQUIRE_THROWS_AS(s.validate(), validation_error);
    }
    SECTION("missing driver") {
        s.driver.f = nullptr;
        REQUIRE_THROWS_AS(s.validate(), validation_error);
    }
    SECTION("obstacle flagged but unset") {
        s.reward.h = nullptr;
        REQUIRE_THROWS_AS(s.validate(), validation_error);
    }
    SECTION("nonpositive horizon") {
        s.horizon_T = 0.0;
        REQUIRE_THROWS_AS(s.validate(), validation_error);
    }
}

TEST_CASE("stopper reward switches to the terminal payoff exactly at T", "[model]") {
    RewardSpec r;
    r.g = [](double x) { return 2.0 * x; };
    r.h = [](double t, double x) { return x + t; };
    r.has_obstacle = true;
    REQUIRE(eval_bar_h(r, 1.0, 1.0, 3.0) == Approx(6.0));
    REQUIRE(eval_bar_h(r, 0.999, 1.0, 3.0) == Approx(3.999));
    REQUIRE_THROWS_AS(eval_bar_h(r, 1.0 + 1e-12, 1.0, 3.0), validation_error);
    REQUIRE_THROWS_AS(eval_bar_h(r, -0.1, 1.0, 3.0), validation_error);

    r.has_obstacle = false;
    REQUIRE(eval_bar_h(r, 0.5, 1.0, 3.0) == no_obstacle);
    REQUIRE(eval_bar_h(r, 1.0, 1.0, 3.0) == Approx(6.0));
}

TEST_CASE("time grid layout", "[model]") {
    TimeGrid g(0.0, 1.0, 4);
    REQUIRE(g.layers() == 5);
    REQUIRE(g.dt() == Approx(0.25));
    REQUIRE(g.time(0) == Approx(0.0));
    REQUIRE(g.time(4) == Approx(1.0));
    REQUIRE_THROWS_AS(TimeGrid(0.0, 1.0, 0), validation_error);
    REQUIRE_THROWS_AS(TimeGrid(1.0, 1.0, 4), validation_error);
}

TEST_CASE("builtin registry rejects unknown names with a hint", "[model][builtins]") {
    REQUIRE_THROWS_MATCHES(builtin_registry("american-putt"), config_error,
                           Catch::Matchers::MessageMatches(
                               ContainsSubstring("did you mean 'american-put'")));
}

TEST_CASE("builtin parameter hygiene", "[model][builtins]") {
    SECTION("unknown parameter gets a suggestion") {
        BuiltinParams p;
        p.scalars["stirke"] = 1.0;
        p.scalars["rate"] = 0.05;
        p.scalars["vol"] = 0.2;
        REQUIRE_THROWS_MATCHES(builtin_registry("american-put", p), config_error,
                               Catch::Matchers::MessageMatches(
                                   ContainsSubstring("did you mean 'strike'")));
    }
    SECTION("missing required parameters are listed together") {
        BuiltinParams p;
        p.scalars["strike"] = 1.0;
        try {
            builtin_registry("american-put", p);
            FAIL("expected config_error");
        } catch (const config_error& e) {
            const std::string msg = e.what();
            REQUIRE(msg.find("rate") != std::string::npos);
            REQUIRE(msg.find("vol") != std::string::npos);
        }
    }
    SECTION("jump slope below -1 is rejected") {
        BuiltinParams p;
        p.scalars["s0"] = 0.3;
        p.arrays["marks"] = {0.5};
        p.arrays["gammas"] = {-1.5};
        REQUIRE_THROWS_MATCHES(builtin_registry("affine", p), config_error,
                               Catch::Matchers::MessageMatches(ContainsSubstring("gamma")));
    }
    SECTION("gammas must match marks") {
        BuiltinParams p;
        p.scalars["s0"] = 0.3;
        p.arrays["marks"] = {0.5, -0.5};
        p.arrays["gammas"] = {0.1};
        REQUIRE_THROWS_AS(builtin_registry("affine", p), config_error);
    }
    SECTION("table shape needs increasing abscissae") {
        BuiltinParams p;
        p.scalars["s0"] = 0.3;
        p.strings["g_shape"] = "table";
        p.arrays["g_xs"] = {0.0, 0.0};
        p.arrays["g_values"] = {1.0, 2.0};
        REQUIRE_THROWS_AS(builtin_registry("affine", p), config_error);
    }
}

TEST_CASE("builtin reward shapes evaluate as documented", "[model][builtins]") {
    BuiltinParams p;
    p.scalars["s0"] = 0.3;
    p.strings["g_shape"] = "table";
    p.arrays["g_xs"] = {-1.0, 0.0, 2.0};
    p.arrays["g_values"] = {1.0, 0.0, 4.0};
    ProblemSpec s = builtin_registry("affine", p);
    REQUIRE(s.reward.g(-2.0) == Approx(1.0));   // clamped left
    REQUIRE(s.reward.g(-0.5) == Approx(0.5));   // interpolated
    REQUIRE(s.reward.g(1.0) == Approx(2.0));
    REQUIRE(s.reward.g(3.0) == Approx(4.0));    // clamped right

    BuiltinParams q;
    q.scalars["s0"] = 0.3;
    q.strings["g_shape"] = "quad-clip";
    q.scalars["g_center"] = 1.0;
    q.scalars["g_scale"] = 2.0;
    q.scalars["g_cap"] = 0.5;
    ProblemSpec s2 = builtin_registry("affine", q);
    REQUIRE(s2.reward.g(1.0) == Approx(0.0));
    REQUIRE(s2.reward.g(1.4) == Approx(2.0 * 0.16));
    REQUIRE(s2.reward.g(3.0) == Approx(0.5));   // capped
}

TEST_CASE("american put builtin wires the discounting driver", "[model][builtins]") {
    BuiltinParams p;
    p.scalars = {{"strike", 1.0}, {"rate", 0.07}, {"vol", 0.2}};
    ProblemSpec s = builtin_registry("american-put", p);
    REQUIRE(s.reward.has_obstacle);
    REQUIRE(s.reward.g(0.6) == Approx(0.4));
    REQUIRE(s.reward.h(0.3, 1.4) == Approx(0.0));
    REQUIRE(s.coeffs.b(0.7, 0.0) == Approx(0.0));
    REQUIRE(s.coeffs.sigma(0.7, 0.0) == Approx(0.2));
    // f(y) = -rate * y, no other arguments enter
    REQUIRE(s.driver.f(0.0, 0.1, 0.7, 2.0, 0.3, {}) == Approx(-0.14));
}

TEST_CASE("structural assumptions hold for every builtin family", "[model][assumptions]") {
    BuiltinParams put;
    put.scalars = {{"strike", 1.0}, {"rate", 0.05}, {"vol", 0.2}};
    BuiltinParams lin;
    lin.scalars = {{"rate", 0.1}, {"sigma", 0.25}};
    lin.arrays["marks"] = {0.4, -0.3};
    lin.arrays["weights"] = {0.3, 0.3};
    lin.scalars["c0"] = 1.0;
    BuiltinParams aff;
    aff.scalars = {{"s0", 0.35}, {"s2", 0.02}, {"b1", -0.1}, {"b2", 0.2},
                   {"l1", 0.2},  {"cy", -0.3}, {"cz", 0.15}, {"a_min", -1.0},
                   {"a_max", 1.0}, {"n_controls", 3.0}, {"c0", 0.8}};
    aff.arrays["marks"] = {0.25, -0.35};
    aff.arrays["weights"] = {0.3, 0.25};
    aff.arrays["gammas"] = {0.2, -0.3};

    for (auto& [name, params] :
         std::vector<std::pair<std::string, BuiltinParams>>{{"american-put", put},
                                                            {"linear-pide", lin},
                                                            {"affine", aff},
                                                            {"controlled-drift", {}}}) {
        ProblemSpec s = builtin_registry(name, params);
        const AssumptionReport rep = check_assumptions(s, 400, 7);
        INFO(name << ": worst margin " << rep.worst());
        CHECK(rep.pass);
        CHECK(rep.samples == 400);
    }
}

TEST_CASE("assumption sampling detects understated constants", "[model][assumptions]") {
    BuiltinParams p;
    p.scalars["s0"] = 0.3;
    p.scalars["l1"] = 1.0;
    ProblemSpec s = builtin_registry("affine", p);

    SECTION("understated driver Lipschitz bound") {
        s.driver.lipschitz_C = 0.1;
        const AssumptionReport rep = check_assumptions(s, 300, 11);
        REQUIRE_FALSE(rep.pass);
        REQUIRE(rep.driver_lipschitz > 0.0);
    }
    SECTION("understated growth envelope") {
        s.driver.growth_C = 0.0;
        const AssumptionReport rep = check_assumptions(s, 300, 11);
        REQUIRE_FALSE(rep.pass);
        REQUIRE(rep.driver_growth > 0.0);
    }
    SECTION("lying slope witness") {
        // actual slope on k is zero (gamma param 0); the witness claims a
        // positive slope, which breaks the one-sided monotonicity inequality
        BuiltinParams q = p;
        q.arrays["marks"] = {1.0};
        q.arrays["weights"] = {0.5};
        q.arrays["psis"] = {1.0};
        q.arrays["gammas"] = {0.0};
        ProblemSpec sj = builtin_registry("affine", q);
        sj.driver.gamma = [](double, double, double, double, double, std::span<const double>,
                             std::span<const double>) { return std::vector<double>{0.9}; };
        const AssumptionReport rep = check_assumptions(sj, 300, 11);
        REQUIRE_FALSE(rep.pass);
        REQUIRE(rep.driver_monotone > 0.0);
    }
}

TEST_CASE("nearest key suggestions tolerate small typos", "[model]") {
    const std::vector<std::string> keys{"strike", "rate", "vol"};
    REQUIRE(nearest_key("strik", keys) == "strike");
    REQUIRE(nearest_key("rte", keys) == "rate");
    REQUIRE(nearest_key("completely-unrelated", keys).empty());
}

TEST_CASE("fixed-width float formatting round-trips", "[model]") {
    for (double v : {0.1, -1.0 / 3.0, 1e-300, 12345.6789, 0.0}) {
        REQUIRE(std::stod(fmt17(v)) == v);
    }
}
