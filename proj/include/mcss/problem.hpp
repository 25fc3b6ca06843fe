#pragma once

#include <algorithm>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "common.hpp"
#include "mark_measure.hpp"

namespace mcss {

/// Forward coefficients b(x,a), sigma(x,a), beta(x,a,mark_index) with their
/// declared Lipschitz constant. beta must satisfy |beta(x,a,i)| <= C*Psi(e_i).
struct CoefficientSet {
    std::function<double(double x, double a)> b;
    std::function<double(double x, double a)> sigma;
    std::function<double(double x, double a, std::size_t mark)> beta;
    double lipschitz_C = 0.0;
};

/// Driver f(a,t,x,y,z,k) of the nonlinear expectation, with a slope witness
/// gamma for the jump argument: for any k1,k2,
///   f(...,k2) - f(...,k1) >= <gamma(a,t,x,y,z,k1,k2), k2-k1>_nu,
/// with gamma_i >= -1 and |gamma_i| <= Psi(e_i).
struct Driver {
    std::function<double(double a, double t, double x, double y, double z,
                         std::span<const double> k)>
        f;
    std::function<std::vector<double>(double a, double t, double x, double y, double z,
                                      std::span<const double> k1,
                                      std::span<const double> k2)>
        gamma;
    double lipschitz_C = 0.0;  ///< joint (a,x,y,z,k) Lipschitz bound
    double growth_C = 0.0;     ///< |f(a,t,x,0,0,0)| <= growth_C * (1+|x|^p)
    double growth_p = 1.0;
};

/// Intermediate reward h(t,x) (may be absent: no_obstacle sentinel) and
/// terminal reward g(x), with a shared polynomial growth envelope.
struct RewardSpec {
    std::function<double(double t, double x)> h;
    std::function<double(double x)> g;
    double growth_C = 0.0;
    double growth_p = 1.0;
    bool has_obstacle = true;
};

/// Sorted admissible control values inside declared bounds.
struct ControlGrid {
    std::vector<double> values;
    double a_min = 0.0;
    double a_max = 0.0;

    void validate() const {
        if (values.empty()) throw validation_error("control grid: empty");
        if (!std::is_sorted(values.begin(), values.end()))
            throw validation_error("control grid: values not sorted");
        if (values.front() < a_min - 1e-15 || values.back() > a_max + 1e-15)
            throw validation_error("control grid: values outside declared bounds");
    }
};

/// Full problem datum: dynamics + expectation + rewards + controls + horizon.
struct ProblemSpec {
    MarkMeasure nu;
    CoefficientSet coeffs;
    Driver driver;
    RewardSpec reward;
    ControlGrid controls;
    double horizon_T = 1.0;

    void validate() const {
        nu.validate();
        controls.validate();
        if (!(horizon_T > 0.0)) throw validation_error("horizon_T must be positive");
        if (!coeffs.b || !coeffs.sigma || !coeffs.beta)
            throw validation_error("coefficient callbacks must all be set");
        if (!driver.f) throw validation_error("driver callback must be set");
        if (!reward.g) throw validation_error("terminal reward must be set");
        if (reward.has_obstacle && !reward.h)
            throw validation_error("obstacle flagged present but h is unset");
    }
};

/// Reward seen by the stopper: h(t,x) strictly before T, g(x) at T (exact
/// comparison; the terminal layer is never an obstacle). t outside [0,T] is a
/// domain error.
inline double eval_bar_h(const RewardSpec& reward, double t, double T, double x) {
    if (!(t >= 0.0) || !(t <= T))
        throw validation_error("eval_bar_h: t=" + std::to_string(t) + " outside [0,"
                               + std::to_string(T) + "]");
    if (t == T) return reward.g(x);
    if (!reward.has_obstacle) return no_obstacle;
    return reward.h(t, x);
}

}  // namespace mcss
