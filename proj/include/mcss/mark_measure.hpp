#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "common.hpp"

namespace mcss {

/// Finite jump-mark measure: marks e_i with weights nu_i > 0 and a dominating
/// profile Psi(e_i) > 0. The L^2_nu pairing of mark vectors is
/// <l, l'> = sum_i nu_i * l_i * l'_i; jump coefficients are required to stay
/// within C * Psi(e_i) and driver slopes within [-1, Psi(e_i)].
struct MarkMeasure {
    std::vector<double> marks;    ///< e_i
    std::vector<double> weights;  ///< nu_i > 0
    std::vector<double> psi;      ///< Psi(e_i) > 0

    std::size_t size() const { return marks.size(); }

    double total_mass() const {
        double s = 0.0;
        for (double w : weights) s += w;
        return s;
    }

    void validate() const {
        if (weights.size() != marks.size() || psi.size() != marks.size())
            throw validation_error("mark measure: marks/weights/psi lengths differ ("
                                   + std::to_string(marks.size()) + "/"
                                   + std::to_string(weights.size()) + "/"
                                   + std::to_string(psi.size()) + ")");
        for (std::size_t i = 0; i < weights.size(); ++i) {
            if (!(weights[i] > 0.0))
                throw validation_error("mark measure: weight " + std::to_string(i)
                                       + " must be positive");
            if (!(psi[i] > 0.0))
                throw validation_error("mark measure: psi " + std::to_string(i)
                                       + " must be positive");
        }
    }
};

/// <k, k2> in L^2_nu. Lengths must match the measure.
inline double l2nu_inner(const MarkMeasure& nu, const std::vector<double>& k,
                         const std::vector<double>& k2) {
    if (k.size() != nu.size() || k2.size() != nu.size())
        throw validation_error("l2nu_inner: dimension mismatch (measure has "
                               + std::to_string(nu.size()) + " marks, arguments have "
                               + std::to_string(k.size()) + " and "
                               + std::to_string(k2.size()) + ")");
    double s = 0.0;
    for (std::size_t i = 0; i < nu.size(); ++i) s += nu.weights[i] * k[i] * k2[i];
    return s;
}

inline double l2nu_norm(const MarkMeasure& nu, const std::vector<double>& k) {
    return std::sqrt(l2nu_inner(nu, k, k));
}

}  // namespace mcss
