#pragma once

/// Umbrella header: lattice and finite-difference solvers for controlled
/// optimal stopping under driver-induced nonlinear expectations with jumps.

#include "assumptions.hpp"
#include "backward.hpp"
#include "builtins.hpp"
#include "common.hpp"
#include "config.hpp"
#include "io.hpp"
#include "lattice.hpp"
#include "mark_measure.hpp"
#include "pide.hpp"
#include "problem.hpp"
#include "rng.hpp"
#include "simulate.hpp"
#include "theorems.hpp"
#include "time_grid.hpp"
#include "value.hpp"
