#pragma once

// Set-valued sensitivity analysis for deep fully-connected ReLU networks:
// graphical derivatives of the solution mapping, retraining-free solution-set
// estimates, closed-form Lipschitz-like moduli, and empirical inclusion
// checks.

#include "svsa/common.hpp"
#include "svsa/derivatives.hpp"
#include "svsa/finite_diff.hpp"
#include "svsa/io.hpp"
#include "svsa/lipschitz.hpp"
#include "svsa/network.hpp"
#include "svsa/sensitivity.hpp"
#include "svsa/set_metrics.hpp"
#include "svsa/solvers.hpp"
#include "svsa/toy.hpp"
#include "svsa/trainer.hpp"
