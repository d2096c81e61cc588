#pragma once

// Umbrella header for the static CVaR solver library.

#include "budget_grid.hpp"
#include "bellman.hpp"
#include "crater_walk.hpp"
#include "evaluation.hpp"
#include "mdp.hpp"
#include "policy.hpp"
#include "q_learning.hpp"
#include "q_table.hpp"
#include "value_iteration.hpp"
