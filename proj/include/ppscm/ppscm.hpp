#pragma once

#include "ppscm/error.hpp"
#include "ppscm/panel.hpp"
#include "ppscm/balance.hpp"
#include "ppscm/simplex.hpp"
#include "ppscm/problem.hpp"
#include "ppscm/solver.hpp"
#include "ppscm/dual.hpp"
#include "ppscm/effects.hpp"
#include "ppscm/tuning.hpp"
#include "ppscm/robustness.hpp"
#include "ppscm/parallel.hpp"
#include "ppscm/inference.hpp"
#include "ppscm/simulate.hpp"
#include "ppscm/serialize.hpp"
