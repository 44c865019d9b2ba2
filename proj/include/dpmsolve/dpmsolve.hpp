#pragma once

#include "dpmsolve/harness.hpp"
#include "dpmsolve/model.hpp"
#include "dpmsolve/ode_solvers.hpp"
#include "dpmsolve/oracle.hpp"
#include "dpmsolve/schedule.hpp"
#include "dpmsolve/sde_solvers.hpp"
#include "dpmsolve/vec.hpp"
