#pragma once

#include "step/config.hpp"
#include "step/dynamics.hpp"
#include "step/errors.hpp"
#include "step/export.hpp"
#include "step/geom_planner.hpp"
#include "step/gridmap.hpp"
#include "step/gridmap_io.hpp"
#include "step/mpc.hpp"
#include "step/mpc_problem.hpp"
#include "step/polygeom.hpp"
#include "step/qp.hpp"
#include "step/render.hpp"
#include "step/risk.hpp"
#include "step/sim.hpp"
