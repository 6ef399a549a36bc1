#pragma once

#include "fortet/error.hpp"
#include "fortet/numeric.hpp"
#include "fortet/grid.hpp"
#include "fortet/problem.hpp"
#include "fortet/feasibility.hpp"
#include "fortet/hilbert.hpp"
#include "fortet/fortet_solver.hpp"
#include "fortet/sinkhorn.hpp"
#include "fortet/bridge.hpp"
