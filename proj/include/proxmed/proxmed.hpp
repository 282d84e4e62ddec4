#pragma once

#include "error.hpp"
#include "rng.hpp"
#include "parallel.hpp"
#include "data.hpp"
#include "bridges.hpp"
#include "solvers.hpp"
#include "estimators.hpp"
#include "inference.hpp"
#include "simulation.hpp"
#include "oracle.hpp"
