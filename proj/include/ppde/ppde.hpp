#pragma once

#include "ppde/errors.hpp"
#include "ppde/path_space.hpp"
#include "ppde/rng.hpp"
#include "ppde/parallel.hpp"
#include "ppde/model.hpp"
#include "ppde/families.hpp"
#include "ppde/simulate.hpp"
#include "ppde/lattice.hpp"
#include "ppde/rbsde_solver.hpp"
#include "ppde/nonlinear_expectation.hpp"
#include "ppde/frozen_scheme.hpp"
#include "ppde/reference_oracle.hpp"
#include "ppde/config.hpp"
