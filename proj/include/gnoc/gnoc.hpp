#pragma once

#include "gnoc/errors.hpp"
#include "gnoc/timegrid.hpp"
#include "gnoc/csv.hpp"
#include "gnoc/ode.hpp"
#include "gnoc/model.hpp"
#include "gnoc/tracking.hpp"
#include "gnoc/linearization.hpp"
#include "gnoc/aux_solvers.hpp"
#include "gnoc/outer_solvers.hpp"
#include "gnoc/road_profile.hpp"
