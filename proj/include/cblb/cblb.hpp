#pragma once

#include "cblb/config.hpp"
#include "cblb/data.hpp"
#include "cblb/engine.hpp"
#include "cblb/error.hpp"
#include "cblb/inference.hpp"
#include "cblb/parallel.hpp"
#include "cblb/propensity.hpp"
#include "cblb/random.hpp"
#include "cblb/simulation.hpp"
#include "cblb/subset_fit.hpp"
#include "cblb/version.hpp"
