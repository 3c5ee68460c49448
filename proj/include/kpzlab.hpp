#pragma once

#include "kpzlab/config.hpp"
#include "kpzlab/core/counter_rng.hpp"
#include "kpzlab/core/error.hpp"
#include "kpzlab/core/estimators.hpp"
#include "kpzlab/core/parallel.hpp"
#include "kpzlab/core/point.hpp"
#include "kpzlab/lattice_she.hpp"
#include "kpzlab/mollifier.hpp"
#include "kpzlab/noise.hpp"
#include "kpzlab/polymer.hpp"
#include "kpzlab/stats.hpp"
#include "kpzlab/tiling.hpp"
