#pragma once

// Umbrella header for the deterministic-equivalent MIMO-MAC library.

#include "channel.hpp"
#include "core.hpp"
#include "extract.hpp"
#include "mc.hpp"
#include "optimize.hpp"
#include "rng.hpp"
#include "shannon.hpp"
#include "solve.hpp"
