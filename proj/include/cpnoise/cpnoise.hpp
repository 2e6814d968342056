#pragma once

// Convenience aggregate for the whole library.

#include "cpnoise/adversarial.hpp"
#include "cpnoise/bounds.hpp"
#include "cpnoise/calibrate.hpp"
#include "cpnoise/config.hpp"
#include "cpnoise/dataset.hpp"
#include "cpnoise/errors.hpp"
#include "cpnoise/experiment.hpp"
#include "cpnoise/fnr_sim.hpp"
#include "cpnoise/losses.hpp"
#include "cpnoise/noise.hpp"
#include "cpnoise/online.hpp"
#include "cpnoise/parallel.hpp"
#include "cpnoise/rng.hpp"
#include "cpnoise/scores.hpp"
#include "cpnoise/synth.hpp"
