#pragma once

// Time-interleaved ADC simulator with reference-channel mismatch
// identification and calibration.

#include "tiadc/errors.hpp"
#include "tiadc/rng.hpp"
#include "tiadc/signal.hpp"
#include "tiadc/converter.hpp"
#include "tiadc/spectrum.hpp"
#include "tiadc/mismatch_estimate.hpp"
#include "tiadc/calibration.hpp"
#include "tiadc/mismatch_id.hpp"
#include "tiadc/experiment.hpp"
