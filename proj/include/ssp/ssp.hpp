#pragma once

// Umbrella header.

#include "ssp/checkpoint.hpp"
#include "ssp/commands.hpp"
#include "ssp/config.hpp"
#include "ssp/datagen.hpp"
#include "ssp/evaluation.hpp"
#include "ssp/fft.hpp"
#include "ssp/grad_check.hpp"
#include "ssp/model.hpp"
#include "ssp/modes.hpp"
#include "ssp/optim.hpp"
#include "ssp/parallel.hpp"
#include "ssp/training.hpp"
