// SPDX-License-Identifier: Apache-2.0
//
// Umbrella header for the library (the CLI front end lives in cli.hpp).
#pragma once

#include "ehfo/errors.hpp"
#include "ehfo/experiment.hpp"
#include "ehfo/majorization.hpp"
#include "ehfo/montecarlo.hpp"
#include "ehfo/numerics.hpp"
#include "ehfo/oea.hpp"
#include "ehfo/optimizer.hpp"
#include "ehfo/profiles.hpp"
#include "ehfo/rate_models.hpp"
#include "ehfo/validation.hpp"
