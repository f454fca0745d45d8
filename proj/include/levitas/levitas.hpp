#pragma once

#include "levitas/constants.hpp"
#include "levitas/error.hpp"
#include "levitas/core_model.hpp"
#include "levitas/experiment.hpp"
#include "levitas/rng.hpp"
#include "levitas/langevin.hpp"
#include "levitas/spectral.hpp"
#include "levitas/lorentz_fit.hpp"
#include "levitas/force_pipeline.hpp"
#include "levitas/campaigns.hpp"
#include "levitas/config.hpp"
#include "levitas/io.hpp"
