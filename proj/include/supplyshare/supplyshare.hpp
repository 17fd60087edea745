#pragma once

#include "supplyshare/errors.hpp"
#include "supplyshare/data_ingest.hpp"
#include "supplyshare/spline_basis.hpp"
#include "supplyshare/correlation.hpp"
#include "supplyshare/model_core.hpp"
#include "supplyshare/latent.hpp"
#include "supplyshare/likelihood.hpp"
#include "supplyshare/sampler.hpp"
#include "supplyshare/diagnostics.hpp"
#include "supplyshare/summary.hpp"
#include "supplyshare/two_stage.hpp"
#include "supplyshare/variants.hpp"
#include "supplyshare/validation.hpp"
#include "supplyshare/emu.hpp"
#include "supplyshare/draws_io.hpp"
