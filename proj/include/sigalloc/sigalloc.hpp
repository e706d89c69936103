#pragma once

#include "sigalloc/autodiff.hpp"
#include "sigalloc/backtest.hpp"
#include "sigalloc/baselines.hpp"
#include "sigalloc/checkpoint.hpp"
#include "sigalloc/config.hpp"
#include "sigalloc/error.hpp"
#include "sigalloc/experiment.hpp"
#include "sigalloc/gradcheck.hpp"
#include "sigalloc/market.hpp"
#include "sigalloc/model.hpp"
#include "sigalloc/objective.hpp"
#include "sigalloc/parallel.hpp"
#include "sigalloc/rng.hpp"
#include "sigalloc/sigcore.hpp"
#include "sigalloc/train.hpp"
