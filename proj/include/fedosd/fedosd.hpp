#pragma once

#include "fedosd/baselines.hpp"
#include "fedosd/checkpoint.hpp"
#include "fedosd/config.hpp"
#include "fedosd/data.hpp"
#include "fedosd/directions.hpp"
#include "fedosd/engine.hpp"
#include "fedosd/error.hpp"
#include "fedosd/experiment.hpp"
#include "fedosd/linalg.hpp"
#include "fedosd/matrix.hpp"
#include "fedosd/metrics.hpp"
#include "fedosd/nn.hpp"
#include "fedosd/plot.hpp"
#include "fedosd/random.hpp"
#include "fedosd/runner.hpp"
