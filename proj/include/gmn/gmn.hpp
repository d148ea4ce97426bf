#pragma once

// Umbrella header for the gmn library.

#include <gmn/core.hpp>
#include <gmn/parallel.hpp>
#include <gmn/linalg.hpp>
#include <gmn/edge_family.hpp>
#include <gmn/data_model.hpp>
#include <gmn/sampler.hpp>
#include <gmn/refit.hpp>
#include <gmn/solver.hpp>
#include <gmn/tuning.hpp>
#include <gmn/baselines.hpp>
#include <gmn/metrics.hpp>
#include <gmn/bench.hpp>
#include <gmn/analysis.hpp>
