// Umbrella header for the whole library.
#pragma once

#include "gar/aggregate.hpp"
#include "gar/autodiff.hpp"
#include "gar/bench.hpp"
#include "gar/datasets.hpp"
#include "gar/experiment.hpp"
#include "gar/heap.hpp"
#include "gar/losses.hpp"
#include "gar/metrics.hpp"
#include "gar/network.hpp"
#include "gar/optim.hpp"
#include "gar/random.hpp"
#include "gar/tensor.hpp"
