#pragma once

// Umbrella header.

#include "clusterlab/estimators.hpp"
#include "clusterlab/functionals.hpp"
#include "clusterlab/generators.hpp"
#include "clusterlab/iid_oracle.hpp"
#include "clusterlab/io.hpp"
#include "clusterlab/parallel.hpp"
#include "clusterlab/processes.hpp"
#include "clusterlab/rng.hpp"
#include "clusterlab/runner.hpp"
#include "clusterlab/stats.hpp"
#include "clusterlab/tail_models.hpp"
#include "clusterlab/window.hpp"
