#pragma once

#include "ftn/checkpoint.hpp"
#include "ftn/config.hpp"
#include "ftn/data.hpp"
#include "ftn/error.hpp"
#include "ftn/experiments.hpp"
#include "ftn/feature_maps.hpp"
#include "ftn/gauss_newton.hpp"
#include "ftn/losses.hpp"
#include "ftn/manifold.hpp"
#include "ftn/optimizers.hpp"
#include "ftn/parallel.hpp"
#include "ftn/rng.hpp"
#include "ftn/tensor_kernels.hpp"
#include "ftn/tree_topology.hpp"
#include "ftn/ttn_model.hpp"
