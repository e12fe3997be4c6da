#pragma once

// Umbrella header for the whole library.

#include "jmvl/adam.hpp"
#include "jmvl/arch.hpp"
#include "jmvl/checkpoint.hpp"
#include "jmvl/common.hpp"
#include "jmvl/config.hpp"
#include "jmvl/data.hpp"
#include "jmvl/dists.hpp"
#include "jmvl/gradcheck.hpp"
#include "jmvl/infer.hpp"
#include "jmvl/models.hpp"
#include "jmvl/net.hpp"
#include "jmvl/oracles.hpp"
#include "jmvl/pgm.hpp"
#include "jmvl/rng.hpp"
#include "jmvl/tensor.hpp"
#include "jmvl/train.hpp"
