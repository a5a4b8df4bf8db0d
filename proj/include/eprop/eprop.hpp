#pragma once

// Umbrella header: the whole library.

#include "eprop/checkpoint.hpp"
#include "eprop/data.hpp"
#include "eprop/dynamics.hpp"
#include "eprop/harness.hpp"
#include "eprop/learning.hpp"
#include "eprop/network.hpp"
#include "eprop/oracle.hpp"
#include "eprop/rng.hpp"
#include "eprop/uncertainty.hpp"
