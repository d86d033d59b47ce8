#pragma once

#include "rdpp/alias_table.hpp"
#include "rdpp/bench.hpp"
#include "rdpp/error.hpp"
#include "rdpp/exact_dpp.hpp"
#include "rdpp/linalg.hpp"
#include "rdpp/matrix_io.hpp"
#include "rdpp/oracle.hpp"
#include "rdpp/preprocessing.hpp"
#include "rdpp/rdpp_sampler.hpp"
#include "rdpp/rng.hpp"
#include "rdpp/state_io.hpp"
#include "rdpp/validation.hpp"
