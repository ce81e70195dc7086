#pragma once

#include "attention.hpp"
#include "checkpoint.hpp"
#include "config.hpp"
#include "cost_ledger.hpp"
#include "cube.hpp"
#include "ensemble.hpp"
#include "errors.hpp"
#include "layers.hpp"
#include "metrics.hpp"
#include "network.hpp"
#include "ops.hpp"
#include "rng.hpp"
#include "synth.hpp"
#include "tensor.hpp"
#include "training.hpp"
