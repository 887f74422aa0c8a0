#pragma once

// Umbrella header.
#include "increg/bench.hpp"
#include "increg/checkpoint.hpp"
#include "increg/compact.hpp"
#include "increg/config.hpp"
#include "increg/dataset.hpp"
#include "increg/error.hpp"
#include "increg/gemm.hpp"
#include "increg/groups.hpp"
#include "increg/log.hpp"
#include "increg/lowering.hpp"
#include "increg/network.hpp"
#include "increg/presets.hpp"
#include "increg/pruner.hpp"
#include "increg/report.hpp"
#include "increg/scheduler.hpp"
#include "increg/sgd.hpp"
#include "increg/tensor.hpp"
#include "increg/theorem.hpp"
#include "increg/training.hpp"
