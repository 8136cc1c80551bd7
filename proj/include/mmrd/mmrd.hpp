#pragma once

// Minimax linear weights and bias-aware inference for sharp discontinuity
// designs with one or two running variables.

#include "mmrd/baselines.hpp"
#include "mmrd/bias.hpp"
#include "mmrd/dataset.hpp"
#include "mmrd/design.hpp"
#include "mmrd/errors.hpp"
#include "mmrd/extensions.hpp"
#include "mmrd/grid.hpp"
#include "mmrd/inference.hpp"
#include "mmrd/optimizer.hpp"
#include "mmrd/qp.hpp"
#include "mmrd/types.hpp"
