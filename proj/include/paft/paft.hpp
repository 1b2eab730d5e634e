// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "paft/checkpoint.hpp"
#include "paft/dataset.hpp"
#include "paft/delta.hpp"
#include "paft/error.hpp"
#include "paft/evaluate.hpp"
#include "paft/experiment.hpp"
#include "paft/gradient_check.hpp"
#include "paft/merge.hpp"
#include "paft/param_set.hpp"
#include "paft/recipe_io.hpp"
#include "paft/rng.hpp"
#include "paft/sparsify.hpp"
#include "paft/tensor.hpp"
#include "paft/toy_model.hpp"
#include "paft/train.hpp"
