// SPDX-License-Identifier: Apache-2.0
/// @file uni4eye.hpp
/// @brief Umbrella header for the whole library.
#pragma once

#include "uni4eye/checkpoint.hpp"
#include "uni4eye/common.hpp"
#include "uni4eye/config.hpp"
#include "uni4eye/datasets.hpp"
#include "uni4eye/evaluation.hpp"
#include "uni4eye/gradcheck.hpp"
#include "uni4eye/imaging.hpp"
#include "uni4eye/layers.hpp"
#include "uni4eye/masking.hpp"
#include "uni4eye/network.hpp"
#include "uni4eye/objective.hpp"
#include "uni4eye/optim.hpp"
#include "uni4eye/patching.hpp"
#include "uni4eye/pipeline.hpp"
