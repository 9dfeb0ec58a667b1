// SPDX-License-Identifier: Apache-2.0
//
// Umbrella header.

#pragma once

#include "multisearch/embedding.hpp"
#include "multisearch/harness.hpp"
#include "multisearch/http.hpp"
#include "multisearch/optim.hpp"
#include "multisearch/policy.hpp"
#include "multisearch/retrieval.hpp"
#include "multisearch/reward.hpp"
#include "multisearch/rollout.hpp"
#include "multisearch/trajectory.hpp"
