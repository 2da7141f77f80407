// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "pts/config.hpp"
#include "pts/corpus.hpp"
#include "pts/edit.hpp"
#include "pts/encoder.hpp"
#include "pts/graph.hpp"
#include "pts/mat.hpp"
#include "pts/metrics.hpp"
#include "pts/model.hpp"
#include "pts/nnet.hpp"
#include "pts/planner.hpp"
#include "pts/seamer.hpp"
#include "pts/training.hpp"
