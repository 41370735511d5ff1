// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "iatn/checkpoint.hpp"
#include "iatn/cli.hpp"
#include "iatn/config.hpp"
#include "iatn/data.hpp"
#include "iatn/encoder.hpp"
#include "iatn/error.hpp"
#include "iatn/inference.hpp"
#include "iatn/log.hpp"
#include "iatn/model.hpp"
#include "iatn/ndgrad/graph.hpp"
#include "iatn/ndgrad/optim.hpp"
#include "iatn/ndgrad/rng.hpp"
#include "iatn/ndgrad/tensor.hpp"
#include "iatn/prediction.hpp"
#include "iatn/render.hpp"
#include "iatn/retrieval.hpp"
#include "iatn/textpipe.hpp"
#include "iatn/trainer.hpp"
