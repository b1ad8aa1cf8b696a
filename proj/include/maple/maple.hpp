// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "maple/data/dataset.hpp"
#include "maple/data/mapf.hpp"
#include "maple/data/synthetic.hpp"
#include "maple/errors.hpp"
#include "maple/eval/metrics.hpp"
#include "maple/model/aggregator.hpp"
#include "maple/model/config.hpp"
#include "maple/model/entity_head.hpp"
#include "maple/model/forward.hpp"
#include "maple/model/params.hpp"
#include "maple/model/selection.hpp"
#include "maple/numerics/functions.hpp"
#include "maple/numerics/grad_check.hpp"
#include "maple/numerics/matrix.hpp"
#include "maple/numerics/ops.hpp"
#include "maple/numerics/random.hpp"
#include "maple/numerics/tape.hpp"
#include "maple/prompt/backend.hpp"
#include "maple/prompt/builder.hpp"
#include "maple/prompt/pack.hpp"
#include "maple/text/embeddings.hpp"
#include "maple/text/encoder.hpp"
#include "maple/train/experiment.hpp"
#include "maple/train/trainer.hpp"
