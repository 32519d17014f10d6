#pragma once

// Everything in one include.

#include "tsadv/attack.hpp"
#include "tsadv/audit.hpp"
#include "tsadv/distillation.hpp"
#include "tsadv/dtw.hpp"
#include "tsadv/error.hpp"
#include "tsadv/evaluation.hpp"
#include "tsadv/grid_search.hpp"
#include "tsadv/models.hpp"
#include "tsadv/nn/layers.hpp"
#include "tsadv/nn/losses.hpp"
#include "tsadv/nn/model.hpp"
#include "tsadv/nn/serialize.hpp"
#include "tsadv/nn/tensor.hpp"
#include "tsadv/pipeline.hpp"
#include "tsadv/synthetic.hpp"
#include "tsadv/teacher.hpp"
#include "tsadv/timeseries.hpp"
#include "tsadv/wilcoxon.hpp"
