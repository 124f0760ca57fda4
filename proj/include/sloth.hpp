#pragma once

#include "sloth/tensor.hpp"
#include "sloth/layers.hpp"
#include "sloth/autodiff.hpp"
#include "sloth/multiexit.hpp"
#include "sloth/model_io.hpp"
#include "sloth/policy.hpp"
#include "sloth/metrics.hpp"
#include "sloth/attacks.hpp"
#include "sloth/dataset.hpp"
#include "sloth/train.hpp"
#include "sloth/partition.hpp"
#include "sloth/experiment.hpp"
