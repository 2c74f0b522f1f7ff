#pragma once

#include "pvcnet/checkpoint.hpp"
#include "pvcnet/dataset.hpp"
#include "pvcnet/evaluate.hpp"
#include "pvcnet/explain.hpp"
#include "pvcnet/gradcheck.hpp"
#include "pvcnet/gradient_suite.hpp"
#include "pvcnet/loss.hpp"
#include "pvcnet/metrics.hpp"
#include "pvcnet/model.hpp"
#include "pvcnet/ops.hpp"
#include "pvcnet/random.hpp"
#include "pvcnet/signal.hpp"
#include "pvcnet/tape.hpp"
#include "pvcnet/tensor.hpp"
#include "pvcnet/train.hpp"
