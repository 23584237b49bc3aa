#pragma once

#include "splitmix/nn/arch.hpp"
#include "splitmix/nn/bn_stats.hpp"
#include "splitmix/nn/checkpoint.hpp"
#include "splitmix/nn/layers.hpp"
#include "splitmix/nn/loss.hpp"
#include "splitmix/nn/model.hpp"
#include "splitmix/nn/optim.hpp"
#include "splitmix/nn/predict.hpp"
#include "splitmix/nn/tensor.hpp"
#include "splitmix/nn/width.hpp"
