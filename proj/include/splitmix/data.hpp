#pragma once

#include "splitmix/data/dataset.hpp"
#include "splitmix/data/io.hpp"
#include "splitmix/data/partition.hpp"
#include "splitmix/data/synth.hpp"
