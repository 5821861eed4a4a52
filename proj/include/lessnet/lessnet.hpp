#pragma once

#include "lessnet/autodiff.hpp"
#include "lessnet/baseline.hpp"
#include "lessnet/checkpoint.hpp"
#include "lessnet/dataset_io.hpp"
#include "lessnet/decoder.hpp"
#include "lessnet/experiments.hpp"
#include "lessnet/io.hpp"
#include "lessnet/layers.hpp"
#include "lessnet/losses.hpp"
#include "lessnet/metrics.hpp"
#include "lessnet/ops.hpp"
#include "lessnet/parameters.hpp"
#include "lessnet/pyramid.hpp"
#include "lessnet/synth.hpp"
#include "lessnet/tensor.hpp"
#include "lessnet/trainer.hpp"
#include "lessnet/warp.hpp"
