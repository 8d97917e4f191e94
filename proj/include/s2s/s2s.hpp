#pragma once

#include "s2s/checkpoint.hpp"
#include "s2s/error.hpp"
#include "s2s/gradcheck.hpp"
#include "s2s/graph.hpp"
#include "s2s/image.hpp"
#include "s2s/kernels.hpp"
#include "s2s/losses.hpp"
#include "s2s/network.hpp"
#include "s2s/ops.hpp"
#include "s2s/optim.hpp"
#include "s2s/pipeline.hpp"
#include "s2s/quality.hpp"
#include "s2s/rng.hpp"
#include "s2s/sampling.hpp"
#include "s2s/tape.hpp"
#include "s2s/tensor.hpp"
