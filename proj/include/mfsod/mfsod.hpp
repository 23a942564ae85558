#pragma once

// Umbrella header for the middle-fusion RGB-D salient object detector.

#include "mfsod/autograd.hpp"
#include "mfsod/backbone.hpp"
#include "mfsod/conv.hpp"
#include "mfsod/data.hpp"
#include "mfsod/errors.hpp"
#include "mfsod/imff.hpp"
#include "mfsod/layers.hpp"
#include "mfsod/lfdf.hpp"
#include "mfsod/metrics.hpp"
#include "mfsod/model.hpp"
#include "mfsod/norm.hpp"
#include "mfsod/ops.hpp"
#include "mfsod/pooling.hpp"
#include "mfsod/resize.hpp"
#include "mfsod/tensor.hpp"
#include "mfsod/tensorfile.hpp"
#include "mfsod/training.hpp"
