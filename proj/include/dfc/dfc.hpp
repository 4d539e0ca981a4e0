#pragma once

// Convenience header pulling in the whole pipeline.

#include "dfc/checkpoint.hpp"
#include "dfc/data.hpp"
#include "dfc/eval.hpp"
#include "dfc/image_io.hpp"
#include "dfc/losses.hpp"
#include "dfc/metrics.hpp"
#include "dfc/networks.hpp"
#include "dfc/pose.hpp"
#include "dfc/training.hpp"
#include "dfc/types.hpp"
