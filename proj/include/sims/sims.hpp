#pragma once

// Umbrella header.

#include "checkpoint.hpp"
#include "config.hpp"
#include "core.hpp"
#include "encoding.hpp"
#include "losses.hpp"
#include "metrics.hpp"
#include "networks.hpp"
#include "nifti.hpp"
#include "optim.hpp"
#include "pipeline.hpp"
#include "run.hpp"
#include "simulate.hpp"
#include "tensor.hpp"
#include "volume.hpp"
