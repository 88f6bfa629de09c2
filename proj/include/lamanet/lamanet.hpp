#pragma once

#include "lamanet/binary_io.hpp"
#include "lamanet/config.hpp"
#include "lamanet/data.hpp"
#include "lamanet/experiment.hpp"
#include "lamanet/grad_check.hpp"
#include "lamanet/hash.hpp"
#include "lamanet/losses.hpp"
#include "lamanet/metrics.hpp"
#include "lamanet/model.hpp"
#include "lamanet/ops.hpp"
#include "lamanet/optim.hpp"
#include "lamanet/synthetic.hpp"
#include "lamanet/tensor.hpp"
#include "lamanet/train.hpp"
