#pragma once

#include "attnconv/error.hpp"
#include "attnconv/parallel.hpp"
#include "attnconv/tensor.hpp"
#include "attnconv/ops.hpp"
#include "attnconv/attention.hpp"
#include "attnconv/model.hpp"
#include "attnconv/checkpoint.hpp"
#include "attnconv/data.hpp"
#include "attnconv/trainer.hpp"
#include "attnconv/prune.hpp"
#include "attnconv/viz.hpp"
