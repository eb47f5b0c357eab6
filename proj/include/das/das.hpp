#pragma once

#include "das/backbone/backbone.hpp"
#include "das/cell/cell.hpp"
#include "das/cell/discretize.hpp"
#include "das/cell/genotype.hpp"
#include "das/cell/theta.hpp"
#include "das/core/io.hpp"
#include "das/core/ops.hpp"
#include "das/core/optim.hpp"
#include "das/data/ablation.hpp"
#include "das/data/cifar.hpp"
#include "das/data/config.hpp"
#include "das/data/synthetic.hpp"
#include "das/rf/rf.hpp"
#include "das/search/checkpoint.hpp"
#include "das/search/search.hpp"
#include "das/temporal/shift.hpp"
#include "das/temporal/video.hpp"
#include "das/transforms/apply.hpp"
#include "das/transforms/registry.hpp"
