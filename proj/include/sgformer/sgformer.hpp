#pragma once

#include "sgformer/adam.hpp"
#include "sgformer/attention.hpp"
#include "sgformer/bench.hpp"
#include "sgformer/dataset.hpp"
#include "sgformer/dense.hpp"
#include "sgformer/denoise.hpp"
#include "sgformer/gcn.hpp"
#include "sgformer/graph.hpp"
#include "sgformer/io.hpp"
#include "sgformer/loss.hpp"
#include "sgformer/model.hpp"
#include "sgformer/rng.hpp"
#include "sgformer/tape.hpp"
#include "sgformer/train.hpp"
#include "sgformer/types.hpp"
