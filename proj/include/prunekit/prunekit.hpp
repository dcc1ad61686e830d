#pragma once

#include "prunekit/engine.hpp"
#include "prunekit/features.hpp"
#include "prunekit/lasso.hpp"
#include "prunekit/linalg.hpp"
#include "prunekit/model_io.hpp"
#include "prunekit/netir.hpp"
#include "prunekit/parallel.hpp"
#include "prunekit/probe.hpp"
#include "prunekit/pruner.hpp"
#include "prunekit/rng.hpp"
#include "prunekit/splits.hpp"
#include "prunekit/synthfaces.hpp"
#include "prunekit/tensor.hpp"
