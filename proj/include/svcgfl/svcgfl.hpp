#pragma once

#include "svcgfl/errors.hpp"
#include "svcgfl/random.hpp"
#include "svcgfl/graph.hpp"
#include "svcgfl/model.hpp"
#include "svcgfl/solver.hpp"
#include "svcgfl/posterior.hpp"
#include "svcgfl/criteria.hpp"
#include "svcgfl/parallel.hpp"
#include "svcgfl/selection.hpp"
#include "svcgfl/experiments.hpp"
#include "svcgfl/spatial.hpp"
#include "svcgfl/io.hpp"
