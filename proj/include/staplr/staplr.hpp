#pragma once

#include "staplr/audit.hpp"
#include "staplr/core.hpp"
#include "staplr/evaluation.hpp"
#include "staplr/folds.hpp"
#include "staplr/glm.hpp"
#include "staplr/importance.hpp"
#include "staplr/io.hpp"
#include "staplr/metrics.hpp"
#include "staplr/parallel.hpp"
#include "staplr/stacking.hpp"
#include "staplr/synthetic.hpp"
#include "staplr/views.hpp"
