#pragma once

#include "urbancausal/bic.hpp"
#include "urbancausal/discovery.hpp"
#include "urbancausal/effects.hpp"
#include "urbancausal/error.hpp"
#include "urbancausal/graph.hpp"
#include "urbancausal/io.hpp"
#include "urbancausal/linear.hpp"
#include "urbancausal/mlp.hpp"
#include "urbancausal/ordinal.hpp"
#include "urbancausal/policy.hpp"
#include "urbancausal/prediction.hpp"
#include "urbancausal/rng.hpp"
#include "urbancausal/sem.hpp"
#include "urbancausal/stats.hpp"
#include "urbancausal/table.hpp"
