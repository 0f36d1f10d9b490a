#pragma once

#include "relic/attention.hpp"
#include "relic/categorical.hpp"
#include "relic/checkpoint.hpp"
#include "relic/common.hpp"
#include "relic/config.hpp"
#include "relic/env.hpp"
#include "relic/eval.hpp"
#include "relic/metrics.hpp"
#include "relic/model.hpp"
#include "relic/params.hpp"
#include "relic/plot.hpp"
#include "relic/rng.hpp"
#include "relic/rollout.hpp"
#include "relic/threading.hpp"
#include "relic/trainer.hpp"
