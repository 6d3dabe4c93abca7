#pragma once

#include "dmgsim/common.hpp"
#include "dmgsim/bi_scheduler.hpp"
#include "dmgsim/radio_link.hpp"
#include "dmgsim/traffic.hpp"
#include "dmgsim/mac_protocol.hpp"
#include "dmgsim/scenario.hpp"
#include "dmgsim/trace.hpp"
#include "dmgsim/metrics.hpp"
#include "dmgsim/engine.hpp"
#include "dmgsim/rl_env.hpp"
#include "dmgsim/wire.hpp"
#include "dmgsim/env_server.hpp"
