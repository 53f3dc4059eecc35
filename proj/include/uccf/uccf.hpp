#pragma once

#include "uccf/alloc.hpp"
#include "uccf/apmp.hpp"
#include "uccf/channel.hpp"
#include "uccf/core.hpp"
#include "uccf/downlink.hpp"
#include "uccf/engine.hpp"
#include "uccf/modulation.hpp"
#include "uccf/topology.hpp"
#include "uccf/training.hpp"
#include "uccf/uplink.hpp"
