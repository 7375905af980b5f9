#pragma once

#include "beaconloc/evaluation.hpp"
#include "beaconloc/formats.hpp"
#include "beaconloc/geometry.hpp"
#include "beaconloc/model.hpp"
#include "beaconloc/pipeline.hpp"
#include "beaconloc/rng.hpp"
#include "beaconloc/server.hpp"
#include "beaconloc/simulator.hpp"
#include "beaconloc/sync_ranging.hpp"
#include "beaconloc/trilateration.hpp"
#include "beaconloc/windowing.hpp"
