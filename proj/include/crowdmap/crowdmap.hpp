#pragma once

#include "crowdmap/errors.hpp"
#include "crowdmap/experiments.hpp"
#include "crowdmap/geometry.hpp"
#include "crowdmap/io.hpp"
#include "crowdmap/map_service.hpp"
#include "crowdmap/matching.hpp"
#include "crowdmap/net.hpp"
#include "crowdmap/noise.hpp"
#include "crowdmap/onboard.hpp"
#include "crowdmap/scenario_config.hpp"
#include "crowdmap/triangulate.hpp"
