#pragma once

// Umbrella header.

#include "malrisk/bessel.hpp"
#include "malrisk/caviar.hpp"
#include "malrisk/em.hpp"
#include "malrisk/error.hpp"
#include "malrisk/linalg.hpp"
#include "malrisk/mal.hpp"
#include "malrisk/optim.hpp"
#include "malrisk/portfolio.hpp"
#include "malrisk/scoring.hpp"
#include "malrisk/sim.hpp"
#include "malrisk/version.hpp"
#include "malrisk/pipeline/config.hpp"
#include "malrisk/pipeline/io.hpp"
#include "malrisk/pipeline/report.hpp"
#include "malrisk/pipeline/rolling.hpp"
#include "malrisk/pipeline/stats.hpp"
