#pragma once

#include "prosac/seed.hpp"
#include "prosac/hb_stats.hpp"
#include "prosac/grid.hpp"
#include "prosac/gp_ucb.hpp"
#include "prosac/oracle.hpp"
#include "prosac/subprocess_oracle.hpp"
#include "prosac/certifier.hpp"
#include "prosac/config.hpp"
#include "prosac/report.hpp"
#include "prosac/commands.hpp"
