#pragma once

#include "data.hpp"
#include "error.hpp"
#include "frailty_fit.hpp"
#include "gof_tests.hpp"
#include "io.hpp"
#include "lowess.hpp"
#include "model.hpp"
#include "normal.hpp"
#include "parallel.hpp"
#include "plot.hpp"
#include "residuals.hpp"
#include "rng.hpp"
#include "sim.hpp"
