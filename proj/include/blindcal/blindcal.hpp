#pragma once

#include "blindcal/baseline.hpp"
#include "blindcal/errors.hpp"
#include "blindcal/experiments.hpp"
#include "blindcal/geometry.hpp"
#include "blindcal/image.hpp"
#include "blindcal/io.hpp"
#include "blindcal/model.hpp"
#include "blindcal/objective.hpp"
#include "blindcal/random.hpp"
#include "blindcal/solver.hpp"
