#pragma once

#include "rsoc/errors.hpp"
#include "rsoc/linalg.hpp"
#include "rsoc/parallel.hpp"
#include "rsoc/random.hpp"
#include "rsoc/geometry.hpp"
#include "rsoc/dynamics.hpp"
#include "rsoc/regression.hpp"
#include "rsoc/bsde.hpp"
#include "rsoc/problem.hpp"
#include "rsoc/mesh.hpp"
#include "rsoc/value.hpp"
#include "rsoc/hjb.hpp"
#include "rsoc/hypotheses.hpp"
#include "rsoc/io.hpp"
#include "rsoc/config.hpp"
#include "rsoc/harness.hpp"
