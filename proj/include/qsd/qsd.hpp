#pragma once

// Umbrella header.

#include "qsd/errors.hpp"
#include "qsd/quadrature.hpp"
#include "qsd/model.hpp"
#include "qsd/boundary.hpp"
#include "qsd/linalg.hpp"
#include "qsd/spectral.hpp"
#include "qsd/simulate.hpp"
#include "qsd/analyze.hpp"
#include "qsd/config.hpp"
#include "qsd/pipeline.hpp"
