#pragma once

// Umbrella header for the joint segmentation + depth estimation library.

#include "semdepth/checkpoint.hpp"
#include "semdepth/config.hpp"
#include "semdepth/crf.hpp"
#include "semdepth/data.hpp"
#include "semdepth/gradcheck.hpp"
#include "semdepth/grid.hpp"
#include "semdepth/losses.hpp"
#include "semdepth/metrics.hpp"
#include "semdepth/net.hpp"
#include "semdepth/png_io.hpp"
#include "semdepth/rng.hpp"
#include "semdepth/trainer.hpp"
