#pragma once

#include "posekit/bopio.hpp"
#include "posekit/core.hpp"
#include "posekit/eigen3.hpp"
#include "posekit/geometry.hpp"
#include "posekit/image_io.hpp"
#include "posekit/keypoints.hpp"
#include "posekit/metrics.hpp"
#include "posekit/ply.hpp"
#include "posekit/raster.hpp"
#include "posekit/scenegen.hpp"
#include "posekit/spatial.hpp"
