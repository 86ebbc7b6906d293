#pragma once

#include "ssdesc/error.hpp"
#include "ssdesc/filters.hpp"
#include "ssdesc/homography.hpp"
#include "ssdesc/image.hpp"
#include "ssdesc/image_io.hpp"
#include "ssdesc/keypoints.hpp"
#include "ssdesc/losses.hpp"
#include "ssdesc/matching.hpp"
#include "ssdesc/model.hpp"
#include "ssdesc/mosaic.hpp"
#include "ssdesc/svg_plot.hpp"
#include "ssdesc/sweep.hpp"
#include "ssdesc/synth.hpp"
#include "ssdesc/trainer.hpp"
#include "ssdesc/triplets.hpp"
#include "ssdesc/warp.hpp"
