#pragma once

#include "viewbench/binning.hpp"
#include "viewbench/config.hpp"
#include "viewbench/error.hpp"
#include "viewbench/experiments.hpp"
#include "viewbench/featstore.hpp"
#include "viewbench/image_io.hpp"
#include "viewbench/membank.hpp"
#include "viewbench/metrics.hpp"
#include "viewbench/overlay.hpp"
#include "viewbench/pose.hpp"
#include "viewbench/report.hpp"
#include "viewbench/segmenter.hpp"
