#pragma once

#include "plotgrid/core.hpp"
#include "plotgrid/preprocess.hpp"
#include "plotgrid/png_io.hpp"
#include "plotgrid/features.hpp"
#include "plotgrid/classifier.hpp"
#include "plotgrid/inference.hpp"
#include "plotgrid/metrics.hpp"
#include "plotgrid/collage.hpp"
#include "plotgrid/submission.hpp"
#include "plotgrid/pipeline.hpp"
