#pragma once

#include "oodbench/analysis.hpp"
#include "oodbench/attributes.hpp"
#include "oodbench/core_data.hpp"
#include "oodbench/encoder.hpp"
#include "oodbench/error.hpp"
#include "oodbench/image_io.hpp"
#include "oodbench/log.hpp"
#include "oodbench/manifest.hpp"
#include "oodbench/parallel.hpp"
#include "oodbench/pipeline.hpp"
#include "oodbench/rng.hpp"
#include "oodbench/shift_metrics.hpp"
#include "oodbench/splits.hpp"
#include "oodbench/stats.hpp"
#include "oodbench/synthgen.hpp"
#include "oodbench/tensor_io.hpp"
