#pragma once

#include "ebpmse/area_params.hpp"
#include "ebpmse/dataset.hpp"
#include "ebpmse/ebp.hpp"
#include "ebpmse/error.hpp"
#include "ebpmse/informative.hpp"
#include "ebpmse/intervals.hpp"
#include "ebpmse/io.hpp"
#include "ebpmse/mse.hpp"
#include "ebpmse/ner_model.hpp"
#include "ebpmse/pipeline.hpp"
#include "ebpmse/population.hpp"
#include "ebpmse/report.hpp"
#include "ebpmse/rng.hpp"
#include "ebpmse/sampling.hpp"
#include "ebpmse/simharness.hpp"
#include "ebpmse/svg.hpp"
