#pragma once

#include "dtelab/config.hpp"
#include "dtelab/core_model.hpp"
#include "dtelab/csv.hpp"
#include "dtelab/diagnostics.hpp"
#include "dtelab/estimators.hpp"
#include "dtelab/inference.hpp"
#include "dtelab/nuisance.hpp"
#include "dtelab/parallel.hpp"
#include "dtelab/pipeline.hpp"
#include "dtelab/report.hpp"
#include "dtelab/simulator.hpp"
