#pragma once

#include "baryimp/barycenter.hpp"
#include "baryimp/bias.hpp"
#include "baryimp/consensus.hpp"
#include "baryimp/error.hpp"
#include "baryimp/evaluation.hpp"
#include "baryimp/experiment.hpp"
#include "baryimp/gaussian.hpp"
#include "baryimp/imputation.hpp"
#include "baryimp/panel.hpp"
#include "baryimp/panel_csv.hpp"
#include "baryimp/posterior.hpp"
#include "baryimp/rng.hpp"
#include "baryimp/serialize.hpp"
#include "baryimp/simplex_opt.hpp"
