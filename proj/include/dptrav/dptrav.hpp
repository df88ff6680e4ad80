#pragma once

#include "dptrav/assignment.hpp"
#include "dptrav/errors.hpp"
#include "dptrav/gaussian_mixture.hpp"
#include "dptrav/grid_prior.hpp"
#include "dptrav/latent.hpp"
#include "dptrav/metrics.hpp"
#include "dptrav/observation.hpp"
#include "dptrav/posterior.hpp"
#include "dptrav/prior.hpp"
#include "dptrav/rng.hpp"
#include "dptrav/schedule.hpp"
#include "dptrav/score.hpp"
#include "dptrav/solver.hpp"
#include "dptrav/w2.hpp"
