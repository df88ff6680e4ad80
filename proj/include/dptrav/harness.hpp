#pragma once

#include "dptrav/harness/config.hpp"
#include "dptrav/harness/problem.hpp"
#include "dptrav/harness/report.hpp"
#include "dptrav/harness/sweep.hpp"
#include "dptrav/harness/verify.hpp"
