#pragma once

#include "dbsim/classifier.hpp"
#include "dbsim/config.hpp"
#include "dbsim/data.hpp"
#include "dbsim/decay.hpp"
#include "dbsim/defense.hpp"
#include "dbsim/lifecycle.hpp"
#include "dbsim/metrics.hpp"
#include "dbsim/report.hpp"
#include "dbsim/rng.hpp"
#include "dbsim/runner.hpp"
#include "dbsim/theory.hpp"
#include "dbsim/tokenize.hpp"
#include "dbsim/trigger.hpp"
