#pragma once

// Everything except the HTTP facade, which pulls in httplib and threads.
#include "assignment.hpp"
#include "dataset.hpp"
#include "engine.hpp"
#include "error.hpp"
#include "events.hpp"
#include "experiment.hpp"
#include "geometry.hpp"
#include "ledger.hpp"
#include "money.hpp"
#include "payment.hpp"
#include "rng.hpp"
#include "scheduler.hpp"
#include "scoring.hpp"
#include "sim.hpp"
#include "stats.hpp"
#include "workflow.hpp"
