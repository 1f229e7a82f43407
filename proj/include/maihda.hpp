#pragma once

#include "maihda/error.hpp"
#include "maihda/csv.hpp"
#include "maihda/ingest.hpp"
#include "maihda/transform.hpp"
#include "maihda/lmm.hpp"
#include "maihda/maihda.hpp"
#include "maihda/sim.hpp"
#include "maihda/report.hpp"
