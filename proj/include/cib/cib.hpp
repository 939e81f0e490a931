#pragma once

#include "cib/dataset.hpp"
#include "cib/error.hpp"
#include "cib/eval.hpp"
#include "cib/experiment.hpp"
#include "cib/image.hpp"
#include "cib/poison.hpp"
#include "cib/textio.hpp"
#include "cib/trigger.hpp"
#include "cib/victim.hpp"
