#pragma once

// Umbrella header.

#include "crits/core.hpp"
#include "crits/data.hpp"
#include "crits/model.hpp"
#include "crits/train.hpp"
#include "crits/explain.hpp"
#include "crits/eval.hpp"
#include "crits/svg.hpp"
