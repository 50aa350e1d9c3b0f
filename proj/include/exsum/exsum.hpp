#pragma once

#include "exsum/autotune.hpp"
#include "exsum/baselines.hpp"
#include "exsum/dataset.hpp"
#include "exsum/dsl/ast.hpp"
#include "exsum/dsl/parser.hpp"
#include "exsum/dsl/printer.hpp"
#include "exsum/dsl/validate.hpp"
#include "exsum/engine.hpp"
#include "exsum/error.hpp"
#include "exsum/ibe.hpp"
#include "exsum/measure.hpp"
#include "exsum/metrics.hpp"
#include "exsum/range_set.hpp"
#include "exsum/report.hpp"
#include "exsum/synthetic.hpp"
