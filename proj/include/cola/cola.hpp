#pragma once

#include "cola/attributor.hpp"
#include "cola/composer.hpp"
#include "cola/csv.hpp"
#include "cola/error.hpp"
#include "cola/generators.hpp"
#include "cola/matcher.hpp"
#include "cola/matrix.hpp"
#include "cola/model.hpp"
#include "cola/pipeline.hpp"
#include "cola/report.hpp"
#include "cola/schema.hpp"
#include "cola/svg.hpp"
