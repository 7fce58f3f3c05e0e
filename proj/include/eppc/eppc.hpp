#pragma once

#include "eppc/annotation.hpp"
#include "eppc/commands.hpp"
#include "eppc/core.hpp"
#include "eppc/gateway.hpp"
#include "eppc/io.hpp"
#include "eppc/metrics.hpp"
#include "eppc/ontology.hpp"
#include "eppc/ot.hpp"
#include "eppc/pipeline.hpp"
#include "eppc/recovery.hpp"
#include "eppc/refine.hpp"
#include "eppc/text_match.hpp"
