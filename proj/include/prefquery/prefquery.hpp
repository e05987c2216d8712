#pragma once

#include "prefquery/error.hpp"
#include "prefquery/digest.hpp"
#include "prefquery/core.hpp"
#include "prefquery/text_graph.hpp"
#include "prefquery/embedding_client.hpp"
#include "prefquery/features.hpp"
#include "prefquery/estimation.hpp"
#include "prefquery/queries.hpp"
#include "prefquery/elicitation.hpp"
#include "prefquery/server.hpp"
#include "prefquery/harness/csv.hpp"
#include "prefquery/harness/config.hpp"
#include "prefquery/harness/synthetic.hpp"
#include "prefquery/harness/pipeline.hpp"
#include "prefquery/harness/benchmark.hpp"
