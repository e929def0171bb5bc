#pragma once

// Umbrella header for the Polymath engine: task flow graphs, the effective
// score database, multi-grid graph optimization, code-represented subtask
// workflows, the self-reflection-guided evolutionary search, and the run
// orchestrator. The live HTTP backend lives in polymath/http_backend.hpp and
// is not pulled in here.

#include "polymath/errors.hpp"
#include "polymath/evolution.hpp"
#include "polymath/graph_opt.hpp"
#include "polymath/llm_backend.hpp"
#include "polymath/orchestrator.hpp"
#include "polymath/score_db.hpp"
#include "polymath/task_graph.hpp"
#include "polymath/util.hpp"
#include "polymath/workflow.hpp"
