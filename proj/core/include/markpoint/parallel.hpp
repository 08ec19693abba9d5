#pragma once

namespace markpoint {

// Worker count for parallel loops: MARKPOINT_THREADS if set and positive,
// otherwise the OpenMP default (1 when built without OpenMP).
int worker_count();

}  // namespace markpoint
