#include "markpoint/parallel.hpp"

#include <cstdlib>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace markpoint {

int worker_count() {
  static const int count = [] {
    int n = 1;
#ifdef _OPENMP
    n = omp_get_max_threads();
#endif
    if (const char* env = std::getenv("MARKPOINT_THREADS")) {
      try {
        int cap = std::stoi(env);
        if (cap > 0 && cap < n) n = cap;
        if (cap > 0 && n < 1) n = cap;
      } catch (...) {
      }
    }
    return n < 1 ? 1 : n;
  }();
  return count;
}

}  // namespace markpoint
