#include "mlmgen/parallel.hpp"

#include <omp.h>

#include <cstdlib>
#include <string>

namespace mlmgen {

namespace {
std::size_t g_cap = 0;
}

std::size_t thread_cap() {
  return g_cap == 0 ? static_cast<std::size_t>(omp_get_max_threads()) : g_cap;
}

void set_thread_cap(std::size_t threads) {
  g_cap = threads;
  if (threads > 0) omp_set_num_threads(static_cast<int>(threads));
}

void init_threads_from_env() {
  if (const char* env = std::getenv("MLMGEN_THREADS")) {
    try {
      const long n = std::stol(env);
      if (n > 0) set_thread_cap(static_cast<std::size_t>(n));
    } catch (const std::exception&) {
      // Unparseable values leave the OpenMP default in place.
    }
  }
}

}  // namespace mlmgen
