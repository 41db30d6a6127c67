#pragma once

#include <cstddef>

namespace mlmgen {

/// Thread cap for internal OpenMP regions. Initialized from the
/// MLMGEN_THREADS environment variable (unset: OpenMP default).
std::size_t thread_cap();
void set_thread_cap(std::size_t threads);

/// Re-read MLMGEN_THREADS; called once by the CLI at startup.
void init_threads_from_env();

}  // namespace mlmgen

#include <exception>
#include <mutex>

namespace mlmgen {

/// Runs body(i) for i in [0, n) on an OpenMP team. The first exception
/// thrown by any iteration is rethrown on the calling thread.
template <typename Body>
void parallel_for(std::size_t n, Body&& body) {
  std::exception_ptr error;
  std::mutex error_mutex;
#pragma omp parallel for schedule(dynamic) if (n > 1)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    try {
      body(static_cast<std::size_t>(i));
    } catch (...) {
      std::lock_guard lock(error_mutex);
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace mlmgen
