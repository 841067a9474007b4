#include "attngan/parallel.hpp"

#include <cstdlib>
#include <string>

#include "attngan/error.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace attngan {

int num_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_num_threads(int threads) {
  if (threads < 1) {
    throw ConfigError("thread count must be >= 1, got " + std::to_string(threads));
  }
#ifdef _OPENMP
  omp_set_num_threads(threads);
#endif
}

int configure_threads_from_env() {
  int threads = 1;
  if (const char* env = std::getenv("ATTNGAN_THREADS"); env != nullptr && *env != '\0') {
    try {
      threads = std::stoi(env);
    } catch (const std::exception&) {
      throw ConfigError(std::string("ATTNGAN_THREADS is not an integer: ") + env);
    }
  }
  set_num_threads(threads);
  return threads;
}

}  // namespace attngan
