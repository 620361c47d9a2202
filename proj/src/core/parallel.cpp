#include "retgen/core/parallel.hpp"

#include <cstdlib>

namespace retgen {

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("RETGEN_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return 1;
}

}  // namespace retgen
