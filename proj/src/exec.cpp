#include "dve/exec.hpp"

namespace dve {

int worker_threads() noexcept {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace dve
