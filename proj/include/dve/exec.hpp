#pragma once

#include <cstddef>
#include <cstdint>
#include <exception>
#include <limits>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dve {

/// Selects how a per-pixel / per-cell kernel is driven. `serial` is the
/// reference loop kept for cross-checking; `parallel` distributes the same
/// per-element body over OpenMP threads. Reductions are always finished in
/// element order, so both policies return bit-identical results.
enum class Exec { serial, parallel };

int worker_threads() noexcept;

/// Runs body(i) for i in [0, n). Exceptions thrown by the body are captured;
/// the one from the lowest index is rethrown after the loop, so error
/// reporting does not depend on scheduling.
template <typename Body>
void for_each_index(std::size_t n, Exec exec, Body&& body) {
  if (exec == Exec::serial || n < 2) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::exception_ptr first_error;
  std::size_t first_index = std::numeric_limits<std::size_t>::max();
  const auto count = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < count; ++i) {
    try {
      body(static_cast<std::size_t>(i));
    } catch (...) {
#pragma omp critical(dve_for_each_index)
      {
        if (static_cast<std::size_t>(i) < first_index) {
          first_index = static_cast<std::size_t>(i);
          first_error = std::current_exception();
        }
      }
    }
  }
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace dve
