#pragma once

#include <cstddef>
#include <exception>
#include <vector>

namespace mice {

/// Runs f(i) for i in [0, n) across OpenMP threads. An exception cannot
/// cross the parallel region, so each iteration's is captured and the one
/// with the lowest index is rethrown after the loop.
template <typename F>
void parallel_for(std::size_t n, F&& f) {
  std::vector<std::exception_ptr> errors(n);
  const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    try {
      f(static_cast<std::size_t>(i));
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace mice
