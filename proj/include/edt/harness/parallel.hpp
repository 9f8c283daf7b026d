#pragma once

#include <cstddef>
#include <functional>

namespace edt::harness {

/// Runs fn(0..count-1) on up to `threads` workers. Work items must write
/// disjoint outputs; the first exception is rethrown after all workers stop.
void parallel_for(std::size_t count, std::size_t threads,
                  const std::function<void(std::size_t)>& fn);

}  // namespace edt::harness
