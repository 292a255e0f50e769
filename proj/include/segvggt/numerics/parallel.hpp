#pragma once

#include <cstddef>
#include <functional>

namespace segvggt::numerics {

/// Worker cap: SEGVGGT_THREADS when set and positive, else the core count.
std::size_t thread_budget();
void set_thread_budget(std::size_t threads);

/// Runs body(begin, end) over contiguous chunks of [0, n). Every index is
/// handled by exactly one call, so results do not depend on the split.
void parallel_for(std::size_t n, std::size_t min_chunk,
                  const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace segvggt::numerics
