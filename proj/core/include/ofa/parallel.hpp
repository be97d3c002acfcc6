#pragma once

#include <cstddef>
#include <functional>

namespace ofa {

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index is
/// handled exactly once; if any call throws, the exception of the lowest
/// failing index is rethrown after all workers finish.
void parallel_for(std::size_t n, std::size_t threads,
                  const std::function<void(std::size_t)>& fn);

}  // namespace ofa
