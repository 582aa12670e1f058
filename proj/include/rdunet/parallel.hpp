#pragma once

#include <cstdint>
#include <functional>

namespace rdunet {

/// Worker cap for parallel_for. 0 means serial execution, the deterministic
/// reference. Initialised from the RDUNET_THREADS environment variable by
/// init_threads_from_env(); defaults to serial.
void set_threads(int threads);
int threads();
void init_threads_from_env();

/// Runs fn(i) for i in [0, n). Every iteration must write only data it owns;
/// under that contract results are bit-identical for any thread count,
/// because each element's arithmetic happens in one thread in a fixed order.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn);

}  // namespace rdunet
