// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The epsakit Authors.

#pragma once

#include <cstddef>
#include <functional>

namespace epsa {

/// Worker cap. Initialised from EPSAKIT_THREADS (default: hardware
/// concurrency), overridable at runtime.
std::size_t max_threads();
void set_max_threads(std::size_t threads);

/// Splits [0, count) into contiguous chunks and runs `body(begin, end)` on up
/// to max_threads() workers. Callers must write disjoint outputs per index so
/// results do not depend on the thread count.
void parallel_for(std::size_t count,
                  const std::function<void(std::size_t, std::size_t)>& body,
                  std::size_t min_chunk = 1);

}  // namespace epsa
