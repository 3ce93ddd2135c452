// Copyright Contributors to the uars project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>

namespace uars {

/// Worker count from UARS_THREADS, else the hardware concurrency.
std::size_t thread_count();

/// Runs body(i) for i in [0, n) across thread_count() workers. Callers must
/// only write to disjoint locations per index; results then never depend on
/// the worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

} // namespace uars
