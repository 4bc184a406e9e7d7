#pragma once

#include <cstddef>

// Counts heap allocations made on the calling thread between start() and stop().
namespace alloc_tracker {

struct Stats {
  std::size_t count = 0;
  std::size_t largest = 0;
  std::size_t total = 0;
};

void start();
Stats stop();

}  // namespace alloc_tracker
