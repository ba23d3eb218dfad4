#pragma once

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "nnpass/errors.hpp"

namespace nnpass {

// Worker count: NNPP_THREADS when set, otherwise the hardware concurrency.
inline int worker_cap() {
  if (const char* env = std::getenv("NNPP_THREADS")) {
    try {
      size_t used = 0;
      const int v = std::stoi(env, &used);
      if (used != std::string(env).size() || v < 1) throw std::invalid_argument(env);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("NNPP_THREADS must be a positive integer, got '" + std::string(env) + "'");
    }
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Runs fn(i) for i in [0,n). Each index must be independent and write only
// its own output slot; results are then identical to the sequential order.
template <typename F>
void parallel_for(int n, F&& fn) {
  const int workers = std::min(worker_cap(), n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::exception_ptr first_error;
  std::mutex error_mu;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w]() {
      try {
        for (int i = w; i < n; i += workers) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace nnpass
