#include "cdon/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace cdon {

int worker_count() {
  int n = static_cast<int>(std::thread::hardware_concurrency());
  if (n < 1) n = 1;
  if (const char* env = std::getenv("CDON_THREADS")) {
    try {
      const int cap = std::stoi(env);
      if (cap >= 1) n = std::min(n, cap);
    } catch (const std::exception&) {
      // Unparseable values leave the hardware count in place.
    }
  }
  return n;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn, int workers) {
  if (workers <= 0) workers = worker_count();
  const std::size_t threads = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto run = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        next = n;
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(run);
  for (std::thread& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace cdon
