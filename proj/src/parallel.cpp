#include "chnet/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

CHNET_NS_BEGIN

namespace {

int default_threads() {
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (hw <= 0) hw = 1;
  if (const char* env = std::getenv("CHNET_THREADS")) {
    try {
      const int cap = std::stoi(env);
      if (cap >= 1) hw = std::min(hw, cap);
    } catch (...) {
      // ignore malformed values
    }
  }
  return hw;
}

std::atomic<int>& thread_setting() {
  static std::atomic<int> threads{default_threads()};
  return threads;
}

thread_local bool in_parallel_region = false;

}  // namespace

int kernel_threads() { return thread_setting().load(); }

void set_kernel_threads(int threads) {
  thread_setting().store(std::max(1, threads));
}

void parallel_for(std::size_t tasks,
                  const std::function<void(std::size_t)>& fn) {
  const int threads = kernel_threads();
  if (tasks <= 1 || threads <= 1 || in_parallel_region) {
    for (std::size_t i = 0; i < tasks; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    in_parallel_region = true;
    for (std::size_t i = next++; i < tasks; i = next++) fn(i);
    in_parallel_region = false;
  };
  const std::size_t spawn =
      std::min<std::size_t>(static_cast<std::size_t>(threads), tasks) - 1;
  std::vector<std::jthread> pool;
  pool.reserve(spawn);
  for (std::size_t t = 0; t < spawn; ++t) pool.emplace_back(worker);
  worker();
}

CHNET_NS_END
