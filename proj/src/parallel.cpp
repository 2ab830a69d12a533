#include "nuta/parallel.hpp"

#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace nuta {

namespace {
int g_threads = 0;  // 0 = not set explicitly

int resolve_default() {
  if (const char* env = std::getenv("NUTA_THREADS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw ? static_cast<int>(hw) : 1;
}
}  // namespace

int num_threads() {
  if (g_threads >= 1) return g_threads;
  return resolve_default();
}

void set_num_threads(int n) { g_threads = n >= 1 ? n : 0; }

void parallel_for(int64_t begin, int64_t end,
                  const std::function<void(int64_t, int64_t)>& body) {
  int64_t total = end - begin;
  if (total <= 0) return;
  int workers = num_threads();
  if (workers > total) workers = static_cast<int>(total);
  if (workers <= 1 || total < 2) {
    body(begin, end);
    return;
  }

  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<size_t>(workers));
  int64_t chunk = (total + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    int64_t lo = begin + chunk * w;
    int64_t hi = lo + chunk < end ? lo + chunk : end;
    if (lo >= hi) break;
    pool.emplace_back([&, w, lo, hi] {
      try {
        body(lo, hi);
      } catch (...) {
        errors[static_cast<size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace nuta
