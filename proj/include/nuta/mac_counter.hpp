#pragma once

#include <cstdint>

namespace nuta::macs {

// Global multiply-accumulate tally used by the instrumented kernels. The
// counter exists to cross-check the analytic cost model against what the
// kernels actually execute, so increments happen at the exact multiply
// sites. Counting forces kernels onto the calling thread (no atomics), which
// is fine: it is only ever enabled inside tests and the flops tooling.
bool enabled();
void set_enabled(bool on);
void reset();
void add(uint64_t n);
uint64_t count();

struct ScopedCount {
  ScopedCount() {
    set_enabled(true);
    reset();
  }
  ~ScopedCount() { set_enabled(false); }
};

}  // namespace nuta::macs
