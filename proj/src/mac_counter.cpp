#include "nuta/mac_counter.hpp"

namespace nuta::macs {

namespace {
bool g_enabled = false;
uint64_t g_count = 0;
}  // namespace

bool enabled() { return g_enabled; }
void set_enabled(bool on) { g_enabled = on; }
void reset() { g_count = 0; }
void add(uint64_t n) { g_count += n; }
uint64_t count() { return g_count; }

}  // namespace nuta::macs
