#include "edt/numerics/op_counter.hpp"

namespace edt {
namespace {
thread_local bool g_enabled = false;
thread_local std::uint64_t g_macs = 0;
}  // namespace

void OpCounter::enable(bool on) { g_enabled = on; }
bool OpCounter::enabled() { return g_enabled; }
void OpCounter::reset() { g_macs = 0; }
std::uint64_t OpCounter::macs() { return g_macs; }
void OpCounter::add(std::uint64_t macs) {
  if (g_enabled) g_macs += macs;
}

CountingScope::CountingScope() : was_enabled_(OpCounter::enabled()) {
  OpCounter::enable(true);
  OpCounter::reset();
}

CountingScope::~CountingScope() { OpCounter::enable(was_enabled_); }

}  // namespace edt
