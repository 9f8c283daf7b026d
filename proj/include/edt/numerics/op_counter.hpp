#pragma once

#include <cstdint>

namespace edt {

/// Multiply-accumulate counter fed by matmul-class kernels and the attention
/// modulation product. One MAC counts as one FLOP. Thread-local: each
/// execution context owns its own count.
class OpCounter {
 public:
  static void enable(bool on);
  static bool enabled();
  static void reset();
  static std::uint64_t macs();
  static void add(std::uint64_t macs);
};

/// Enables and zeroes the counter for the lifetime of the scope, then
/// restores the previous enable state.
class CountingScope {
 public:
  CountingScope();
  ~CountingScope();
  CountingScope(const CountingScope&) = delete;
  CountingScope& operator=(const CountingScope&) = delete;

  std::uint64_t macs() const { return OpCounter::macs(); }

 private:
  bool was_enabled_;
};

}  // namespace edt
