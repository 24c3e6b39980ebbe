#include "rslab/rng.hpp"

namespace rslab {

namespace {
std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}
}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::string_view purpose) {
  SplitMix64 g(base ^ fnv1a(purpose));
  return g.next();
}

std::uint64_t derive_seed(std::uint64_t base, std::string_view purpose, std::uint64_t index) {
  SplitMix64 g(base ^ fnv1a(purpose) ^ (index * 0xD1B54A32D192ED03ull));
  return g.next();
}

}  // namespace rslab
