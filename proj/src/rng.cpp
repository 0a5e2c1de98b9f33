#include "carthresh/rng.hpp"

#include <bit>

namespace carthresh {

std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> ids) noexcept {
  std::uint64_t h = mix64(master);
  for (std::uint64_t id : ids) h = mix64(h ^ mix64(id + 0x632be59bd9b4e019ULL));
  return h;
}

std::uint64_t seed_id(double value) noexcept { return std::bit_cast<std::uint64_t>(value); }

}  // namespace carthresh
