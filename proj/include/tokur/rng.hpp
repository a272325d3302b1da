#pragma once

/**
 * Keyed, counter-based randomness.
 *
 * Every random draw in the project is a pure function of an RngKey: a 64-bit
 * seed plus an ordered list of (label, value) pairs. Distinct label tuples
 * give independent streams, so results never depend on scheduling or on the
 * order in which unrelated draws happen. This is what makes scoring runs
 * reproducible across thread counts.
 */

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace tokur {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct RngKey {
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::uint64_t>> labels;

  RngKey() = default;
  explicit RngKey(std::uint64_t s) : seed(s) {}

  // Returns a new key with one more (name, value) label appended.
  RngKey with(std::string_view name, std::uint64_t value) const {
    RngKey k = *this;
    k.labels.emplace_back(std::string(name), value);
    return k;
  }
  RngKey with(std::string_view name, std::string_view value) const {
    return with(name, fnv1a64(value));
  }

  // Collapses (seed, labels) into the 64-bit stream key.
  std::uint64_t derive() const {
    std::uint64_t h = splitmix64(seed);
    for (const auto& [name, value] : labels) {
      h = splitmix64(h ^ fnv1a64(name));
      h = splitmix64(h ^ value);
    }
    return h;
  }
};

// Sequential view of the stream identified by a key. Draw i is
// splitmix64(key + i*golden), so the stream is random-access in principle;
// consumers here just read it front to back.
class KeyedStream {
 public:
  explicit KeyedStream(const RngKey& key) : key_(key.derive()) {}
  explicit KeyedStream(std::uint64_t derived_key) : key_(derived_key) {}

  std::uint64_t next_u64() {
    return splitmix64(key_ + (counter_++) * 0x9e3779b97f4a7c15ULL);
  }

  // Uniform on [0, 1), 53-bit resolution.
  double next_unit() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, bound) without modulo bias.
  std::uint64_t next_below(std::uint64_t bound);

  // Standard normal via Box-Muller; pairs are cached.
  double next_gaussian();

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace tokur
