#pragma once

#include <cstdint>
#include <string_view>

#include "hicogen/linalg.hpp"
#include "hicogen/rng.hpp"

namespace hicogen {

inline constexpr std::uint64_t kDefaultEmbeddingSeed = 0x5eedULL;

/// Fixed random unit vector for a canonical label. Identical labels map to
/// identical vectors for a given (dim, seed).
inline Vec label_embedding(std::string_view label, std::size_t dim,
                           std::uint64_t seed = kDefaultEmbeddingSeed) {
  if (dim == 0) return {};
  Rng rng(derive_seed(seed, hash_label(label)));
  Vec v = rng.normal_vector(dim);
  const double n = norm(v);
  for (double& x : v) x /= n;
  return v;
}

}  // namespace hicogen
