#pragma once

#include <cstdint>
#include <vector>

#include "apo/scene.hpp"

namespace apo {

// Maps canonical scenes to fixed-size real vectors. Scenes are first expanded
// into a ±1 feature block (per group slot: presence, category, count, color,
// size one-hots; plus one bit per ordered slot pair and predicate), then
// projected to `latent_dim` through a seeded orthonormal map. With
// latent_dim >= feature_dim the map is an isometry; below that it is a random
// projection, which keeps distinct scenes separated in practice (decode
// verifies).
class Codec {
 public:
  Codec(const Vocabulary& vocab, std::uint64_t seed, int latent_dim = 32);

  std::vector<double> embed(const Scene& scene) const;
  // Returns the candidate whose embedding is nearest to v (Euclidean).
  Scene decode(const std::vector<double>& v,
               const std::vector<Scene>& candidates) const;

  const Vocabulary& vocab() const { return vocab_; }
  int latent_dim() const { return latent_dim_; }
  int feature_dim() const { return feature_dim_; }
  std::uint64_t seed() const { return seed_; }

 private:
  std::vector<double> features(const Scene& scene) const;

  Vocabulary vocab_;
  std::uint64_t seed_;
  int latent_dim_;
  int feature_dim_;
  int slot_width_;
  int relation_offset_;
  // Row-major latent_dim x feature_dim projection with orthonormal rows
  // (or orthonormal columns when latent_dim > feature_dim).
  std::vector<double> proj_;
};

}  // namespace apo
