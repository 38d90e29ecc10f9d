#include "apo/codec.hpp"

#include <cmath>

#include "apo/rng.hpp"

namespace apo {

namespace {

// Orthonormalizes `rows` vectors of length `dim` (rows <= dim), stored
// row-major in `m`, via modified Gram-Schmidt. Gaussian init makes rank
// deficiency a measure-zero event; regenerate a row if it degenerates.
void orthonormal_rows(std::vector<double>& m, int rows, int dim, DetRng& rng) {
  for (int r = 0; r < rows; ++r) {
    while (true) {
      for (int c = 0; c < dim; ++c) m[r * dim + c] = rng.gaussian();
      for (int p = 0; p < r; ++p) {
        double dot = 0.0;
        for (int c = 0; c < dim; ++c) dot += m[r * dim + c] * m[p * dim + c];
        for (int c = 0; c < dim; ++c) m[r * dim + c] -= dot * m[p * dim + c];
      }
      double norm = 0.0;
      for (int c = 0; c < dim; ++c) norm += m[r * dim + c] * m[r * dim + c];
      norm = std::sqrt(norm);
      if (norm > 1e-8) {
        for (int c = 0; c < dim; ++c) m[r * dim + c] /= norm;
        break;
      }
    }
  }
}

}  // namespace

Codec::Codec(const Vocabulary& vocab, std::uint64_t seed, int latent_dim)
    : vocab_(vocab), seed_(seed), latent_dim_(latent_dim) {
  vocab_.validate();
  if (latent_dim_ < 1) throw ValidationError("latent dimension must be >= 1");

  // Per slot: presence + category + count + color(+none) + size(+none).
  slot_width_ = 1 + static_cast<int>(vocab_.categories.size()) +
                vocab_.max_count + static_cast<int>(vocab_.colors.size()) + 1 +
                static_cast<int>(vocab_.sizes.size()) + 1;
  relation_offset_ = slot_width_ * vocab_.max_groups;
  int pairs = vocab_.max_groups * (vocab_.max_groups - 1);
  feature_dim_ = relation_offset_ +
                 pairs * static_cast<int>(vocab_.predicates.size());

  DetRng rng(seed_, 0x636f6465);  // codec projection stream
  if (latent_dim_ <= feature_dim_) {
    proj_.assign(static_cast<size_t>(latent_dim_) * feature_dim_, 0.0);
    orthonormal_rows(proj_, latent_dim_, feature_dim_, rng);
  } else {
    // Isometric embedding: orthonormal columns, built as rows of the
    // transpose then stored in the same row-major latent x feature layout.
    std::vector<double> t(static_cast<size_t>(feature_dim_) * latent_dim_);
    orthonormal_rows(t, feature_dim_, latent_dim_, rng);
    proj_.assign(static_cast<size_t>(latent_dim_) * feature_dim_, 0.0);
    for (int r = 0; r < feature_dim_; ++r)
      for (int c = 0; c < latent_dim_; ++c)
        proj_[static_cast<size_t>(c) * feature_dim_ + r] =
            t[static_cast<size_t>(r) * latent_dim_ + c];
  }
}

std::vector<double> Codec::features(const Scene& scene) const {
  Scene s = canonicalize(scene, vocab_);
  std::vector<double> f(feature_dim_, -1.0);

  for (int g = 0; g < static_cast<int>(s.groups.size()); ++g) {
    const EntityGroup& grp = s.groups[g];
    int base = g * slot_width_;
    f[base] = 1.0;  // presence
    int off = base + 1;
    f[off + vocab_.category_index(grp.category)] = 1.0;
    off += static_cast<int>(vocab_.categories.size());
    f[off + (grp.count - 1)] = 1.0;
    off += vocab_.max_count;
    f[off + (grp.color ? vocab_.color_index(*grp.color) + 1 : 0)] = 1.0;
    off += static_cast<int>(vocab_.colors.size()) + 1;
    f[off + (grp.size ? vocab_.size_index(*grp.size) + 1 : 0)] = 1.0;
  }

  int n_pred = static_cast<int>(vocab_.predicates.size());
  for (const Relation& r : s.relations) {
    // Ordered pair index over (i, j), i != j, row-major with the diagonal
    // removed.
    int i = r.subject;
    int j = r.object;
    int pair = i * (vocab_.max_groups - 1) + (j > i ? j - 1 : j);
    f[relation_offset_ + pair * n_pred + vocab_.predicate_index(r.predicate)] =
        1.0;
  }
  return f;
}

std::vector<double> Codec::embed(const Scene& scene) const {
  std::vector<double> f = features(scene);
  std::vector<double> out(latent_dim_, 0.0);
  for (int r = 0; r < latent_dim_; ++r) {
    double acc = 0.0;
    const double* row = proj_.data() + static_cast<size_t>(r) * feature_dim_;
    for (int c = 0; c < feature_dim_; ++c) acc += row[c] * f[c];
    out[r] = acc;
  }
  return out;
}

Scene Codec::decode(const std::vector<double>& v,
                    const std::vector<Scene>& candidates) const {
  if (candidates.empty())
    throw ValidationError("decode requires at least one candidate scene");
  if (static_cast<int>(v.size()) != latent_dim_)
    throw ValidationError("embedding dimension mismatch");
  const Scene* best = nullptr;
  double best_d2 = 0.0;
  for (const Scene& cand : candidates) {
    std::vector<double> e = embed(cand);
    double d2 = 0.0;
    for (int i = 0; i < latent_dim_; ++i) {
      double d = e[i] - v[i];
      d2 += d * d;
    }
    if (!best || d2 < best_d2) {
      best = &cand;
      best_d2 = d2;
    }
  }
  return canonicalize(*best, vocab_);
}

}  // namespace apo
