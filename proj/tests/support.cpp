#include "support.hpp"

#include <algorithm>
#include <functional>

namespace apo::testing {

namespace {

std::vector<EntityGroup> all_group_variants(const Vocabulary& vocab) {
  std::vector<EntityGroup> out;
  std::vector<std::optional<std::string>> colors{std::nullopt};
  for (const auto& c : vocab.colors) colors.emplace_back(c);
  std::vector<std::optional<std::string>> sizes{std::nullopt};
  for (const auto& s : vocab.sizes) sizes.emplace_back(s);
  for (const auto& cat : vocab.categories)
    for (int count = 1; count <= vocab.max_count; ++count)
      for (const auto& col : colors)
        for (const auto& sz : sizes)
          out.push_back(EntityGroup{cat, count, col, sz});
  return out;
}

}  // namespace

std::vector<Scene> all_scenes(const Vocabulary& vocab) {
  std::vector<EntityGroup> variants = all_group_variants(vocab);
  std::vector<Scene> out;

  // Multisets of group variants, sizes 1..max_groups.
  std::function<void(size_t, std::vector<EntityGroup>&)> rec =
      [&](size_t start, std::vector<EntityGroup>& acc) {
        if (!acc.empty()) {
          Scene base{acc, {}};
          // All candidate relations among the groups.
          std::vector<Relation> candidates;
          int n = static_cast<int>(acc.size());
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
              if (i == j) continue;
              for (const auto& p : vocab.predicates) {
                if (vocab.is_symmetric(p) && i > j) continue;
                candidates.push_back(Relation{i, p, j});
              }
            }
          size_t m = candidates.size();
          for (size_t mask = 0; mask < (size_t{1} << m); ++mask) {
            Scene s = base;
            for (size_t b = 0; b < m; ++b)
              if (mask & (size_t{1} << b)) s.relations.push_back(candidates[b]);
            try {
              out.push_back(canonicalize(s, vocab));
            } catch (const ValidationError&) {
            }
          }
        }
        if (acc.size() == static_cast<size_t>(vocab.max_groups)) return;
        for (size_t i = start; i < variants.size(); ++i) {
          acc.push_back(variants[i]);
          rec(i, acc);
          acc.pop_back();
        }
      };
  std::vector<EntityGroup> acc;
  rec(0, acc);

  // Deduplicate by canonical key (identical groups + relation symmetries).
  std::sort(out.begin(), out.end(), [&](const Scene& a, const Scene& b) {
    return packed_key(a, vocab) < packed_key(b, vocab);
  });
  out.erase(std::unique(out.begin(), out.end(),
                        [&](const Scene& a, const Scene& b) {
                          return packed_key(a, vocab) == packed_key(b, vocab);
                        }),
            out.end());
  return out;
}

std::map<std::string, int> oracle_distances_from(const Scene& source,
                                                 const Vocabulary& vocab,
                                                 int bound) {
  std::map<std::string, int> dist;
  std::deque<Scene> frontier;
  Scene start = canonicalize(source, vocab);
  dist[packed_key(start, vocab)] = 0;
  frontier.push_back(start);
  while (!frontier.empty()) {
    Scene cur = frontier.front();
    frontier.pop_front();
    int d = dist[packed_key(cur, vocab)];
    if (d >= bound) continue;
    for (const AtomicEdit& e : enumerate_edits(cur, vocab)) {
      Scene next = apply_edit(cur, e, vocab);
      std::string key = packed_key(next, vocab);
      if (dist.count(key)) continue;
      dist[key] = d + 1;
      frontier.push_back(std::move(next));
    }
  }
  return dist;
}

std::optional<int> oracle_distance(const Scene& a, const Scene& b,
                                   const Vocabulary& vocab, int bound) {
  std::string target = packed_key(canonicalize(b, vocab), vocab);
  auto dist = oracle_distances_from(a, vocab, bound);
  auto it = dist.find(target);
  if (it == dist.end()) return std::nullopt;
  return it->second;
}

Scene random_scene(DetRng& rng, const Vocabulary& vocab, int max_groups) {
  int limit = std::min(max_groups, vocab.max_groups);
  while (true) {
    Scene s;
    int n = 1 + static_cast<int>(rng.uniform_int(limit));
    for (int i = 0; i < n; ++i) {
      EntityGroup g;
      g.category =
          vocab.categories[rng.uniform_int(vocab.categories.size())];
      g.count = 1 + static_cast<int>(rng.uniform_int(vocab.max_count));
      if (rng.bernoulli(0.6))
        g.color = vocab.colors[rng.uniform_int(vocab.colors.size())];
      if (rng.bernoulli(0.3))
        g.size = vocab.sizes[rng.uniform_int(vocab.sizes.size())];
      s.groups.push_back(g);
    }
    int rel_attempts = static_cast<int>(rng.uniform_int(3));
    for (int i = 0; i < rel_attempts && n > 1; ++i) {
      Relation r;
      r.subject = static_cast<int>(rng.uniform_int(n));
      r.object = static_cast<int>(rng.uniform_int(n));
      r.predicate = vocab.predicates[rng.uniform_int(vocab.predicates.size())];
      if (r.subject == r.object) continue;
      Scene trial = s;
      trial.relations.push_back(r);
      try {
        validate_scene(trial, vocab);
        s = trial;
      } catch (const ValidationError&) {
      }
    }
    try {
      return canonicalize(s, vocab);
    } catch (const ValidationError&) {
    }
  }
}

}  // namespace apo::testing
