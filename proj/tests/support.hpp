#pragma once

// Shared helpers for the test suites: small vocabularies, exhaustive scene
// enumeration, a brute-force BFS distance oracle (kept independent of the
// production A* search), and a seeded random scene generator.

#include <deque>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "apo/rng.hpp"
#include "apo/scene.hpp"

namespace apo::testing {

// 2 categories, 2 colors, 1 size, 1 directional predicate, <=2 groups.
inline Vocabulary tiny_vocab() {
  Vocabulary v;
  v.categories = {"dog", "cat"};
  v.colors = {"red", "blue"};
  v.sizes = {"small"};
  v.predicates = {"left of"};
  v.max_groups = 2;
  v.max_count = 2;
  return v;
}

// Allows three groups and an opposite predicate pair; still small enough for
// oracle searches.
inline Vocabulary small3_vocab() {
  Vocabulary v;
  v.categories = {"dog", "cat"};
  v.colors = {"red", "blue"};
  v.sizes = {"small"};
  v.predicates = {"left of", "right of"};
  v.opposite_predicates = {{"left of", "right of"}};
  v.max_groups = 3;
  v.max_count = 2;
  return v;
}

// Every canonical scene of the vocabulary (group multisets x valid relation
// subsets). Only usable for tiny vocabularies.
std::vector<Scene> all_scenes(const Vocabulary& vocab);

// Plain breadth-first search over enumerate_edits, no pruning, no heuristic.
// Returns nullopt when the distance exceeds `bound`.
std::optional<int> oracle_distance(const Scene& a, const Scene& b,
                                   const Vocabulary& vocab, int bound);

// BFS distances from `source` to every reachable canonical scene within
// `bound`, keyed by packed_key.
std::map<std::string, int> oracle_distances_from(const Scene& source,
                                                 const Vocabulary& vocab,
                                                 int bound);

Scene random_scene(DetRng& rng, const Vocabulary& vocab, int max_groups);

}  // namespace apo::testing
