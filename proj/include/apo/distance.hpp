#pragma once

#include <optional>
#include <vector>

#include "apo/scene.hpp"

namespace apo {

// Exact minimum number of atomic edits transforming one canonical scene into
// another, with a configurable search bound. Also produces a shortest edit
// plan for the image-editing agent.
//
// The search is A* over canonical scene keys with unit edge cost. Moves are
// restricted to attribute/predicate values occurring in either endpoint scene
// (an exchange argument shows a shortest path never needs foreign values);
// the unit tests compare against an unrestricted breadth-first oracle.
// The heuristic is the per-category assignment bound where a matched pair
// costs min(|count delta| + color mismatch + size mismatch, 2) and every
// unmatched group costs 1; each atomic edit changes that bound by at most 1.
class DistanceSearcher {
 public:
  // max_nodes caps the stored search nodes so pathological far-apart pairs
  // degrade to a bounded-out result instead of exhausting memory; typical
  // queries stay in the low thousands.
  explicit DistanceSearcher(Vocabulary vocab, int max_depth = 8,
                            long max_nodes = 500000);

  struct Result {
    int distance = 0;
    // True when the depth or node budget was exhausted; `distance` is then
    // max_depth + 1 and the true distance may be anything above max_depth
    // (depth bound) or unresolved (node budget).
    bool lower_bound = false;
  };

  Result distance(const Scene& a, const Scene& b);

  // Shortest edit sequence a -> b, each edit valid against the canonical
  // intermediate produced by applying the previous ones. nullopt when the
  // distance exceeds the search bound.
  std::optional<std::vector<AtomicEdit>> plan(const Scene& a, const Scene& b);

  int max_depth() const { return max_depth_; }
  const Vocabulary& vocab() const { return vocab_; }

 private:
  Vocabulary vocab_;
  int max_depth_;
  long max_nodes_;
};

}  // namespace apo
