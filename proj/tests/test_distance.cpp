#include <doctest.h>

#include "apo/distance.hpp"
#include "support.hpp"

using namespace apo;
using namespace apo::testing;

TEST_CASE("worked example: red book and two yellow vases -> two purple vases") {
  Vocabulary v = Vocabulary::default_vocab();
  Scene a = parse_prompt("a red book and two yellow vases", v);
  Scene b = parse_prompt("two purple vases", v);
  DistanceSearcher searcher(v);
  auto r = searcher.distance(a, b);
  CHECK_FALSE(r.lower_bound);
  CHECK(r.distance == 2);

  auto plan = searcher.plan(a, b);
  REQUIRE(plan.has_value());
  CHECK(plan->size() == 2);
  Scene cur = a;
  for (const auto& e : *plan) cur = apply_edit(cur, e, v);
  CHECK(same_scene(cur, b, v));
}

TEST_CASE("adding a bare group costs one edit") {
  Vocabulary v = Vocabulary::default_vocab();
  Scene a = parse_prompt("a dog and a black hat", v);
  Scene b = parse_prompt("a cat and a dog and a black hat", v);
  DistanceSearcher searcher(v);
  CHECK(searcher.distance(a, b).distance == 1);
}

TEST_CASE("identity distance is zero") {
  Vocabulary v = Vocabulary::default_vocab();
  DetRng rng(3);
  DistanceSearcher searcher(v);
  for (int i = 0; i < 20; ++i) {
    Scene s = random_scene(rng, v, 4);
    CHECK(searcher.distance(s, s).distance == 0);
  }
}

TEST_CASE("matches BFS oracle on random pairs (3-group vocabulary)") {
  Vocabulary v = small3_vocab();
  const int bound = 4;
  DistanceSearcher searcher(v, bound);
  DetRng rng(424242);
  for (int src = 0; src < 8; ++src) {
    Scene a = random_scene(rng, v, 3);
    auto oracle = oracle_distances_from(a, v, bound);
    for (int i = 0; i < 25; ++i) {
      Scene b = random_scene(rng, v, 3);
      auto got = searcher.distance(a, b);
      auto it = oracle.find(packed_key(b, v));
      if (it != oracle.end()) {
        CHECK_FALSE(got.lower_bound);
        CHECK(got.distance == it->second);
      } else {
        CHECK(got.lower_bound);
        CHECK(got.distance == bound + 1);
      }
    }
  }
}

TEST_CASE("symmetry on relation-free scenes, triangle inequality on samples") {
  Vocabulary v = small3_vocab();
  DistanceSearcher searcher(v, 8);
  DetRng rng(17);
  for (int i = 0; i < 40; ++i) {
    Scene a = random_scene(rng, v, 3);
    Scene b = random_scene(rng, v, 3);
    Scene c = random_scene(rng, v, 3);
    a.relations.clear();
    b.relations.clear();
    c.relations.clear();
    auto ab = searcher.distance(a, b);
    auto ba = searcher.distance(b, a);
    if (!ab.lower_bound && !ba.lower_bound) CHECK(ab.distance == ba.distance);
    auto ac = searcher.distance(a, c);
    auto bc = searcher.distance(b, c);
    if (!ab.lower_bound && !bc.lower_bound && !ac.lower_bound)
      CHECK(ac.distance <= ab.distance + bc.distance);
    CHECK((ab.distance == 0) == same_scene(a, b, v));
  }
}

TEST_CASE("bounded search reports a lower bound") {
  Vocabulary v = Vocabulary::default_vocab();
  DistanceSearcher searcher(v, 2);
  Scene a = parse_prompt("a dog", v);
  Scene b = parse_prompt(
      "a red big dog and two blue cats and a yellow hat and a green ball", v);
  auto r = searcher.distance(a, b);
  CHECK(r.lower_bound);
  CHECK(r.distance == 3);
  CHECK_FALSE(searcher.plan(a, b).has_value());
}
