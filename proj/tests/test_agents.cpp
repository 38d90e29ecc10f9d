#include <doctest.h>

#include <set>

#include "apo/agents.hpp"
#include "support.hpp"

using namespace apo;
using namespace apo::testing;

namespace {

NoiseProfile profile(double gen, double edit_fail, double side, double vqa,
                     std::uint64_t seed) {
  NoiseProfile p;
  p.gen_detail_error_rate = gen;
  p.edit_failure_rate = edit_fail;
  p.edit_side_effect_rate = side;
  p.vqa_error_rate = vqa;
  p.seed = seed;
  return p;
}

// Wraps a service and corrupts every generated image with one fixed edit.
class SingleFaultTools : public ToolInterface {
 public:
  SingleFaultTools(ToolService& inner, AtomicEdit fault)
      : inner_(inner), fault_(std::move(fault)) {}

  std::string generate(const Prompt& prompt, std::uint64_t seed) override {
    return inner_.edit(inner_.generate(prompt, seed), fault_);
  }
  std::string edit(const std::string& id, const AtomicEdit& e) override {
    return inner_.edit(id, e);
  }
  VqaAnswer vqa(const std::string& id, const VqaQuery& q) override {
    return inner_.vqa(id, q);
  }
  ImageRecord image(const std::string& id) override { return inner_.image(id); }
  ToolStats stats() override { return inner_.stats(); }

 private:
  ToolService& inner_;
  AtomicEdit fault_;
  bool fired_ = false;
};

}  // namespace

TEST_CASE("perfect tools: one generation, one checklist pass, no edits") {
  Vocabulary v = Vocabulary::default_vocab();
  ToolService svc(v, profile(0, 0, 0, 0, 1));
  Prompt p = Prompt::from_scene(
      parse_prompt("a red book and two yellow vases; the book is left of the vases", v), v);
  std::size_t d = verification_checklist(p.scene, v).size();

  GenResult r = image_gen_agent(p, svc, v, AgentBudget{}, 7);
  REQUIRE(r.success);
  CHECK(r.trace.counters.imggen_calls == 1);
  CHECK(r.trace.counters.vqa_calls == d);
  CHECK(r.trace.counters.editor_calls == 0);
  CHECK(scene_diff(p.scene, svc.image(r.image_id).scene, v).empty());
  CHECK(r.trace.steps.size() == 1 + d);
}

TEST_CASE("single corrupted attribute is repaired with one edit") {
  Vocabulary v = Vocabulary::default_vocab();
  ToolService svc(v, profile(0, 0, 0, 0, 2));
  Prompt p = Prompt::from_scene(parse_prompt("a dog and a black hat", v), v);
  int hat = groups_of_category(p.scene, "hat").at(0);
  SingleFaultTools tools(svc, SetColor{hat, "red"});

  GenResult r = image_gen_agent(p, tools, v, AgentBudget{10, 1, 10}, 7);
  REQUIRE(r.success);
  CHECK(r.trace.counters.imggen_calls == 1);
  CHECK(r.trace.counters.editor_calls == 1);
  CHECK(scene_diff(p.scene, svc.image(r.image_id).scene, v).empty());
}

TEST_CASE("generation agent succeeds >= 95% under generator noise") {
  Vocabulary v = Vocabulary::default_vocab();
  ToolService svc(v, profile(0.3, 0, 0, 0, 99));
  // Prompts with at most six corruptible details: single-group scenes.
  auto prompts = sample_prompts(v, 200, 555, 1);
  int ok = 0;
  for (size_t i = 0; i < prompts.size(); ++i) {
    GenResult r = image_gen_agent(prompts[i], svc, v, AgentBudget{}, 1000 + i);
    if (r.success) {
      CHECK(scene_diff(prompts[i].scene, svc.image(r.image_id).scene, v).empty());
      ++ok;
    }
    CHECK(r.trace.counters.imggen_calls <= 3);
    CHECK(r.trace.counters.imggen_calls + r.trace.counters.editor_calls <= 10);
  }
  CHECK(ok >= 190);
}

TEST_CASE("contrastive prompts are distinct near negatives") {
  Vocabulary v = Vocabulary::default_vocab();
  Prompt p = Prompt::from_scene(parse_prompt("a dog and a black hat and a cat", v), v);

  auto negs = contrastive_prompt_agent(p, v, 10, 77);
  CHECK(negs.size() == 10);
  std::set<std::string> keys;
  DistanceSearcher searcher(v);
  for (const Prompt& n : negs) {
    CHECK(keys.insert(packed_key(n.scene, v)).second);
    int d = searcher.distance(p.scene, n.scene).distance;
    CHECK(d >= 1);
    CHECK(d <= 3);
  }

  // With a compact vocabulary the 1-edit neighborhood is small enough that
  // the attribute-removed variant reliably shows up among the negatives.
  Vocabulary small;
  small.categories = {"dog", "cat", "hat"};
  small.colors = {"black"};
  small.sizes = {"big"};
  small.predicates = {"next to"};
  small.symmetric_predicates = {"next to"};
  small.max_groups = 3;
  small.max_count = 3;
  small.validate();
  Prompt sp = Prompt::from_scene(parse_prompt("a dog and a black hat and a cat", small), small);
  Scene bare = parse_prompt("a dog and a hat and a cat", small);
  bool found = false;
  for (const Prompt& n : contrastive_prompt_agent(sp, small, 30, 3))
    if (same_scene(n.scene, bare, small)) found = true;
  CHECK(found);
}

TEST_CASE("edit agent worked example: two edits with perfect tools") {
  Vocabulary v = Vocabulary::default_vocab();
  ToolService svc(v, profile(0, 0, 0, 0, 3));
  Prompt src = Prompt::from_scene(parse_prompt("a red book and two yellow vases", v), v);
  Prompt dst = Prompt::from_scene(parse_prompt("two purple vases", v), v);
  std::string id = svc.generate(src, 0);

  EditResult r = image_edit_agent(id, src, dst, svc, v, AgentBudget{});
  REQUIRE(r.success);
  CHECK(r.trace.counters.editor_calls == 2);
  CHECK(same_scene(svc.image(r.image_id).scene, dst.scene, v));

  EditResult same = image_edit_agent(id, src, src, svc, v, AgentBudget{});
  REQUIRE(same.success);
  CHECK(same.trace.counters.editor_calls == 0);
  CHECK(same.image_id == id);
}

TEST_CASE("edit agent recovers from side effects >= 90% of the time") {
  Vocabulary v = Vocabulary::default_vocab();
  ToolService svc(v, profile(0, 0, 0.2, 0, 4));
  DetRng rng(808);
  int ok = 0, total = 0;
  while (total < 200) {
    Scene src = random_scene(rng, v, 3);
    auto edits = enumerate_edits(src, v);
    Scene dst = apply_edit(src, edits[rng.uniform_int(edits.size())], v);
    if (rng.bernoulli(0.5)) {
      auto edits2 = enumerate_edits(dst, v);
      dst = apply_edit(dst, edits2[rng.uniform_int(edits2.size())], v);
    }
    if (same_scene(src, dst, v)) continue;
    ++total;
    Prompt ps = Prompt::from_scene(src, v);
    Prompt pd = Prompt::from_scene(dst, v);
    std::string id = svc.generate(ps, total);
    EditResult r = image_edit_agent(id, ps, pd, svc, v, AgentBudget{});
    CHECK(r.trace.counters.editor_calls <= 10);
    if (r.success) {
      CHECK(same_scene(svc.image(r.image_id).scene, dst, v));
      ++ok;
    }
  }
  CHECK(ok >= 180);
}

TEST_CASE("distance estimator matches the exact searcher") {
  Vocabulary v = Vocabulary::default_vocab();
  ToolService svc(v, profile(0, 0, 0, 0, 5));
  Prompt a = Prompt::from_scene(parse_prompt("a dog and a black hat", v), v);
  Prompt b = Prompt::from_scene(parse_prompt("a dog and a black hat and a cat", v), v);
  std::string ia = svc.generate(a, 0);
  std::string ib = svc.generate(b, 0);
  CHECK(distance_estimator(svc, ia, ib, v) == 1);
  CHECK_THROWS_AS(distance_estimator(svc, ia, "img-404", v), NotFoundError);

  DetRng rng(6);
  DistanceSearcher searcher(v);
  for (int i = 0; i < 10; ++i) {
    Scene sa = random_scene(rng, v, 3);
    Scene sb = random_scene(rng, v, 3);
    std::string id1 = svc.generate(Prompt::from_scene(sa, v), i);
    std::string id2 = svc.generate(Prompt::from_scene(sb, v), i);
    CHECK(distance_estimator(svc, id1, id2, v) ==
          searcher.distance(sa, sb).distance);
    DistanceEstimatorConfig noisy{true, 1.0, static_cast<std::uint64_t>(i)};
    int base = searcher.distance(sa, sb).distance;
    int got = distance_estimator(svc, id1, id2, v, noisy);
    CHECK(std::abs(got - base) <= 1);
    CHECK(got >= 1);
  }
}

TEST_CASE("pair filter is directional and rejects identical pairs") {
  Vocabulary v = Vocabulary::default_vocab();
  Scene rich = parse_prompt("a dog and a black hat and a cat", v);
  Scene poor = parse_prompt("a dog and a black hat", v);
  PairCandidate a{Prompt::from_scene(rich, v), rich};
  PairCandidate b{Prompt::from_scene(poor, v), poor};
  CHECK(pair_filter(a, b, v));   // B misses the cat that A's prompt demands
  CHECK(pair_filter(b, a, v));   // A's extra cat violates B's exact prompt
  CHECK_FALSE(pair_filter(a, a, v));

  // An unfaithful positive invalidates the pair regardless of the negative.
  PairCandidate broken{Prompt::from_scene(rich, v), poor};
  CHECK_FALSE(pair_filter(broken, b, v));
}

TEST_CASE("cluster orchestration with perfect tools keeps every negative") {
  Vocabulary v = Vocabulary::default_vocab();
  ToolService svc(v, profile(0, 0, 0, 0, 6));
  OrchestratorConfig cfg;
  cfg.k_target = 3;
  cfg.seed = 2024;

  auto prompts = sample_prompts(v, 5, 11, 3);
  int negatives = 0;
  ToolStats trace_totals;
  for (size_t i = 0; i < prompts.size(); ++i) {
    ClusterResult r = orchestrate_cluster(prompts[i], svc, v, cfg, i);
    REQUIRE(r.success);
    CHECK(r.dropped == 0);
    CHECK(r.cluster.negatives.size() == 3);
    negatives += static_cast<int>(r.cluster.negatives.size());
    for (size_t k = 1; k < r.cluster.negatives.size(); ++k)
      CHECK(r.cluster.negatives[k - 1].distance <=
            r.cluster.negatives[k].distance);
    for (const NegativeRecord& n : r.cluster.negatives) {
      CHECK(n.distance >= 1);
      CHECK_FALSE(scene_diff(r.cluster.prompt.scene, n.scene, v).empty());
    }
    CHECK(scene_diff(r.cluster.prompt.scene, r.cluster.positive_scene, v).empty());
    for (const auto& [agent, trace] : r.cluster.traces) {
      trace_totals.imggen_calls += trace.counters.imggen_calls;
      trace_totals.editor_calls += trace.counters.editor_calls;
      trace_totals.vqa_calls += trace.counters.vqa_calls;
    }
  }
  CHECK(negatives == 15);
  // Every tool call belongs to exactly one trace.
  CHECK(trace_totals == svc.stats());
}
