#include "apo/agents.hpp"

#include <algorithm>

#include "apo/json_io.hpp"
#include "apo/rng.hpp"
#include "apo/tools_http.hpp"

namespace apo {

void AgentBudget::validate() const {
  if (max_total_attempts < 1 || max_initial_generations < 1 ||
      max_edit_calls < 1)
    throw ValidationError("agent budgets must be >= 1");
  if (max_initial_generations > max_total_attempts)
    throw ValidationError(
        "max_initial_generations cannot exceed max_total_attempts");
}

void AgentTrace::add(TraceStep step) {
  if (step.tool == "generate")
    ++counters.imggen_calls;
  else if (step.tool == "edit")
    ++counters.editor_calls;
  else if (step.tool == "vqa")
    ++counters.vqa_calls;
  steps.push_back(std::move(step));
}

// ---------------------------------------------------------------------------
// Verification

std::vector<std::pair<VqaQuery, VqaAnswer>> verification_checklist(
    const Scene& scene, const Vocabulary& vocab) {
  Scene s = canonicalize(scene, vocab);
  std::vector<std::pair<VqaQuery, VqaAnswer>> out;

  for (const std::string& cat : vocab.categories) {
    auto idx = groups_of_category(s, cat);
    if (idx.empty()) {
      VqaQuery q;
      q.kind = VqaQuery::Kind::GroupPresent;
      q.category = cat;
      out.emplace_back(q, false);
      continue;
    }
    for (int o = 0; o < static_cast<int>(idx.size()); ++o) {
      const EntityGroup& g = s.groups[idx[o]];
      VqaQuery c;
      c.kind = VqaQuery::Kind::CountOf;
      c.category = cat;
      c.ordinal = o;
      out.emplace_back(c, g.count);
      VqaQuery col = c;
      col.kind = VqaQuery::Kind::AttributeOf;
      col.attribute = VqaQuery::Attribute::Color;
      out.emplace_back(col, g.color ? *g.color : std::string("none"));
      VqaQuery sz = col;
      sz.attribute = VqaQuery::Attribute::Size;
      out.emplace_back(sz, g.size ? *g.size : std::string("none"));
    }
    if (static_cast<int>(idx.size()) < vocab.max_groups) {
      // Guard against an unexpected extra group of the same category.
      VqaQuery g;
      g.kind = VqaQuery::Kind::CountOf;
      g.category = cat;
      g.ordinal = static_cast<int>(idx.size());
      out.emplace_back(g, 0);
    }
  }

  // Full relation matrix over the expected groups.
  auto ordinal_of = [&](int group) {
    auto idx = groups_of_category(s, s.groups[group].category);
    return static_cast<int>(std::find(idx.begin(), idx.end(), group) -
                            idx.begin());
  };
  int n = static_cast<int>(s.groups.size());
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      for (const std::string& p : vocab.predicates) {
        auto holds = [&](int a, int b) {
          for (const Relation& r : s.relations) {
            if (r.predicate != p) continue;
            if (r.subject == a && r.object == b) return true;
            if (vocab.is_symmetric(p) && r.subject == b && r.object == a)
              return true;
          }
          return false;
        };
        VqaQuery q;
        q.kind = VqaQuery::Kind::RelationHolds;
        q.subject_category = s.groups[i].category;
        q.subject_ordinal = ordinal_of(i);
        q.object_category = s.groups[j].category;
        q.object_ordinal = ordinal_of(j);
        q.predicate = p;
        out.emplace_back(q, holds(i, j));
        if (!vocab.is_symmetric(p)) {
          VqaQuery rev = q;
          std::swap(rev.subject_category, rev.object_category);
          std::swap(rev.subject_ordinal, rev.object_ordinal);
          out.emplace_back(rev, holds(j, i));
        }
      }
  return out;
}

namespace {

std::string answer_text(const VqaAnswer& a) { return to_json(a).dump(); }

struct VerifyOutcome {
  int mismatches = 0;
  Scene believed;  // reconstruction of the stored scene from the answers
};

// Runs the full checklist for `expected` against the image. The answers are
// indexed by the server's canonical ordering, so the reconstruction's group
// order (vocabulary category blocks, server ordinals within each block)
// matches the stored scene's canonical order and edit indices line up.
VerifyOutcome verify_image(ToolInterface& tools, const std::string& image_id,
                           const Scene& expected, const Vocabulary& vocab,
                           AgentTrace& trace) {
  Scene exp = canonicalize(expected, vocab);
  auto checklist = verification_checklist(exp, vocab);

  struct CatInfo {
    std::vector<int> counts;  // by server ordinal, -1 = not asked
    std::vector<std::optional<std::string>> colors, sizes;
    bool present_answer = true;
    bool asked_present = false;
  };
  std::map<std::string, CatInfo> cats;
  for (const std::string& c : vocab.categories) {
    CatInfo info;
    info.counts.assign(vocab.max_groups, -1);
    info.colors.assign(vocab.max_groups, std::nullopt);
    info.sizes.assign(vocab.max_groups, std::nullopt);
    cats[c] = info;
  }
  std::vector<std::pair<VqaQuery, bool>> relation_answers;

  VerifyOutcome out;
  for (const auto& [query, want] : checklist) {
    VqaAnswer got = tools.vqa(image_id, query);
    trace.add({"vqa", to_json(query).dump(), answer_text(got),
               got == want ? "ok" : "mismatch"});
    if (!(got == want)) ++out.mismatches;
    switch (query.kind) {
      case VqaQuery::Kind::GroupPresent:
        cats[query.category].asked_present = true;
        cats[query.category].present_answer = std::get<bool>(got);
        break;
      case VqaQuery::Kind::CountOf:
        cats[query.category].counts[query.ordinal] = std::get<int>(got);
        break;
      case VqaQuery::Kind::AttributeOf: {
        const std::string& v = std::get<std::string>(got);
        auto& info = cats[query.category];
        if (query.attribute == VqaQuery::Attribute::Color)
          info.colors[query.ordinal] =
              v == "none" ? std::nullopt : std::optional<std::string>(v);
        else
          info.sizes[query.ordinal] =
              v == "none" ? std::nullopt : std::optional<std::string>(v);
        break;
      }
      case VqaQuery::Kind::RelationHolds:
        relation_answers.emplace_back(query, std::get<bool>(got));
        break;
    }
  }

  // Reconstruct the believed scene.
  std::map<std::string, int> offset;  // category -> index of its first group
  Scene& b = out.believed;
  for (const std::string& cat : vocab.categories) {
    const CatInfo& info = cats.at(cat);
    offset[cat] = static_cast<int>(b.groups.size());
    if (info.asked_present) {
      // Category absent from the expectation; presence means one unknown
      // extra group.
      if (info.present_answer)
        b.groups.push_back(EntityGroup{cat, 1, std::nullopt, std::nullopt});
      continue;
    }
    for (int o = 0; o < vocab.max_groups; ++o) {
      if (info.counts[o] <= 0) break;  // zeros only occur at the tail
      EntityGroup g;
      g.category = cat;
      g.count = info.counts[o];
      g.color = info.colors[o];
      g.size = info.sizes[o];
      b.groups.push_back(g);
    }
  }
  auto believed_index = [&](const std::string& cat, int ordinal) -> int {
    int idx = offset.at(cat) + ordinal;
    if (ordinal >= static_cast<int>(groups_of_category(b, cat).size()))
      return -1;
    return idx;
  };
  for (const auto& [q, holds] : relation_answers) {
    if (!holds) continue;
    int s = believed_index(q.subject_category, q.subject_ordinal);
    int o = believed_index(q.object_category, q.object_ordinal);
    if (s < 0 || o < 0) continue;
    Relation r{s, q.predicate, o};
    if (vocab.is_symmetric(q.predicate) && r.subject > r.object)
      std::swap(r.subject, r.object);
    if (std::find(b.relations.begin(), b.relations.end(), r) ==
        b.relations.end())
      b.relations.push_back(r);
  }

  // Noisy answers can assemble an impossible scene (phantom groups past the
  // vocabulary limit, mutually contradictory relations). Repair greedily so
  // downstream planning and edits stay well-posed: truncate surplus groups,
  // then keep each relation only if the scene remains valid with it.
  if (static_cast<int>(b.groups.size()) > vocab.max_groups) {
    b.groups.resize(vocab.max_groups);
    std::erase_if(b.relations, [&](const Relation& r) {
      return r.subject >= vocab.max_groups || r.object >= vocab.max_groups;
    });
  }
  if (!b.groups.empty()) {
    std::vector<Relation> wanted = std::move(b.relations);
    b.relations.clear();
    for (const Relation& r : wanted) {
      b.relations.push_back(r);
      try {
        validate_scene(b, vocab);
      } catch (const ValidationError&) {
        b.relations.pop_back();
      }
    }
  }
  return out;
}

// One tool call with a single retry on transport failure; returns nullopt when
// the call still fails (the caller counts it as a spent attempt).
template <typename Fn>
auto try_call(Fn&& fn) -> std::optional<decltype(fn())> {
  for (int attempt = 0; attempt < 2; ++attempt) {
    try {
      return fn();
    } catch (const NotFoundError&) {
      if (attempt == 1) return std::nullopt;
    } catch (const ValidationError&) {
      return std::nullopt;
    }
  }
  return std::nullopt;
}

}  // namespace

// ---------------------------------------------------------------------------
// Image generation agent

GenResult image_gen_agent(const Prompt& prompt, ToolInterface& tools,
                          const Vocabulary& vocab, const AgentBudget& budget,
                          std::uint64_t seed) {
  budget.validate();
  GenResult result;
  AgentTrace& trace = result.trace;
  Scene goal = canonicalize(prompt.scene, vocab);
  DistanceSearcher searcher(vocab, vocab.max_groups * 6);

  int attempts = 0;  // generate + edit calls
  struct Candidate {
    std::string id;
    VerifyOutcome verify;
  };
  std::vector<Candidate> candidates;

  for (int g = 0; g < budget.max_initial_generations &&
                  attempts < budget.max_total_attempts;
       ++g) {
    ++attempts;
    auto id = try_call([&] {
      return tools.generate(prompt, DetRng::mix(seed, 0x67656e, g));
    });
    if (!id) {
      trace.add({"generate", prompt.text, "", "transport failure"});
      continue;
    }
    trace.add({"generate", prompt.text, *id, "fresh generation"});
    VerifyOutcome v = verify_image(tools, *id, goal, vocab, trace);
    if (v.mismatches == 0) {
      result.success = true;
      result.image_id = *id;
      return result;
    }
    candidates.push_back({*id, std::move(v)});
  }

  if (candidates.empty()) return result;
  // Closest generation: fewest mismatches, earliest wins ties.
  size_t best = 0;
  for (size_t i = 1; i < candidates.size(); ++i)
    if (candidates[i].verify.mismatches < candidates[best].verify.mismatches)
      best = i;
  std::string id = candidates[best].id;
  Scene believed = candidates[best].verify.believed;

  int edit_calls = 0;
  while (attempts < budget.max_total_attempts &&
         edit_calls < budget.max_edit_calls) {
    std::optional<std::vector<AtomicEdit>> plan;
    try {
      plan = searcher.plan(believed, goal);
    } catch (const ValidationError&) {
      break;  // believed scene too damaged to plan from
    }
    if (!plan || plan->empty()) break;  // cannot plan a fix
    const AtomicEdit& fix = plan->front();
    ++attempts;
    ++edit_calls;
    auto next = try_call([&] { return tools.edit(id, fix); });
    trace.add({"edit", describe_edit(fix), next ? *next : "",
               next ? "corrective edit" : "edit rejected"});
    if (next) id = *next;
    VerifyOutcome v = verify_image(tools, id, goal, vocab, trace);
    if (v.mismatches == 0) {
      result.success = true;
      result.image_id = id;
      return result;
    }
    believed = v.believed;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Contrastive prompt agent

std::vector<Prompt> contrastive_prompt_agent(const Prompt& prompt,
                                             const Vocabulary& vocab,
                                             int k_target, std::uint64_t seed) {
  if (k_target < 1) throw ValidationError("k_target must be >= 1");
  Scene origin = canonicalize(prompt.scene, vocab);
  if (enumerate_edits(origin, vocab).empty())
    throw ValidationError("scene admits no atomic edits");

  DetRng rng(seed, 0x6e6567);
  std::string origin_key = packed_key(origin, vocab);
  std::vector<Prompt> out;
  std::vector<std::string> seen;

  int max_attempts = k_target * 40;
  for (int attempt = 0;
       attempt < max_attempts && static_cast<int>(out.size()) < k_target;
       ++attempt) {
    // 1..3 edits, heavily favoring near negatives.
    double r = rng.next_double();
    int n_edits = r < 0.6 ? 1 : (r < 0.9 ? 2 : 3);
    Scene s = origin;
    bool ok = true;
    for (int e = 0; e < n_edits; ++e) {
      auto edits = enumerate_edits(s, vocab);
      if (edits.empty()) {
        ok = false;
        break;
      }
      s = apply_edit(s, edits[rng.uniform_int(edits.size())], vocab);
    }
    if (!ok) continue;
    std::string key = packed_key(s, vocab);
    if (key == origin_key) continue;
    if (std::find(seen.begin(), seen.end(), key) != seen.end()) continue;
    seen.push_back(key);
    out.push_back(Prompt::from_scene(s, vocab));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Image editing agent

EditResult image_edit_agent(const std::string& source_image,
                            const Prompt& source_prompt,
                            const Prompt& target_prompt, ToolInterface& tools,
                            const Vocabulary& vocab, const AgentBudget& budget,
                            int search_depth) {
  budget.validate();
  EditResult result;
  AgentTrace& trace = result.trace;
  Scene target = canonicalize(target_prompt.scene, vocab);
  DistanceSearcher searcher(vocab, search_depth);

  std::string id = source_image;
  // The first verification runs against the intended starting point; each
  // subsequent one against the intended intermediate scene, covering every
  // detail rather than only the edited object.
  Scene expected = canonicalize(source_prompt.scene, vocab);
  int edit_calls = 0;

  while (true) {
    VerifyOutcome v = verify_image(tools, id, expected, vocab, trace);
    std::optional<std::vector<AtomicEdit>> plan;
    try {
      if (same_scene(v.believed, target, vocab)) {
        result.success = true;
        result.image_id = id;
        return result;
      }
      if (edit_calls >= budget.max_edit_calls) return result;
      plan = searcher.plan(v.believed, target);
      if (!plan || plan->empty()) return result;
      const AtomicEdit& step = plan->front();
      ++edit_calls;
      auto next = try_call([&] { return tools.edit(id, step); });
      trace.add({"edit", describe_edit(step), next ? *next : "",
                 next ? "plan step" : "edit rejected"});
      if (next) id = *next;
      expected = apply_edit(canonicalize(v.believed, vocab), step, vocab);
    } catch (const ValidationError&) {
      return result;  // believed scene too damaged to reason about
    }
  }
}

// ---------------------------------------------------------------------------
// Distance estimator & pair filter

int distance_estimator(ToolInterface& tools, const std::string& positive_image,
                       const std::string& negative_image,
                       const Vocabulary& vocab,
                       const DistanceEstimatorConfig& config,
                       int search_depth) {
  Scene pos = tools.image(positive_image).scene;
  Scene neg = tools.image(negative_image).scene;
  DistanceSearcher searcher(vocab, search_depth);
  int d = searcher.distance(pos, neg).distance;
  if (config.noisy) {
    DetRng rng(config.seed, 0x64697374);
    if (rng.bernoulli(config.flip_prob))
      d += rng.bernoulli(0.5) ? 1 : -1;
    d = std::max(d, 1);
  }
  return d;
}

bool pair_filter(const PairCandidate& positive, const PairCandidate& negative,
                 const Vocabulary& vocab) {
  if (!scene_diff(positive.prompt.scene, positive.image_scene, vocab).empty())
    return false;
  return !scene_diff(positive.prompt.scene, negative.image_scene, vocab)
              .empty();
}

// ---------------------------------------------------------------------------
// Orchestration

ClusterResult orchestrate_cluster(const Prompt& prompt, ToolInterface& tools,
                                  const Vocabulary& vocab,
                                  const OrchestratorConfig& config,
                                  std::uint64_t cluster_ordinal) {
  ClusterResult result;
  Cluster& cluster = result.cluster;
  cluster.prompt = Prompt::from_scene(prompt.scene, vocab);

  GenResult gen = image_gen_agent(
      prompt, tools, vocab, config.budget,
      DetRng::mix(config.seed, cluster_ordinal, 1));
  cluster.traces["image_gen"] = gen.trace;
  if (!gen.success) {
    result.failure_reason = "positive image could not be verified";
    return result;
  }
  cluster.positive_image = gen.image_id;
  cluster.positive_scene = tools.image(gen.image_id).scene;

  std::vector<Prompt> negatives = contrastive_prompt_agent(
      cluster.prompt, vocab, config.k_target,
      DetRng::mix(config.seed, cluster_ordinal, 2));

  AgentTrace edit_trace;
  DistanceEstimatorConfig dist = config.distance;
  for (size_t k = 0; k < negatives.size(); ++k) {
    EditResult edited =
        image_edit_agent(cluster.positive_image, cluster.prompt, negatives[k],
                         tools, vocab, config.budget, config.search_depth);
    for (const TraceStep& s : edited.trace.steps) edit_trace.add(s);
    if (!edited.success) {
      ++result.dropped;
      continue;
    }
    dist.seed = DetRng::mix(config.seed, cluster_ordinal, 100 + k);
    NegativeRecord rec;
    rec.prompt = negatives[k];
    rec.image_id = edited.image_id;
    rec.scene = tools.image(edited.image_id).scene;
    rec.distance =
        distance_estimator(tools, cluster.positive_image, edited.image_id,
                           vocab, dist, config.search_depth);
    if (rec.distance < 1 ||
        !pair_filter({cluster.prompt, cluster.positive_scene},
                     {rec.prompt, rec.scene}, vocab)) {
      ++result.dropped;
      continue;
    }
    cluster.negatives.push_back(std::move(rec));
  }
  cluster.traces["image_edit"] = std::move(edit_trace);

  std::stable_sort(cluster.negatives.begin(), cluster.negatives.end(),
                   [](const NegativeRecord& a, const NegativeRecord& b) {
                     return a.distance < b.distance;
                   });
  if (cluster.negatives.empty()) {
    result.failure_reason = "no negative survived editing";
    return result;
  }
  result.success = true;
  return result;
}

std::vector<Prompt> sample_prompts(const Vocabulary& vocab, int n,
                                   std::uint64_t seed, int max_groups) {
  if (n < 1) throw ValidationError("prompt count must be >= 1");
  if (max_groups <= 0) max_groups = vocab.max_groups;
  DetRng rng(seed, 0x70726f6d);
  std::vector<Prompt> out;
  out.reserve(n);
  while (static_cast<int>(out.size()) < n) {
    int n_groups = 1 + static_cast<int>(rng.uniform_int(max_groups));
    Scene s;
    for (int g = 0; g < n_groups; ++g) {
      EntityGroup grp;
      grp.category = vocab.categories[rng.uniform_int(vocab.categories.size())];
      grp.count = 1 + static_cast<int>(rng.uniform_int(
                          std::min(vocab.max_count, 9)));
      if (rng.bernoulli(0.6))
        grp.color = vocab.colors[rng.uniform_int(vocab.colors.size())];
      if (rng.bernoulli(0.3) && !vocab.sizes.empty())
        grp.size = vocab.sizes[rng.uniform_int(vocab.sizes.size())];
      s.groups.push_back(grp);
    }
    if (n_groups > 1 && rng.bernoulli(0.5)) {
      Relation r;
      r.subject = static_cast<int>(rng.uniform_int(n_groups));
      r.object = static_cast<int>(rng.uniform_int(n_groups));
      r.predicate = vocab.predicates[rng.uniform_int(vocab.predicates.size())];
      if (r.subject != r.object) {
        Scene trial = s;
        trial.relations.push_back(r);
        try {
          validate_scene(trial, vocab);
          s = trial;
        } catch (const ValidationError&) {
        }
      }
    }
    try {
      out.push_back(Prompt::from_scene(s, vocab));
    } catch (const ValidationError&) {
    }
  }
  return out;
}

}  // namespace apo
