#include "apo/tools.hpp"

#include <algorithm>
#include <cstdio>

namespace apo {

namespace {

std::string format_id(std::uint64_t n) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "img-%06llu",
                static_cast<unsigned long long>(n));
  return buf;
}

bool probability(double p) { return p >= 0.0 && p <= 1.0; }

}  // namespace

void NoiseProfile::validate() const {
  if (!probability(gen_detail_error_rate) || !probability(edit_failure_rate) ||
      !probability(edit_side_effect_rate) || !probability(vqa_error_rate))
    throw ValidationError("noise profile rates must lie in [0, 1]");
}

void validate_query(const VqaQuery& query, const Vocabulary& vocab) {
  auto need_category = [&](const std::string& c) {
    if (std::find(vocab.categories.begin(), vocab.categories.end(), c) ==
        vocab.categories.end())
      throw ValidationError("query references unknown category: " + c);
  };
  switch (query.kind) {
    case VqaQuery::Kind::GroupPresent:
      need_category(query.category);
      break;
    case VqaQuery::Kind::CountOf:
    case VqaQuery::Kind::AttributeOf:
      need_category(query.category);
      if (query.ordinal < 0 || query.ordinal >= vocab.max_groups)
        throw ValidationError("query ordinal out of range");
      break;
    case VqaQuery::Kind::RelationHolds:
      need_category(query.subject_category);
      need_category(query.object_category);
      if (std::find(vocab.predicates.begin(), vocab.predicates.end(),
                    query.predicate) == vocab.predicates.end())
        throw ValidationError("query references unknown predicate: " +
                              query.predicate);
      if (query.subject_ordinal < 0 || query.object_ordinal < 0 ||
          query.subject_ordinal >= vocab.max_groups ||
          query.object_ordinal >= vocab.max_groups)
        throw ValidationError("query ordinal out of range");
      break;
  }
}

ToolService::ToolService(const Vocabulary& vocab, const NoiseProfile& profile)
    : vocab_(vocab), profile_(profile) {
  vocab_.validate();
  profile_.validate();
}

const ImageRecord& ToolService::find(const std::string& image_id) const {
  auto it = index_.find(image_id);
  if (it == index_.end())
    throw NotFoundError("unknown image id: " + image_id);
  return records_[it->second];
}

std::string ToolService::store(Scene scene, Provenance provenance,
                               std::uint64_t ordinal) {
  ImageRecord rec;
  rec.id = format_id(records_.size() + 1);
  rec.scene = std::move(scene);
  rec.provenance = std::move(provenance);
  rec.created_at = ordinal;
  index_[rec.id] = records_.size();
  records_.push_back(std::move(rec));
  return records_.back().id;
}

Scene ToolService::corrupt_scene(const Scene& scene, DetRng& rng) const {
  const double p = profile_.gen_detail_error_rate;
  Scene s = canonicalize(scene, vocab_);

  std::vector<bool> removed(s.groups.size(), false);
  for (size_t g = 0; g < s.groups.size(); ++g) {
    EntityGroup& grp = s.groups[g];
    // One decision per detail, drawn in a fixed order.
    if (rng.bernoulli(p)) removed[g] = true;
    if (rng.bernoulli(p)) {
      std::vector<int> counts;
      if (grp.count > 1) counts.push_back(grp.count - 1);
      if (grp.count < vocab_.max_count) counts.push_back(grp.count + 1);
      if (!counts.empty()) grp.count = counts[rng.uniform_int(counts.size())];
    }
    if (rng.bernoulli(p)) {
      std::vector<std::optional<std::string>> opts;
      if (grp.color) opts.push_back(std::nullopt);
      for (const auto& c : vocab_.colors)
        if (!grp.color || c != *grp.color) opts.emplace_back(c);
      if (!opts.empty()) grp.color = opts[rng.uniform_int(opts.size())];
    }
    if (rng.bernoulli(p)) {
      std::vector<std::optional<std::string>> opts;
      if (grp.size) opts.push_back(std::nullopt);
      for (const auto& sz : vocab_.sizes)
        if (!grp.size || sz != *grp.size) opts.emplace_back(sz);
      if (!opts.empty()) grp.size = opts[rng.uniform_int(opts.size())];
    }
  }

  // Relation details, mutated sequentially against the evolving list so two
  // corruptions on the same endpoint pair cannot introduce a conflict.
  std::vector<Relation> rels = s.relations;
  for (size_t i = 0; i < rels.size(); ++i) {
    if (!rng.bernoulli(p)) continue;
    std::vector<std::optional<Relation>> opts;
    opts.push_back(std::nullopt);  // drop
    int a = rels[i].subject, b = rels[i].object;
    for (const auto& q : vocab_.predicates) {
      std::vector<Relation> variants;
      if (vocab_.is_symmetric(q))
        variants.push_back(Relation{std::min(a, b), q, std::max(a, b)});
      else {
        variants.push_back(Relation{a, q, b});
        variants.push_back(Relation{b, q, a});
      }
      for (const Relation& cand : variants) {
        if (cand == rels[i]) continue;
        bool ok = true;
        for (size_t j = 0; j < rels.size(); ++j) {
          if (j == i) continue;
          const Relation& other = rels[j];
          bool same_pair =
              (other.subject == cand.subject && other.object == cand.object) ||
              (other.subject == cand.object && other.object == cand.subject);
          if (!same_pair) continue;
          if (other == cand || vocab_.are_opposite(other.predicate, cand.predicate) ||
              (other.predicate == cand.predicate &&
               !vocab_.is_symmetric(cand.predicate)))
            ok = false;
        }
        if (ok) opts.push_back(cand);
      }
    }
    auto pick = opts[rng.uniform_int(opts.size())];
    if (!pick) {
      rels.erase(rels.begin() + i);
      --i;
    } else {
      rels[i] = *pick;
    }
  }
  s.relations = rels;

  // Never produce an empty scene: keep the first group if every presence
  // detail fired.
  if (std::all_of(removed.begin(), removed.end(),
                  [](bool r) { return r; }) &&
      !removed.empty())
    removed[0] = false;

  Scene out;
  std::vector<int> remap(s.groups.size(), -1);
  for (size_t g = 0; g < s.groups.size(); ++g) {
    if (removed[g]) continue;
    remap[g] = static_cast<int>(out.groups.size());
    out.groups.push_back(s.groups[g]);
  }
  for (const Relation& r : s.relations) {
    if (remap[r.subject] < 0 || remap[r.object] < 0) continue;
    out.relations.push_back(
        Relation{remap[r.subject], r.predicate, remap[r.object]});
  }
  return canonicalize(out, vocab_);
}

std::string ToolService::generate(const Prompt& prompt, std::uint64_t seed) {
  std::lock_guard<std::mutex> lock(mu_);
  std::uint64_t ordinal = next_ordinal_++;
  ++stats_.imggen_calls;
  validate_scene(prompt.scene, vocab_);
  DetRng rng(DetRng::mix(profile_.seed, seed, ordinal), 1);
  Scene result = corrupt_scene(prompt.scene, rng);
  return store(std::move(result), Provenance{Provenance::Kind::Generated},
               ordinal);
}

std::string ToolService::edit(const std::string& image_id,
                              const AtomicEdit& instruction) {
  std::lock_guard<std::mutex> lock(mu_);
  std::uint64_t ordinal = next_ordinal_++;
  ++stats_.editor_calls;
  const ImageRecord& src = find(image_id);
  Scene correct = apply_edit(src.scene, instruction, vocab_);

  DetRng rng(DetRng::mix(profile_.seed, 0, ordinal), 2);
  Scene result = correct;
  if (rng.bernoulli(profile_.edit_failure_rate)) {
    // Wrong edit or no-op: any outcome that differs from the correct one.
    std::string correct_key = packed_key(correct, vocab_);
    std::vector<Scene> outcomes;
    Scene noop = canonicalize(src.scene, vocab_);
    if (packed_key(noop, vocab_) != correct_key) outcomes.push_back(noop);
    for (const AtomicEdit& e : enumerate_edits(src.scene, vocab_)) {
      Scene alt = apply_edit(src.scene, e, vocab_);
      if (packed_key(alt, vocab_) != correct_key)
        outcomes.push_back(std::move(alt));
    }
    if (!outcomes.empty())
      result = outcomes[rng.uniform_int(outcomes.size())];
  }
  if (rng.bernoulli(profile_.edit_side_effect_rate)) {
    auto extra = enumerate_edits(result, vocab_);
    if (!extra.empty())
      result = apply_edit(result, extra[rng.uniform_int(extra.size())], vocab_);
  }

  Provenance prov;
  prov.kind = Provenance::Kind::Edited;
  prov.from_id = image_id;
  prov.edit = instruction;
  return store(std::move(result), std::move(prov), ordinal);
}

VqaAnswer ToolService::truthful_answer(const Scene& scene,
                                       const VqaQuery& query) const {
  auto nth_group = [&](const std::string& cat, int ordinal) -> const EntityGroup* {
    auto idx = groups_of_category(scene, cat);
    if (ordinal >= static_cast<int>(idx.size())) return nullptr;
    return &scene.groups[idx[ordinal]];
  };
  switch (query.kind) {
    case VqaQuery::Kind::GroupPresent:
      return !groups_of_category(scene, query.category).empty();
    case VqaQuery::Kind::CountOf: {
      const EntityGroup* g = nth_group(query.category, query.ordinal);
      return g ? g->count : 0;
    }
    case VqaQuery::Kind::AttributeOf: {
      const EntityGroup* g = nth_group(query.category, query.ordinal);
      if (!g) return std::string("none");
      const auto& attr =
          query.attribute == VqaQuery::Attribute::Color ? g->color : g->size;
      return attr ? *attr : std::string("none");
    }
    case VqaQuery::Kind::RelationHolds: {
      auto subj = groups_of_category(scene, query.subject_category);
      auto obj = groups_of_category(scene, query.object_category);
      if (query.subject_ordinal >= static_cast<int>(subj.size()) ||
          query.object_ordinal >= static_cast<int>(obj.size()))
        return false;
      int si = subj[query.subject_ordinal];
      int oi = obj[query.object_ordinal];
      bool sym = vocab_.is_symmetric(query.predicate);
      for (const Relation& r : scene.relations) {
        if (r.predicate != query.predicate) continue;
        if (r.subject == si && r.object == oi) return true;
        if (sym && r.subject == oi && r.object == si) return true;
      }
      return false;
    }
  }
  throw ValidationError("unreachable query kind");
}

VqaAnswer ToolService::vqa(const std::string& image_id, const VqaQuery& query) {
  std::lock_guard<std::mutex> lock(mu_);
  std::uint64_t ordinal = next_ordinal_++;
  ++stats_.vqa_calls;
  validate_query(query, vocab_);
  const ImageRecord& rec = find(image_id);
  VqaAnswer truth = truthful_answer(rec.scene, query);

  DetRng rng(DetRng::mix(profile_.seed, 0, ordinal), 3);
  if (!rng.bernoulli(profile_.vqa_error_rate)) return truth;

  // Uniformly random wrong answer of the matching type.
  if (std::holds_alternative<bool>(truth)) return !std::get<bool>(truth);
  if (std::holds_alternative<int>(truth)) {
    int t = std::get<int>(truth);
    std::vector<int> opts;
    for (int c = 0; c <= vocab_.max_count; ++c)
      if (c != t) opts.push_back(c);
    return opts[rng.uniform_int(opts.size())];
  }
  const std::string& t = std::get<std::string>(truth);
  const auto& values = query.attribute == VqaQuery::Attribute::Color
                           ? vocab_.colors
                           : vocab_.sizes;
  std::vector<std::string> opts;
  if (t != "none") opts.push_back("none");
  for (const auto& v : values)
    if (v != t) opts.push_back(v);
  return opts[rng.uniform_int(opts.size())];
}

ImageRecord ToolService::image(const std::string& image_id) {
  std::lock_guard<std::mutex> lock(mu_);
  return find(image_id);
}

ToolStats ToolService::stats() {
  std::lock_guard<std::mutex> lock(mu_);
  return stats_;
}

}  // namespace apo
