#include "apo/scene.hpp"

#include <algorithm>
#include <array>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace apo {

namespace {

const char* kCountWords[] = {"",     "a",    "two",   "three", "four",
                             "five", "six",  "seven", "eight", "nine",
                             "ten",  "eleven", "twelve"};
const char* kOrdinalWords[] = {"",      "first", "second", "third", "fourth",
                               "fifth", "sixth", "seventh", "eighth"};

bool starts_with_vowel(const std::string& s) {
  if (s.empty()) return false;
  char c = s[0];
  return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u';
}

std::string pluralize(const std::string& noun) {
  auto ends = [&](const char* suf) {
    size_t n = std::string(suf).size();
    return noun.size() >= n && noun.compare(noun.size() - n, n, suf) == 0;
  };
  if (ends("s") || ends("x") || ends("z") || ends("ch") || ends("sh"))
    return noun + "es";
  return noun + "s";
}

int find_index(const std::vector<std::string>& values,
               const std::string& name) {
  auto it = std::find(values.begin(), values.end(), name);
  return it == values.end() ? -1 : static_cast<int>(it - values.begin());
}

}  // namespace

// ---------------------------------------------------------------------------
// Vocabulary

void Vocabulary::validate() const {
  auto check_set = [](const std::vector<std::string>& values,
                      const char* what, bool allow_space) {
    if (values.empty())
      throw ValidationError(std::string("vocabulary: empty set: ") + what);
    std::set<std::string> seen;
    for (const auto& v : values) {
      if (v.empty())
        throw ValidationError(std::string("vocabulary: empty name in ") + what);
      if (!allow_space && v.find(' ') != std::string::npos)
        throw ValidationError(std::string("vocabulary: name with space in ") +
                              what + ": " + v);
      if (!seen.insert(v).second)
        throw ValidationError(std::string("vocabulary: duplicate in ") + what +
                              ": " + v);
    }
  };
  check_set(categories, "categories", false);
  check_set(colors, "colors", false);
  check_set(sizes, "sizes", false);
  check_set(predicates, "predicates", true);
  if (max_groups < 2) throw ValidationError("vocabulary: max_groups < 2");
  if (max_count < 2) throw ValidationError("vocabulary: max_count < 2");
  if (max_count > 12)
    throw ValidationError("vocabulary: max_count > 12 (prompt grammar limit)");
  if (max_groups > 8)
    throw ValidationError("vocabulary: max_groups > 8 (prompt grammar limit)");
  // Cross-set uniqueness keeps the prompt grammar unambiguous.
  std::set<std::string> all;
  for (const auto* set : {&categories, &colors, &sizes})
    for (const auto& v : *set)
      if (!all.insert(v).second)
        throw ValidationError("vocabulary: name used in two sets: " + v);
  for (const auto& [a, b] : opposite_predicates) {
    if (predicate_index(a) < 0 || predicate_index(b) < 0)
      throw ValidationError("vocabulary: opposite pair names unknown predicate");
  }
  for (const auto& p : symmetric_predicates)
    if (predicate_index(p) < 0)
      throw ValidationError("vocabulary: symmetric list names unknown predicate");
}

int Vocabulary::category_index(const std::string& name) const {
  return find_index(categories, name);
}
int Vocabulary::color_index(const std::string& name) const {
  return find_index(colors, name);
}
int Vocabulary::size_index(const std::string& name) const {
  return find_index(sizes, name);
}
int Vocabulary::predicate_index(const std::string& name) const {
  return find_index(predicates, name);
}

bool Vocabulary::is_symmetric(const std::string& predicate) const {
  return std::find(symmetric_predicates.begin(), symmetric_predicates.end(),
                   predicate) != symmetric_predicates.end();
}

bool Vocabulary::are_opposite(const std::string& a,
                              const std::string& b) const {
  for (const auto& [x, y] : opposite_predicates)
    if ((x == a && y == b) || (x == b && y == a)) return true;
  return false;
}

uint64_t Vocabulary::hash() const {
  uint64_t h = 1469598103934665603ULL;  // FNV-1a
  auto feed = [&h](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    h ^= 0xff;
    h *= 1099511628211ULL;
  };
  for (const auto* set : {&categories, &colors, &sizes, &predicates})
    for (const auto& v : *set) feed(v);
  feed(std::to_string(max_groups));
  feed(std::to_string(max_count));
  for (const auto& [a, b] : opposite_predicates) {
    feed(a);
    feed(b);
  }
  for (const auto& p : symmetric_predicates) feed(p);
  return h;
}

Vocabulary Vocabulary::default_vocab() {
  Vocabulary v;
  v.categories = {"book", "vase", "dog", "cat", "hat", "ball", "apple", "frisbee"};
  v.colors = {"red", "yellow", "purple", "green", "blue", "black", "white"};
  v.sizes = {"small", "big"};
  v.predicates = {"left of", "right of", "above", "below", "next to"};
  v.opposite_predicates = {{"left of", "right of"}, {"above", "below"}};
  v.symmetric_predicates = {"next to"};
  v.max_groups = 4;
  v.max_count = 9;
  return v;
}

// ---------------------------------------------------------------------------
// Validation and canonical form

namespace {

Relation normalize_relation(const Relation& r, const Vocabulary& vocab) {
  if (vocab.is_symmetric(r.predicate) && r.subject > r.object)
    return Relation{r.object, r.predicate, r.subject};
  return r;
}

bool same_endpoint_pair(const Relation& a, const Relation& b) {
  return (a.subject == b.subject && a.object == b.object) ||
         (a.subject == b.object && a.object == b.subject);
}

// True when both cannot coexist: same unordered endpoints with equal or
// opposite predicates (the same relation itself is a duplicate, not a
// conflict).
bool relations_conflict(const Relation& a, const Relation& b,
                        const Vocabulary& vocab) {
  if (!same_endpoint_pair(a, b)) return false;
  if (a == b) return false;
  if (a.predicate == b.predicate)
    return a.subject == b.object && !vocab.is_symmetric(a.predicate);
  return vocab.are_opposite(a.predicate, b.predicate);
}

std::array<int, 4> group_sort_key(const EntityGroup& g,
                                  const Vocabulary& vocab) {
  return {vocab.category_index(g.category), g.count,
          g.color ? vocab.color_index(*g.color) : -1,
          g.size ? vocab.size_index(*g.size) : -1};
}

void validate_group(const EntityGroup& g, const Vocabulary& vocab) {
  if (vocab.category_index(g.category) < 0)
    throw ValidationError("unknown category: " + g.category);
  if (g.count < 1 || g.count > vocab.max_count)
    throw ValidationError("count out of range: " + std::to_string(g.count));
  if (g.color && vocab.color_index(*g.color) < 0)
    throw ValidationError("unknown color: " + *g.color);
  if (g.size && vocab.size_index(*g.size) < 0)
    throw ValidationError("unknown size: " + *g.size);
}

}  // namespace

void validate_scene(const Scene& scene, const Vocabulary& vocab) {
  if (scene.groups.empty()) throw ValidationError("scene has no groups");
  if (static_cast<int>(scene.groups.size()) > vocab.max_groups)
    throw ValidationError("scene exceeds max_groups");
  for (const auto& g : scene.groups) validate_group(g, vocab);
  int n = static_cast<int>(scene.groups.size());
  for (size_t i = 0; i < scene.relations.size(); ++i) {
    const Relation& r = scene.relations[i];
    if (r.subject < 0 || r.subject >= n || r.object < 0 || r.object >= n)
      throw ValidationError("relation endpoint out of range");
    if (r.subject == r.object)
      throw ValidationError("relation subject equals object");
    if (vocab.predicate_index(r.predicate) < 0)
      throw ValidationError("unknown predicate: " + r.predicate);
    Relation ri = normalize_relation(r, vocab);
    for (size_t j = i + 1; j < scene.relations.size(); ++j) {
      Relation rj = normalize_relation(scene.relations[j], vocab);
      if (ri == rj) throw ValidationError("duplicate relation");
      if (relations_conflict(ri, rj, vocab))
        throw ValidationError("contradictory relations: " + ri.predicate +
                              " vs " + rj.predicate);
    }
  }
}

Scene canonicalize(const Scene& scene, const Vocabulary& vocab) {
  validate_scene(scene, vocab);
  int n = static_cast<int>(scene.groups.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return group_sort_key(scene.groups[a], vocab) <
           group_sort_key(scene.groups[b], vocab);
  });

  auto rel_key = [&](const Relation& r) {
    return std::make_tuple(r.subject, vocab.predicate_index(r.predicate),
                           r.object);
  };
  auto remap_relations = [&](const std::vector<int>& ord) {
    std::vector<int> new_index(n);
    for (int pos = 0; pos < n; ++pos) new_index[ord[pos]] = pos;
    std::vector<Relation> rels;
    rels.reserve(scene.relations.size());
    for (const Relation& r : scene.relations)
      rels.push_back(normalize_relation(
          Relation{new_index[r.subject], r.predicate, new_index[r.object]},
          vocab));
    std::sort(rels.begin(), rels.end(),
              [&](const Relation& a, const Relation& b) {
                return rel_key(a) < rel_key(b);
              });
    rels.erase(std::unique(rels.begin(), rels.end()), rels.end());
    return rels;
  };

  // Identical groups are interchangeable; pick the permutation within each
  // block of equal sort keys that minimizes the relation encoding, so
  // relabelings of identical groups collapse to one canonical form.
  std::vector<Relation> best_rels = remap_relations(order);
  if (!scene.relations.empty()) {
    std::vector<std::pair<int, int>> blocks;  // [begin, end) with equal keys
    int start = 0;
    for (int i = 1; i <= n; ++i) {
      if (i == n || group_sort_key(scene.groups[order[i]], vocab) !=
                        group_sort_key(scene.groups[order[start]], vocab)) {
        if (i - start > 1) blocks.emplace_back(start, i);
        start = i;
      }
    }
    if (!blocks.empty()) {
      auto rels_less = [&](const std::vector<Relation>& a,
                           const std::vector<Relation>& b) {
        return std::lexicographical_compare(
            a.begin(), a.end(), b.begin(), b.end(),
            [&](const Relation& x, const Relation& y) {
              return rel_key(x) < rel_key(y);
            });
      };
      std::function<void(size_t, std::vector<int>&)> try_block =
          [&](size_t bi, std::vector<int>& ord) {
            if (bi == blocks.size()) {
              std::vector<Relation> rels = remap_relations(ord);
              if (rels_less(rels, best_rels)) best_rels = std::move(rels);
              return;
            }
            auto [lo, hi] = blocks[bi];
            std::vector<int> slice(ord.begin() + lo, ord.begin() + hi);
            std::sort(slice.begin(), slice.end());
            do {
              std::copy(slice.begin(), slice.end(), ord.begin() + lo);
              try_block(bi + 1, ord);
            } while (std::next_permutation(slice.begin(), slice.end()));
            std::sort(ord.begin() + lo, ord.begin() + hi);
          };
      std::vector<int> ord = order;
      try_block(0, ord);
    }
  }

  Scene out;
  out.groups.reserve(n);
  for (int pos = 0; pos < n; ++pos)
    out.groups.push_back(scene.groups[order[pos]]);
  out.relations = std::move(best_rels);
  return out;
}

std::string packed_key(const Scene& s, const Vocabulary& vocab) {
  std::string k;
  k.reserve(s.groups.size() * 4 + s.relations.size() * 3 + 1);
  for (const auto& g : s.groups) {
    k.push_back(static_cast<char>(vocab.category_index(g.category)));
    k.push_back(static_cast<char>(g.count));
    k.push_back(static_cast<char>(g.color ? vocab.color_index(*g.color) + 1 : 0));
    k.push_back(static_cast<char>(g.size ? vocab.size_index(*g.size) + 1 : 0));
  }
  k.push_back('\x7f');
  for (const auto& r : s.relations) {
    k.push_back(static_cast<char>(r.subject));
    k.push_back(static_cast<char>(vocab.predicate_index(r.predicate)));
    k.push_back(static_cast<char>(r.object));
  }
  return k;
}

bool same_scene(const Scene& a, const Scene& b, const Vocabulary& vocab) {
  return packed_key(canonicalize(a, vocab), vocab) ==
         packed_key(canonicalize(b, vocab), vocab);
}

// ---------------------------------------------------------------------------
// Edits

namespace {

struct EditApplier {
  const Scene& scene;
  const Vocabulary& vocab;

  Scene result;

  void check_group(int g) const {
    if (g < 0 || g >= static_cast<int>(scene.groups.size()))
      throw ValidationError("edit group index out of range");
  }

  void check_new_relation(const Relation& candidate,
                          const std::vector<Relation>& existing) const {
    Relation c = normalize_relation(candidate, vocab);
    for (const auto& e : existing) {
      Relation en = normalize_relation(e, vocab);
      if (en == c) throw ValidationError("duplicate relation");
      if (relations_conflict(en, c, vocab))
        throw ValidationError("contradictory relation");
    }
  }

  void operator()(const SetColor& e) {
    check_group(e.group);
    if (e.color && vocab.color_index(*e.color) < 0)
      throw ValidationError("unknown color: " + *e.color);
    result = scene;
    result.groups[e.group].color = e.color;
  }

  void operator()(const SetSize& e) {
    check_group(e.group);
    if (e.size && vocab.size_index(*e.size) < 0)
      throw ValidationError("unknown size: " + *e.size);
    result = scene;
    result.groups[e.group].size = e.size;
  }

  void operator()(const IncrementCount& e) {
    check_group(e.group);
    if (scene.groups[e.group].count >= vocab.max_count)
      throw ValidationError("count would exceed max_count");
    result = scene;
    result.groups[e.group].count += 1;
  }

  void operator()(const DecrementCount& e) {
    check_group(e.group);
    if (scene.groups[e.group].count <= 1)
      throw ValidationError("count would drop below 1");
    result = scene;
    result.groups[e.group].count -= 1;
  }

  void operator()(const AddGroup& e) {
    if (static_cast<int>(scene.groups.size()) >= vocab.max_groups)
      throw ValidationError("scene already at max_groups");
    validate_group(e.group, vocab);
    result = scene;
    result.groups.push_back(e.group);
  }

  void operator()(const RemoveGroup& e) {
    check_group(e.group);
    if (scene.groups.size() == 1)
      throw ValidationError("cannot remove the last group");
    result.groups = scene.groups;
    result.groups.erase(result.groups.begin() + e.group);
    for (const Relation& r : scene.relations) {
      if (r.subject == e.group || r.object == e.group) continue;
      Relation m = r;
      if (m.subject > e.group) m.subject -= 1;
      if (m.object > e.group) m.object -= 1;
      result.relations.push_back(m);
    }
  }

  void operator()(const SetPredicate& e) {
    Relation from = normalize_relation(e.from, vocab);
    Relation to = normalize_relation(e.to, vocab);
    if (!same_endpoint_pair(from, to))
      throw ValidationError("SetPredicate endpoints differ");
    if (from == to) throw ValidationError("SetPredicate is a no-op");
    if (vocab.predicate_index(to.predicate) < 0)
      throw ValidationError("unknown predicate: " + to.predicate);
    result = scene;
    auto it = std::find_if(result.relations.begin(), result.relations.end(),
                           [&](const Relation& r) {
                             return normalize_relation(r, vocab) == from;
                           });
    if (it == result.relations.end())
      throw ValidationError("SetPredicate source relation not present");
    result.relations.erase(it);
    check_new_relation(to, result.relations);
    result.relations.push_back(to);
  }

  void operator()(const AddRelation& e) {
    const Relation& r = e.relation;
    int n = static_cast<int>(scene.groups.size());
    if (r.subject < 0 || r.subject >= n || r.object < 0 || r.object >= n)
      throw ValidationError("relation endpoint out of range");
    if (r.subject == r.object)
      throw ValidationError("relation subject equals object");
    if (vocab.predicate_index(r.predicate) < 0)
      throw ValidationError("unknown predicate: " + r.predicate);
    result = scene;
    check_new_relation(r, result.relations);
    result.relations.push_back(normalize_relation(r, vocab));
  }

  void operator()(const RemoveRelation& e) {
    Relation target = normalize_relation(e.relation, vocab);
    result = scene;
    auto it = std::find_if(result.relations.begin(), result.relations.end(),
                           [&](const Relation& r) {
                             return normalize_relation(r, vocab) == target;
                           });
    if (it == result.relations.end())
      throw ValidationError("relation to remove not present");
    result.relations.erase(it);
  }
};

}  // namespace

Scene apply_edit(const Scene& scene, const AtomicEdit& edit,
                 const Vocabulary& vocab) {
  validate_scene(scene, vocab);
  EditApplier applier{scene, vocab};
  std::visit(applier, edit);
  return canonicalize(applier.result, vocab);
}

std::vector<AtomicEdit> enumerate_edits(const Scene& scene,
                                        const Vocabulary& vocab) {
  validate_scene(scene, vocab);
  std::vector<AtomicEdit> out;
  int n = static_cast<int>(scene.groups.size());

  for (int g = 0; g < n; ++g) {
    const EntityGroup& grp = scene.groups[g];
    for (const auto& c : vocab.colors)
      if (!grp.color || *grp.color != c) out.push_back(SetColor{g, c});
    if (grp.color) out.push_back(SetColor{g, std::nullopt});
    for (const auto& s : vocab.sizes)
      if (!grp.size || *grp.size != s) out.push_back(SetSize{g, s});
    if (grp.size) out.push_back(SetSize{g, std::nullopt});
    if (grp.count < vocab.max_count) out.push_back(IncrementCount{g});
    if (grp.count > 1) out.push_back(DecrementCount{g});
    if (n > 1) out.push_back(RemoveGroup{g});
  }

  if (n < vocab.max_groups) {
    for (const auto& cat : vocab.categories)
      for (int count = 1; count <= vocab.max_count; ++count) {
        std::vector<std::optional<std::string>> color_opts{std::nullopt};
        for (const auto& c : vocab.colors) color_opts.emplace_back(c);
        std::vector<std::optional<std::string>> size_opts{std::nullopt};
        for (const auto& s : vocab.sizes) size_opts.emplace_back(s);
        for (const auto& col : color_opts)
          for (const auto& sz : size_opts)
            out.push_back(AddGroup{EntityGroup{cat, count, col, sz}});
      }
  }

  auto relation_ok = [&](const Relation& cand,
                         const std::vector<Relation>& existing,
                         const Relation* skip) {
    Relation c = normalize_relation(cand, vocab);
    for (const auto& e : existing) {
      Relation en = normalize_relation(e, vocab);
      if (skip && en == normalize_relation(*skip, vocab)) continue;
      if (en == c || relations_conflict(en, c, vocab)) return false;
    }
    return true;
  };

  for (const Relation& r : scene.relations) {
    out.push_back(RemoveRelation{r});
    Relation rn = normalize_relation(r, vocab);
    for (const auto& p : vocab.predicates) {
      std::vector<Relation> targets;
      if (vocab.is_symmetric(p)) {
        targets.push_back(normalize_relation(
            Relation{rn.subject, p, rn.object}, vocab));
      } else {
        targets.push_back(Relation{rn.subject, p, rn.object});
        targets.push_back(Relation{rn.object, p, rn.subject});
      }
      for (const Relation& t : targets) {
        if (t == rn) continue;
        if (relation_ok(t, scene.relations, &r))
          out.push_back(SetPredicate{r, t});
      }
    }
  }

  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      for (const auto& p : vocab.predicates) {
        if (vocab.is_symmetric(p) && i > j) continue;
        Relation cand{i, p, j};
        if (relation_ok(cand, scene.relations, nullptr))
          out.push_back(AddRelation{cand});
      }
    }

  // Drop edits that do not change the canonical form (e.g. reordering two
  // identical groups).
  std::string self = packed_key(canonicalize(scene, vocab), vocab);
  std::vector<AtomicEdit> effective;
  effective.reserve(out.size());
  for (const auto& e : out) {
    if (packed_key(apply_edit(scene, e, vocab), vocab) != self)
      effective.push_back(e);
  }
  return effective;
}

// ---------------------------------------------------------------------------
// Diff

namespace {

int attribute_mismatch(const EntityGroup& a, const EntityGroup& b) {
  return (a.count != b.count ? 1 : 0) + (a.color != b.color ? 1 : 0) +
         (a.size != b.size ? 1 : 0);
}

std::string opt_str(const std::optional<std::string>& v) {
  return v ? *v : "none";
}

}  // namespace

std::vector<int> groups_of_category(const Scene& scene,
                                    const std::string& category) {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(scene.groups.size()); ++i)
    if (scene.groups[i].category == category) out.push_back(i);
  return out;
}

std::vector<Discrepancy> scene_diff(const Scene& reference,
                                    const Scene& candidate,
                                    const Vocabulary& vocab) {
  Scene ref = canonicalize(reference, vocab);
  Scene cand = canonicalize(candidate, vocab);

  std::vector<Discrepancy> out;
  // ref group index -> cand group index (or -1)
  std::vector<int> match(ref.groups.size(), -1);
  std::vector<bool> cand_used(cand.groups.size(), false);

  std::set<std::string> categories;
  for (const auto& g : ref.groups) categories.insert(g.category);
  for (const auto& g : cand.groups) categories.insert(g.category);

  for (const auto& cat : categories) {
    std::vector<int> r = groups_of_category(ref, cat);
    std::vector<int> c = groups_of_category(cand, cat);
    // Brute-force assignment minimizing attribute mismatch; first (lexico
    // smallest) permutation wins ties. Group counts are tiny (<= max_groups).
    size_t m = std::min(r.size(), c.size());
    if (m > 0) {
      std::vector<int> perm(c.size());
      std::iota(perm.begin(), perm.end(), 0);
      std::vector<int> best;
      int best_cost = -1;
      std::sort(perm.begin(), perm.end());
      do {
        int cost = 0;
        for (size_t i = 0; i < m && i < r.size(); ++i)
          cost += attribute_mismatch(ref.groups[r[i]],
                                     cand.groups[c[perm[i]]]);
        if (best_cost < 0 || cost < best_cost) {
          best_cost = cost;
          best.assign(perm.begin(), perm.begin() + m);
        }
      } while (std::next_permutation(perm.begin(), perm.end()));
      for (size_t i = 0; i < m; ++i) {
        match[r[i]] = c[best[i]];
        cand_used[c[best[i]]] = true;
      }
    }
    for (size_t i = m; i < r.size(); ++i) {
      Discrepancy d;
      d.kind = Discrepancy::Kind::MissingGroup;
      d.category = cat;
      d.ordinal = static_cast<int>(i);
      out.push_back(d);
    }
    for (size_t i = m; i < c.size(); ++i) {
      Discrepancy d;
      d.kind = Discrepancy::Kind::ExtraGroup;
      d.category = cat;
      d.ordinal = static_cast<int>(i);
      out.push_back(d);
    }
  }

  // Attribute-level discrepancies on matched groups.
  for (const auto& cat : categories) {
    std::vector<int> r = groups_of_category(ref, cat);
    for (size_t ord = 0; ord < r.size(); ++ord) {
      int ri = r[ord];
      if (match[ri] < 0) continue;
      const EntityGroup& a = ref.groups[ri];
      const EntityGroup& b = cand.groups[match[ri]];
      if (a.count != b.count) {
        Discrepancy d;
        d.kind = Discrepancy::Kind::WrongCount;
        d.category = cat;
        d.ordinal = static_cast<int>(ord);
        d.expected = std::to_string(a.count);
        d.actual = std::to_string(b.count);
        out.push_back(d);
      }
      if (a.color != b.color) {
        Discrepancy d;
        d.kind = Discrepancy::Kind::WrongColor;
        d.category = cat;
        d.ordinal = static_cast<int>(ord);
        d.expected = opt_str(a.color);
        d.actual = opt_str(b.color);
        out.push_back(d);
      }
      if (a.size != b.size) {
        Discrepancy d;
        d.kind = Discrepancy::Kind::WrongSize;
        d.category = cat;
        d.ordinal = static_cast<int>(ord);
        d.expected = opt_str(a.size);
        d.actual = opt_str(b.size);
        out.push_back(d);
      }
    }
  }

  // Relations, compared under the chosen correspondence.
  std::vector<bool> cand_rel_used(cand.relations.size(), false);
  for (const Relation& r : ref.relations) {
    int ms = match[r.subject];
    int mo = match[r.object];
    Discrepancy d;
    d.kind = Discrepancy::Kind::MissingRelation;
    d.category = ref.groups[r.subject].category;
    d.relation = r;
    d.expected = r.predicate;
    if (ms < 0 || mo < 0) {
      // Endpoint group itself is missing; still reported so the diff names
      // every unsatisfied detail.
      out.push_back(d);
      continue;
    }
    Relation mapped = normalize_relation(Relation{ms, r.predicate, mo}, vocab);
    bool found = false;
    for (size_t i = 0; i < cand.relations.size(); ++i) {
      if (cand_rel_used[i]) continue;
      if (normalize_relation(cand.relations[i], vocab) == mapped) {
        cand_rel_used[i] = true;
        found = true;
        break;
      }
    }
    if (found) continue;
    // A relation over the same endpoints with a different predicate reads as
    // a wrong relation: reported as missing with `actual` set.
    for (size_t i = 0; i < cand.relations.size(); ++i) {
      if (cand_rel_used[i]) continue;
      Relation cn = normalize_relation(cand.relations[i], vocab);
      if (same_endpoint_pair(cn, mapped)) {
        cand_rel_used[i] = true;
        d.actual = cn.predicate;
        break;
      }
    }
    out.push_back(d);
  }
  for (size_t i = 0; i < cand.relations.size(); ++i) {
    if (cand_rel_used[i]) continue;
    const Relation& r = cand.relations[i];
    Discrepancy d;
    d.kind = Discrepancy::Kind::ExtraRelation;
    d.category = cand.groups[r.subject].category;
    d.relation = r;  // candidate indexing
    d.actual = r.predicate;
    out.push_back(d);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Prompt rendering / parsing

namespace {

// "the [ordinal] noun(s)"; the ordinal appears only when the category occurs
// in more than one group.
std::string group_reference(const Scene& scene, int index,
                            const Vocabulary& vocab) {
  const EntityGroup& g = scene.groups[index];
  std::vector<int> same = groups_of_category(scene, g.category);
  std::string noun = g.count > 1 ? pluralize(g.category) : g.category;
  if (same.size() == 1) return "the " + noun;
  int ord = static_cast<int>(std::find(same.begin(), same.end(), index) -
                             same.begin()) +
            1;
  return std::string("the ") + kOrdinalWords[ord] + " " + noun;
}

}  // namespace

std::string render_prompt(const Scene& scene_in, const Vocabulary& vocab) {
  Scene scene = canonicalize(scene_in, vocab);
  std::ostringstream os;
  for (size_t i = 0; i < scene.groups.size(); ++i) {
    const EntityGroup& g = scene.groups[i];
    if (i) os << " and ";
    std::string rest;
    if (g.color) rest += *g.color + " ";
    if (g.size) rest += *g.size + " ";
    rest += g.count > 1 ? pluralize(g.category) : g.category;
    if (g.count == 1)
      os << (starts_with_vowel(rest) ? "an " : "a ") << rest;
    else
      os << kCountWords[g.count] << " " << rest;
  }
  for (size_t i = 0; i < scene.relations.size(); ++i) {
    const Relation& r = scene.relations[i];
    os << (i == 0 ? "; " : ", ");
    os << group_reference(scene, r.subject, vocab)
       << (scene.groups[r.subject].count > 1 ? " are " : " is ")
       << r.predicate << " " << group_reference(scene, r.object, vocab);
  }
  return os.str();
}

namespace {

std::vector<std::string> split(const std::string& s, const std::string& sep) {
  std::vector<std::string> out;
  size_t pos = 0;
  while (true) {
    size_t next = s.find(sep, pos);
    if (next == std::string::npos) {
      out.push_back(s.substr(pos));
      return out;
    }
    out.push_back(s.substr(pos, next - pos));
    pos = next + sep.size();
  }
}

int singular_category(const std::string& word, const Vocabulary& vocab,
                      bool* plural) {
  int idx = vocab.category_index(word);
  if (idx >= 0) {
    *plural = false;
    return idx;
  }
  for (size_t i = 0; i < vocab.categories.size(); ++i) {
    if (pluralize(vocab.categories[i]) == word) {
      *plural = true;
      return static_cast<int>(i);
    }
  }
  return -1;
}

int count_word_value(const std::string& w) {
  if (w == "a" || w == "an") return 1;
  for (int i = 2; i <= 12; ++i)
    if (w == kCountWords[i]) return i;
  return -1;
}

EntityGroup parse_group_text(const std::string& text,
                             const Vocabulary& vocab) {
  std::vector<std::string> words = split(text, " ");
  if (words.size() < 2)
    throw ValidationError("cannot parse group: " + text);
  EntityGroup g;
  g.count = count_word_value(words[0]);
  if (g.count < 0) throw ValidationError("bad count word: " + words[0]);
  size_t i = 1;
  if (i < words.size() && vocab.color_index(words[i]) >= 0) g.color = words[i++];
  if (i < words.size() && vocab.size_index(words[i]) >= 0) g.size = words[i++];
  if (i + 1 != words.size())
    throw ValidationError("cannot parse group: " + text);
  bool plural = false;
  int cat = singular_category(words[i], vocab, &plural);
  if (cat < 0) throw ValidationError("unknown category word: " + words[i]);
  if (plural != (g.count > 1))
    throw ValidationError("count/plural mismatch in: " + text);
  g.category = vocab.categories[cat];
  return g;
}

// Parses "the [ordinal] noun(s)" returning the group index.
int parse_group_reference(const std::string& text, const Scene& scene,
                          const Vocabulary& vocab) {
  std::vector<std::string> words = split(text, " ");
  if (words.size() < 2 || words[0] != "the")
    throw ValidationError("cannot parse group reference: " + text);
  int ord = 0;
  size_t i = 1;
  for (int k = 1; k <= 8; ++k)
    if (words[1] == kOrdinalWords[k]) {
      ord = k;
      i = 2;
      break;
    }
  if (i >= words.size() || i + 1 != words.size())
    throw ValidationError("cannot parse group reference: " + text);
  bool plural = false;
  int cat = singular_category(words[i], vocab, &plural);
  if (cat < 0) throw ValidationError("unknown category in reference: " + text);
  std::vector<int> same = groups_of_category(scene, vocab.categories[cat]);
  if (same.empty())
    throw ValidationError("reference to absent category: " + text);
  if (ord == 0) {
    if (same.size() != 1)
      throw ValidationError("ambiguous group reference: " + text);
    return same[0];
  }
  if (ord > static_cast<int>(same.size()))
    throw ValidationError("ordinal out of range in reference: " + text);
  return same[ord - 1];
}

}  // namespace

Scene parse_prompt(const std::string& text, const Vocabulary& vocab) {
  std::string groups_part = text;
  std::string relations_part;
  size_t semi = text.find("; ");
  if (semi != std::string::npos) {
    groups_part = text.substr(0, semi);
    relations_part = text.substr(semi + 2);
  }
  Scene scene;
  for (const auto& gtext : split(groups_part, " and "))
    scene.groups.push_back(parse_group_text(gtext, vocab));
  validate_scene(scene, vocab);
  if (!relations_part.empty()) {
    for (const auto& clause : split(relations_part, ", ")) {
      // "<subjref> is|are <predicate> <objref>"; the predicate may contain
      // spaces, so match the longest vocabulary predicate.
      size_t verb = clause.find(" is ");
      size_t verb_len = 4;
      size_t verb2 = clause.find(" are ");
      if (verb2 != std::string::npos &&
          (verb == std::string::npos || verb2 < verb)) {
        verb = verb2;
        verb_len = 5;
      }
      if (verb == std::string::npos)
        throw ValidationError("cannot parse relation clause: " + clause);
      std::string subj = clause.substr(0, verb);
      std::string rest = clause.substr(verb + verb_len);
      int best = -1;
      for (size_t i = 0; i < vocab.predicates.size(); ++i) {
        const std::string& p = vocab.predicates[i];
        if (rest.size() > p.size() + 1 && rest.compare(0, p.size(), p) == 0 &&
            rest[p.size()] == ' ') {
          if (best < 0 || p.size() > vocab.predicates[best].size())
            best = static_cast<int>(i);
        }
      }
      if (best < 0)
        throw ValidationError("no predicate found in clause: " + clause);
      const std::string& pred = vocab.predicates[best];
      std::string obj = rest.substr(pred.size() + 1);
      Relation r;
      r.subject = parse_group_reference(subj, scene, vocab);
      r.object = parse_group_reference(obj, scene, vocab);
      r.predicate = pred;
      scene.relations.push_back(r);
    }
  }
  return canonicalize(scene, vocab);
}

Prompt Prompt::from_scene(const Scene& scene, const Vocabulary& vocab) {
  Scene canonical = canonicalize(scene, vocab);
  return Prompt{render_prompt(canonical, vocab), canonical};
}

// ---------------------------------------------------------------------------
// Descriptions

std::string describe_edit(const AtomicEdit& edit) {
  struct V {
    std::string operator()(const SetColor& e) {
      return "SetColor(g" + std::to_string(e.group) + ", " + opt_str(e.color) +
             ")";
    }
    std::string operator()(const SetSize& e) {
      return "SetSize(g" + std::to_string(e.group) + ", " + opt_str(e.size) +
             ")";
    }
    std::string operator()(const IncrementCount& e) {
      return "IncrementCount(g" + std::to_string(e.group) + ")";
    }
    std::string operator()(const DecrementCount& e) {
      return "DecrementCount(g" + std::to_string(e.group) + ")";
    }
    std::string operator()(const AddGroup& e) {
      return "AddGroup(" + e.group.category + " x" +
             std::to_string(e.group.count) + ", " + opt_str(e.group.color) +
             ", " + opt_str(e.group.size) + ")";
    }
    std::string operator()(const RemoveGroup& e) {
      return "RemoveGroup(g" + std::to_string(e.group) + ")";
    }
    std::string operator()(const SetPredicate& e) {
      return "SetPredicate(" + rel(e.from) + " -> " + rel(e.to) + ")";
    }
    std::string operator()(const AddRelation& e) {
      return "AddRelation(" + rel(e.relation) + ")";
    }
    std::string operator()(const RemoveRelation& e) {
      return "RemoveRelation(" + rel(e.relation) + ")";
    }
    static std::string rel(const Relation& r) {
      return "g" + std::to_string(r.subject) + " " + r.predicate + " g" +
             std::to_string(r.object);
    }
    static std::string opt_str(const std::optional<std::string>& v) {
      return v ? *v : "none";
    }
  };
  return std::visit(V{}, edit);
}

std::string describe_discrepancy(const Discrepancy& d) {
  auto where = [&] { return d.category + "#" + std::to_string(d.ordinal); };
  switch (d.kind) {
    case Discrepancy::Kind::MissingGroup:
      return "missing group " + where();
    case Discrepancy::Kind::ExtraGroup:
      return "extra group " + where();
    case Discrepancy::Kind::WrongCount:
      return "wrong count on " + where() + " (expected " + d.expected +
             ", got " + d.actual + ")";
    case Discrepancy::Kind::WrongColor:
      return "wrong color on " + where() + " (expected " + d.expected +
             ", got " + d.actual + ")";
    case Discrepancy::Kind::WrongSize:
      return "wrong size on " + where() + " (expected " + d.expected +
             ", got " + d.actual + ")";
    case Discrepancy::Kind::MissingRelation:
      return "missing relation " + d.expected +
             (d.actual.empty() ? "" : " (found " + d.actual + ")");
    case Discrepancy::Kind::ExtraRelation:
      return "extra relation " + d.actual;
  }
  return "?";
}

}  // namespace apo
