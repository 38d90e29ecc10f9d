#include "apo/distance.hpp"

#include <algorithm>
#include <array>
#include <numeric>
#include <queue>
#include <set>
#include <string>
#include <unordered_map>

namespace apo {

namespace {

struct MoveContext {
  std::vector<std::optional<std::string>> color_targets;  // incl. nullopt
  std::vector<std::optional<std::string>> size_targets;
  std::vector<std::string> set_predicates;  // values usable by SetPredicate
  std::vector<std::string> add_predicates;  // values usable by AddRelation
  std::vector<EntityGroup> add_payloads;    // distinct groups of the target
};

MoveContext build_context(const Scene& a, const Scene& b) {
  MoveContext ctx;
  std::set<std::string> colors, sizes, preds_ab, preds_b;
  for (const Scene* s : {&a, &b}) {
    for (const auto& g : s->groups) {
      if (g.color) colors.insert(*g.color);
      if (g.size) sizes.insert(*g.size);
    }
    for (const auto& r : s->relations) preds_ab.insert(r.predicate);
  }
  for (const auto& r : b.relations) preds_b.insert(r.predicate);
  ctx.color_targets.push_back(std::nullopt);
  for (const auto& c : colors) ctx.color_targets.emplace_back(c);
  ctx.size_targets.push_back(std::nullopt);
  for (const auto& s : sizes) ctx.size_targets.emplace_back(s);
  ctx.set_predicates.assign(preds_ab.begin(), preds_ab.end());
  ctx.add_predicates.assign(preds_b.begin(), preds_b.end());
  for (const auto& g : b.groups) {
    if (std::find(ctx.add_payloads.begin(), ctx.add_payloads.end(), g) ==
        ctx.add_payloads.end())
      ctx.add_payloads.push_back(g);
  }
  return ctx;
}

int pair_cost(const EntityGroup& want, const EntityGroup& have) {
  int c = std::abs(want.count - have.count);
  if (want.color != have.color) c += 1;
  if (want.size != have.size) c += 1;
  return std::min(c, 2);  // remove + add rebuilds any group in two edits
}

// Admissible lower bound on the number of edits from `s` to `target`.
int assignment_bound(const Scene& s, const Scene& target) {
  std::set<std::string> categories;
  for (const auto& g : s.groups) categories.insert(g.category);
  for (const auto& g : target.groups) categories.insert(g.category);

  int total = 0;
  for (const auto& cat : categories) {
    std::vector<const EntityGroup*> want, have;
    for (const auto& g : target.groups)
      if (g.category == cat) want.push_back(&g);
    for (const auto& g : s.groups)
      if (g.category == cat) have.push_back(&g);
    size_t nw = want.size(), nh = have.size();
    size_t m = std::max(nw, nh);
    // Pad with "absent" slots costing 1 (add or remove); brute-force the
    // assignment, m <= max_groups.
    std::vector<int> perm(m);
    std::iota(perm.begin(), perm.end(), 0);
    int best = -1;
    do {
      int cost = 0;
      for (size_t i = 0; i < m; ++i) {
        size_t j = perm[i];
        if (i < nw && j < nh)
          cost += pair_cost(*want[i], *have[j]);
        else if (i < nw || j < nh)
          cost += 1;
      }
      if (best < 0 || cost < best) best = cost;
    } while (std::next_permutation(perm.begin(), perm.end()));
    total += best;
  }
  return total;
}

std::vector<AtomicEdit> restricted_moves(const Scene& s,
                                         const MoveContext& ctx,
                                         const Vocabulary& vocab) {
  std::vector<AtomicEdit> out;
  int n = static_cast<int>(s.groups.size());
  for (int g = 0; g < n; ++g) {
    const EntityGroup& grp = s.groups[g];
    for (const auto& c : ctx.color_targets)
      if (grp.color != c) out.push_back(SetColor{g, c});
    for (const auto& sz : ctx.size_targets)
      if (grp.size != sz) out.push_back(SetSize{g, sz});
    if (grp.count < vocab.max_count) out.push_back(IncrementCount{g});
    if (grp.count > 1) out.push_back(DecrementCount{g});
    if (n > 1) out.push_back(RemoveGroup{g});
  }
  if (n < vocab.max_groups)
    for (const auto& payload : ctx.add_payloads)
      out.push_back(AddGroup{payload});
  for (const Relation& r : s.relations) {
    out.push_back(RemoveRelation{r});
    for (const auto& p : ctx.set_predicates) {
      if (vocab.is_symmetric(p)) {
        Relation t{std::min(r.subject, r.object), p,
                   std::max(r.subject, r.object)};
        if (!(t == r)) out.push_back(SetPredicate{r, t});
      } else {
        for (const Relation& t : {Relation{r.subject, p, r.object},
                                  Relation{r.object, p, r.subject}})
          if (!(t == r)) out.push_back(SetPredicate{r, t});
      }
    }
  }
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      for (const auto& p : ctx.add_predicates) {
        if (vocab.is_symmetric(p) && i > j) continue;
        out.push_back(AddRelation{Relation{i, p, j}});
      }
    }
  return out;
}

struct Node {
  Scene scene;
  int g = 0;
  int parent = -1;
  AtomicEdit via;
};

struct SearchOutcome {
  int distance = 0;
  bool bounded_out = false;
  std::vector<AtomicEdit> path;
};

SearchOutcome astar(const Scene& a_in, const Scene& b_in,
                    const Vocabulary& vocab, int max_depth, long max_nodes,
                    bool want_path) {
  Scene a = canonicalize(a_in, vocab);
  Scene b = canonicalize(b_in, vocab);
  std::string target_key = packed_key(b, vocab);
  if (packed_key(a, vocab) == target_key) return {0, false, {}};

  MoveContext ctx = build_context(a, b);

  std::vector<Node> nodes;
  std::unordered_map<std::string, int> best_g;  // key -> node index with best g
  using QEntry = std::tuple<int, int, int>;     // (f, g, node index)
  std::priority_queue<QEntry, std::vector<QEntry>, std::greater<>> open;

  nodes.push_back(Node{a, 0, -1, SetColor{}});
  best_g[packed_key(a, vocab)] = 0;
  open.emplace(assignment_bound(a, b), 0, 0);

  // The heuristic is consistent (every edit changes it by at most 1), so the
  // first pop of a key carries its optimal g; the goal is tested at pop.
  while (!open.empty()) {
    auto [f, g, idx] = open.top();
    open.pop();
    if (g > nodes[idx].g) continue;  // stale entry
    if (packed_key(nodes[idx].scene, vocab) == target_key) {
      SearchOutcome out{g, false, {}};
      if (want_path) {
        for (int p = idx; nodes[p].parent >= 0; p = nodes[p].parent)
          out.path.push_back(nodes[p].via);
        std::reverse(out.path.begin(), out.path.end());
      }
      return out;
    }
    if (g >= max_depth) continue;  // children would exceed the bound
    if (static_cast<long>(nodes.size()) > max_nodes)
      return {max_depth + 1, true, {}};  // search budget exhausted
    const Scene current = nodes[idx].scene;
    for (const AtomicEdit& move : restricted_moves(current, ctx, vocab)) {
      Scene next;
      try {
        next = apply_edit(current, move, vocab);
      } catch (const ValidationError&) {
        continue;
      }
      std::string key = packed_key(next, vocab);
      int ng = g + 1;
      auto it = best_g.find(key);
      if (it != best_g.end() && nodes[it->second].g <= ng) continue;
      int h = key == target_key ? 0 : assignment_bound(next, b);
      if (ng + h > max_depth) continue;
      int nidx = static_cast<int>(nodes.size());
      nodes.push_back(Node{std::move(next), ng, idx, move});
      if (it != best_g.end())
        it->second = nidx;
      else
        best_g.emplace(std::move(key), nidx);
      open.emplace(ng + h, ng, nidx);
    }
  }
  return {max_depth + 1, true, {}};
}

}  // namespace

DistanceSearcher::DistanceSearcher(Vocabulary vocab, int max_depth,
                                   long max_nodes)
    : vocab_(std::move(vocab)), max_depth_(max_depth), max_nodes_(max_nodes) {
  vocab_.validate();
}

DistanceSearcher::Result DistanceSearcher::distance(const Scene& a,
                                                    const Scene& b) {
  SearchOutcome out = astar(a, b, vocab_, max_depth_, max_nodes_, false);
  return Result{out.distance, out.bounded_out};
}

std::optional<std::vector<AtomicEdit>> DistanceSearcher::plan(const Scene& a,
                                                              const Scene& b) {
  SearchOutcome out = astar(a, b, vocab_, max_depth_, max_nodes_, true);
  if (out.bounded_out) return std::nullopt;
  return out.path;
}

}  // namespace apo
