#include "apo/json_io.hpp"

namespace apo {

namespace {

json opt_field(const std::optional<std::string>& v) {
  return v ? json(*v) : json();
}

std::optional<std::string> opt_from(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<std::string>();
}

json require(const json& j, const char* key) {
  if (!j.contains(key))
    throw ValidationError(std::string("missing field: ") + key);
  return j.at(key);
}

}  // namespace

json to_json(const EntityGroup& g) {
  json j{{"category", g.category}, {"count", g.count}};
  if (g.color) j["color"] = *g.color;
  if (g.size) j["size"] = *g.size;
  return j;
}

json to_json(const Relation& r) {
  return json{{"subject", r.subject},
              {"predicate", r.predicate},
              {"object", r.object}};
}

json to_json(const Scene& s) {
  json groups = json::array();
  for (const auto& g : s.groups) groups.push_back(to_json(g));
  json relations = json::array();
  for (const auto& r : s.relations) relations.push_back(to_json(r));
  return json{{"groups", groups}, {"relations", relations}};
}

json to_json(const Prompt& p) {
  return json{{"text", p.text}, {"scene", to_json(p.scene)}};
}

json to_json(const Vocabulary& v) {
  json opposites = json::array();
  for (const auto& [a, b] : v.opposite_predicates)
    opposites.push_back(json::array({a, b}));
  return json{{"categories", v.categories},
              {"colors", v.colors},
              {"sizes", v.sizes},
              {"predicates", v.predicates},
              {"max_groups", v.max_groups},
              {"max_count", v.max_count},
              {"opposite_predicates", opposites},
              {"symmetric_predicates", v.symmetric_predicates}};
}

EntityGroup group_from_json(const json& j) {
  EntityGroup g;
  g.category = require(j, "category").get<std::string>();
  g.count = require(j, "count").get<int>();
  g.color = opt_from(j, "color");
  g.size = opt_from(j, "size");
  return g;
}

Relation relation_from_json(const json& j) {
  Relation r;
  r.subject = require(j, "subject").get<int>();
  r.predicate = require(j, "predicate").get<std::string>();
  r.object = require(j, "object").get<int>();
  return r;
}

Scene scene_from_json(const json& j) {
  Scene s;
  for (const auto& g : require(j, "groups")) s.groups.push_back(group_from_json(g));
  for (const auto& r : require(j, "relations"))
    s.relations.push_back(relation_from_json(r));
  return s;
}

Prompt prompt_from_json(const json& j) {
  Prompt p;
  p.text = require(j, "text").get<std::string>();
  p.scene = scene_from_json(require(j, "scene"));
  return p;
}

Vocabulary vocab_from_json(const json& j) {
  Vocabulary v;
  v.categories = require(j, "categories").get<std::vector<std::string>>();
  v.colors = require(j, "colors").get<std::vector<std::string>>();
  v.sizes = require(j, "sizes").get<std::vector<std::string>>();
  v.predicates = require(j, "predicates").get<std::vector<std::string>>();
  v.max_groups = require(j, "max_groups").get<int>();
  v.max_count = require(j, "max_count").get<int>();
  if (j.contains("opposite_predicates"))
    for (const auto& pair : j.at("opposite_predicates"))
      v.opposite_predicates.emplace_back(pair.at(0).get<std::string>(),
                                         pair.at(1).get<std::string>());
  if (j.contains("symmetric_predicates"))
    v.symmetric_predicates =
        j.at("symmetric_predicates").get<std::vector<std::string>>();
  v.validate();
  return v;
}

json to_json(const AtomicEdit& e) {
  struct V {
    json operator()(const SetColor& e) {
      return json{{"kind", "set_color"}, {"group", e.group},
                  {"color", opt_field(e.color)}};
    }
    json operator()(const SetSize& e) {
      return json{{"kind", "set_size"}, {"group", e.group},
                  {"size", opt_field(e.size)}};
    }
    json operator()(const IncrementCount& e) {
      return json{{"kind", "increment_count"}, {"group", e.group}};
    }
    json operator()(const DecrementCount& e) {
      return json{{"kind", "decrement_count"}, {"group", e.group}};
    }
    json operator()(const AddGroup& e) {
      return json{{"kind", "add_group"}, {"group", to_json(e.group)}};
    }
    json operator()(const RemoveGroup& e) {
      return json{{"kind", "remove_group"}, {"group", e.group}};
    }
    json operator()(const SetPredicate& e) {
      return json{{"kind", "set_predicate"}, {"from", to_json(e.from)},
                  {"to", to_json(e.to)}};
    }
    json operator()(const AddRelation& e) {
      return json{{"kind", "add_relation"}, {"relation", to_json(e.relation)}};
    }
    json operator()(const RemoveRelation& e) {
      return json{{"kind", "remove_relation"},
                  {"relation", to_json(e.relation)}};
    }
  };
  return std::visit(V{}, e);
}

AtomicEdit edit_from_json(const json& j) {
  std::string kind = require(j, "kind").get<std::string>();
  if (kind == "set_color")
    return SetColor{require(j, "group").get<int>(), opt_from(j, "color")};
  if (kind == "set_size")
    return SetSize{require(j, "group").get<int>(), opt_from(j, "size")};
  if (kind == "increment_count")
    return IncrementCount{require(j, "group").get<int>()};
  if (kind == "decrement_count")
    return DecrementCount{require(j, "group").get<int>()};
  if (kind == "add_group")
    return AddGroup{group_from_json(require(j, "group"))};
  if (kind == "remove_group")
    return RemoveGroup{require(j, "group").get<int>()};
  if (kind == "set_predicate")
    return SetPredicate{relation_from_json(require(j, "from")),
                        relation_from_json(require(j, "to"))};
  if (kind == "add_relation")
    return AddRelation{relation_from_json(require(j, "relation"))};
  if (kind == "remove_relation")
    return RemoveRelation{relation_from_json(require(j, "relation"))};
  throw ValidationError("unknown edit kind: " + kind);
}

json to_json(const Discrepancy& d) {
  static const char* names[] = {"missing_group",    "extra_group",
                                "wrong_count",      "wrong_color",
                                "wrong_size",       "missing_relation",
                                "extra_relation"};
  return json{{"kind", names[static_cast<int>(d.kind)]},
              {"category", d.category},
              {"ordinal", d.ordinal},
              {"expected", d.expected},
              {"actual", d.actual}};
}

}  // namespace apo
