#pragma once

#include <nlohmann/json.hpp>

#include "apo/scene.hpp"

// JSON schemas (field names are part of the wire/file contract):
//   Scene:   {"groups": [{"category", "count", "color"?, "size"?}, ...],
//             "relations": [{"subject", "predicate", "object"}, ...]}
//   Prompt:  {"text": ..., "scene": Scene}
//   Vocabulary: {"categories", "colors", "sizes", "predicates",
//                "max_groups", "max_count", "opposite_predicates",
//                "symmetric_predicates"}
// Optional attributes are omitted when absent.

namespace apo {

using json = nlohmann::json;

json to_json(const EntityGroup& g);
json to_json(const Relation& r);
json to_json(const Scene& s);
json to_json(const Prompt& p);
json to_json(const Vocabulary& v);
json to_json(const AtomicEdit& e);
json to_json(const Discrepancy& d);

EntityGroup group_from_json(const json& j);
Relation relation_from_json(const json& j);
Scene scene_from_json(const json& j);
Prompt prompt_from_json(const json& j);
Vocabulary vocab_from_json(const json& j);
AtomicEdit edit_from_json(const json& j);

}  // namespace apo
