#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "apo/errors.hpp"

namespace apo {

// Closed symbolic universe. The ordering of every value list is fixed and
// serialized with the vocabulary: it defines the embedding layout and the
// canonical ordering of scenes.
struct Vocabulary {
  std::vector<std::string> categories;
  std::vector<std::string> colors;
  std::vector<std::string> sizes;
  std::vector<std::string> predicates;
  int max_groups = 4;
  int max_count = 9;
  // Unordered pairs of predicates that cannot both hold between the same
  // endpoints (e.g. "left of" / "right of").
  std::vector<std::pair<std::string, std::string>> opposite_predicates;
  // Predicates with no direction; canonical form stores subject < object.
  std::vector<std::string> symmetric_predicates;

  void validate() const;

  int category_index(const std::string& name) const;
  int color_index(const std::string& name) const;
  int size_index(const std::string& name) const;
  int predicate_index(const std::string& name) const;

  bool is_symmetric(const std::string& predicate) const;
  bool are_opposite(const std::string& a, const std::string& b) const;

  uint64_t hash() const;

  static Vocabulary default_vocab();
};

struct EntityGroup {
  std::string category;
  int count = 1;
  std::optional<std::string> color;
  std::optional<std::string> size;

  bool operator==(const EntityGroup&) const = default;
};

struct Relation {
  int subject = 0;
  std::string predicate;
  int object = 0;

  bool operator==(const Relation&) const = default;
};

struct Scene {
  std::vector<EntityGroup> groups;
  std::vector<Relation> relations;

  bool operator==(const Scene&) const = default;
};

// ---------------------------------------------------------------------------
// Atomic edits

struct SetColor {
  int group = 0;
  std::optional<std::string> color;  // nullopt removes the attribute
  bool operator==(const SetColor&) const = default;
};
struct SetSize {
  int group = 0;
  std::optional<std::string> size;
  bool operator==(const SetSize&) const = default;
};
struct IncrementCount {
  int group = 0;
  bool operator==(const IncrementCount&) const = default;
};
struct DecrementCount {
  int group = 0;
  bool operator==(const DecrementCount&) const = default;
};
// Adds a fully specified group in one step; the mirror of RemoveGroup so the
// edit graph stays (near-)symmetric.
struct AddGroup {
  EntityGroup group;
  bool operator==(const AddGroup&) const = default;
};
// Dropping incident relations is part of the same single edit.
struct RemoveGroup {
  int group = 0;
  bool operator==(const RemoveGroup&) const = default;
};
// Replaces one relation with another over the same unordered endpoint pair.
struct SetPredicate {
  Relation from;
  Relation to;
  bool operator==(const SetPredicate&) const = default;
};
struct AddRelation {
  Relation relation;
  bool operator==(const AddRelation&) const = default;
};
struct RemoveRelation {
  Relation relation;
  bool operator==(const RemoveRelation&) const = default;
};

using AtomicEdit =
    std::variant<SetColor, SetSize, IncrementCount, DecrementCount, AddGroup,
                 RemoveGroup, SetPredicate, AddRelation, RemoveRelation>;

std::string describe_edit(const AtomicEdit& edit);

// ---------------------------------------------------------------------------
// Discrepancies (per-detail diff between a reference and a candidate scene)

struct Discrepancy {
  enum class Kind {
    MissingGroup,
    ExtraGroup,
    WrongCount,
    WrongColor,
    WrongSize,
    MissingRelation,
    ExtraRelation,
  };
  Kind kind = Kind::MissingGroup;
  std::string category;  // category of the affected group (subject for relations)
  int ordinal = 0;       // position among same-category groups, canonical order
  std::string expected;  // value in the reference scene ("" / "none" if absent)
  std::string actual;    // value in the candidate scene
  Relation relation;     // populated for relation kinds (reference indexing)

  bool operator==(const Discrepancy&) const = default;
};

std::string describe_discrepancy(const Discrepancy& d);

// ---------------------------------------------------------------------------
// Operations

void validate_scene(const Scene& scene, const Vocabulary& vocab);

// Sorts groups by (category, count, color, size) index order, remaps and
// sorts relations, normalizes symmetric relations to subject < object,
// removes duplicate relations. Idempotent.
Scene canonicalize(const Scene& scene, const Vocabulary& vocab);

// Compact byte string identifying the canonical form; exact (not a hash).
std::string packed_key(const Scene& canonical_scene, const Vocabulary& vocab);

bool same_scene(const Scene& a, const Scene& b, const Vocabulary& vocab);

// Applies one edit and returns the canonicalized result. Throws
// ValidationError for out-of-range indices, counts leaving [1, max_count],
// duplicate/conflicting relations, or removing the last group.
Scene apply_edit(const Scene& scene, const AtomicEdit& edit,
                 const Vocabulary& vocab);

// Complete duplicate-free list of valid edits; excludes edits whose result
// is canonically equal to the input. AddGroup payloads cover every group
// variant of the vocabulary, so the list grows with the vocabulary size.
std::vector<AtomicEdit> enumerate_edits(const Scene& scene,
                                        const Vocabulary& vocab);

// Per-detail discrepancy list; empty iff the canonical forms are equal.
// Groups are matched category-by-category under the assignment minimizing
// total attribute mismatch.
std::vector<Discrepancy> scene_diff(const Scene& reference,
                                    const Scene& candidate,
                                    const Vocabulary& vocab);

// ---------------------------------------------------------------------------
// Canonical prompt text

std::string render_prompt(const Scene& scene, const Vocabulary& vocab);
Scene parse_prompt(const std::string& text, const Vocabulary& vocab);

struct Prompt {
  std::string text;
  Scene scene;  // canonical

  static Prompt from_scene(const Scene& scene, const Vocabulary& vocab);
  bool operator==(const Prompt&) const = default;
};

// Indices (into canonical scene.groups) of groups with the given category.
std::vector<int> groups_of_category(const Scene& scene,
                                    const std::string& category);

}  // namespace apo
