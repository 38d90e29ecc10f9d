#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "apo/rng.hpp"
#include "apo/scene.hpp"

namespace apo {

struct Provenance {
  enum class Kind { Generated, Edited };
  Kind kind = Kind::Generated;
  std::string from_id;               // edited only
  std::optional<AtomicEdit> edit;    // edited only

  bool operator==(const Provenance&) const = default;
};

struct ImageRecord {
  std::string id;
  Scene scene;
  Provenance provenance;
  // Logical timestamp: the request ordinal that created the record. Wall
  // time would break byte-for-byte replayability of response sequences.
  std::uint64_t created_at = 0;

  bool operator==(const ImageRecord&) const = default;
};

struct NoiseProfile {
  double gen_detail_error_rate = 0.3;
  double edit_failure_rate = 0.1;
  double edit_side_effect_rate = 0.05;
  double vqa_error_rate = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

// Structured VQA. `ordinal` selects among same-category groups in canonical
// order, so repeated categories stay addressable.
struct VqaQuery {
  enum class Kind { CountOf, AttributeOf, RelationHolds, GroupPresent };
  enum class Attribute { Color, Size };

  Kind kind = Kind::GroupPresent;
  std::string category;       // CountOf / AttributeOf / GroupPresent
  int ordinal = 0;            // CountOf / AttributeOf
  Attribute attribute = Attribute::Color;  // AttributeOf
  std::string subject_category;  // RelationHolds
  std::string predicate;         // RelationHolds
  std::string object_category;   // RelationHolds
  int subject_ordinal = 0;
  int object_ordinal = 0;

  bool operator==(const VqaQuery&) const = default;
};

// int for CountOf, bool for RelationHolds/GroupPresent, string for
// AttributeOf ("none" when the attribute is unset).
using VqaAnswer = std::variant<int, bool, std::string>;

struct ToolStats {
  std::uint64_t imggen_calls = 0;
  std::uint64_t editor_calls = 0;
  std::uint64_t vqa_calls = 0;

  bool operator==(const ToolStats&) const = default;
};

// Agents talk to this interface; the in-process service and the HTTP client
// both implement it, so the two execution paths are interchangeable.
class ToolInterface {
 public:
  virtual ~ToolInterface() = default;
  virtual std::string generate(const Prompt& prompt, std::uint64_t seed) = 0;
  virtual std::string edit(const std::string& image_id,
                           const AtomicEdit& instruction) = 0;
  virtual VqaAnswer vqa(const std::string& image_id, const VqaQuery& query) = 0;
  virtual ImageRecord image(const std::string& image_id) = 0;
  virtual ToolStats stats() = 0;
};

// Simulated tools over an append-only in-memory store. Every response is a
// pure function of (profile.seed, request ordinal, request body), so a fixed
// request sequence replays byte-identically.
class ToolService : public ToolInterface {
 public:
  ToolService(const Vocabulary& vocab, const NoiseProfile& profile);

  std::string generate(const Prompt& prompt, std::uint64_t seed) override;
  std::string edit(const std::string& image_id,
                   const AtomicEdit& instruction) override;
  VqaAnswer vqa(const std::string& image_id, const VqaQuery& query) override;
  ImageRecord image(const std::string& image_id) override;
  ToolStats stats() override;

  const Vocabulary& vocab() const { return vocab_; }
  const NoiseProfile& profile() const { return profile_; }

 private:
  std::string store(Scene scene, Provenance provenance, std::uint64_t ordinal);
  const ImageRecord& find(const std::string& image_id) const;
  Scene corrupt_scene(const Scene& scene, DetRng& rng) const;
  VqaAnswer truthful_answer(const Scene& scene, const VqaQuery& query) const;

  Vocabulary vocab_;
  NoiseProfile profile_;
  mutable std::mutex mu_;
  std::vector<ImageRecord> records_;
  std::map<std::string, size_t> index_;
  std::uint64_t next_ordinal_ = 0;
  ToolStats stats_;
};

void validate_query(const VqaQuery& query, const Vocabulary& vocab);

}  // namespace apo
