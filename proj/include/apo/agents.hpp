#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "apo/distance.hpp"
#include "apo/tools.hpp"

namespace apo {

struct AgentBudget {
  int max_total_attempts = 10;      // generate + edit calls combined
  int max_initial_generations = 3;  // independent fresh generations
  int max_edit_calls = 10;

  void validate() const;
};

struct TraceStep {
  std::string tool;      // "generate" | "edit" | "vqa"
  std::string request;   // summary
  std::string response;  // summary
  std::string note;      // decision note
  bool operator==(const TraceStep&) const = default;
};

struct AgentTrace {
  std::vector<TraceStep> steps;
  ToolStats counters;

  void add(TraceStep step);
  bool operator==(const AgentTrace&) const = default;
};

struct NegativeRecord {
  Prompt prompt;
  std::string image_id;
  Scene scene;  // stored scene snapshot of the negative image
  int distance = 0;
  bool operator==(const NegativeRecord&) const = default;
};

struct Cluster {
  Prompt prompt;
  std::string positive_image;
  Scene positive_scene;
  std::vector<NegativeRecord> negatives;  // sorted ascending by distance
  std::map<std::string, AgentTrace> traces;
  bool operator==(const Cluster&) const = default;
};

// Complete VQA checklist for "does the image show exactly this scene":
// per present group its count/color/size, absence guards for every other
// category and for one-past-the-last ordinal of each present category, and
// the full relation matrix over present groups. An image answering every
// entry as expected is canonically equal to `scene`.
std::vector<std::pair<VqaQuery, VqaAnswer>> verification_checklist(
    const Scene& scene, const Vocabulary& vocab);

struct GenResult {
  bool success = false;
  std::string image_id;
  AgentTrace trace;
};

// Fresh-generation policy: up to max_initial_generations fully verified
// generations; accept on zero mismatches, otherwise repair the closest one
// with single-discrepancy edits, re-verifying everything after each edit.
GenResult image_gen_agent(const Prompt& prompt, ToolInterface& tools,
                          const Vocabulary& vocab, const AgentBudget& budget,
                          std::uint64_t seed);

// Up to k_target distinct negative prompts, each 1..3 atomic edits away
// (weights favoring 1 edit).
std::vector<Prompt> contrastive_prompt_agent(const Prompt& prompt,
                                             const Vocabulary& vocab,
                                             int k_target, std::uint64_t seed);

struct EditResult {
  bool success = false;
  std::string image_id;
  AgentTrace trace;
};

// Shortest-plan editing with full re-verification after every edit and
// replanning from the verified scene on detected failures or side effects.
EditResult image_edit_agent(const std::string& source_image,
                            const Prompt& source_prompt,
                            const Prompt& target_prompt, ToolInterface& tools,
                            const Vocabulary& vocab, const AgentBudget& budget,
                            int search_depth = 8);

struct DistanceEstimatorConfig {
  bool noisy = false;
  double flip_prob = 0.0;  // chance of a ±1 perturbation in noisy mode
  std::uint64_t seed = 0;
};

// Edit distance between the stored scenes of two images.
int distance_estimator(ToolInterface& tools, const std::string& positive_image,
                       const std::string& negative_image,
                       const Vocabulary& vocab,
                       const DistanceEstimatorConfig& config = {},
                       int search_depth = 8);

struct PairCandidate {
  Prompt prompt;
  Scene image_scene;
};

// True iff `positive` satisfies its own prompt while `negative`'s image
// violates at least one detail of it. Directional.
bool pair_filter(const PairCandidate& positive, const PairCandidate& negative,
                 const Vocabulary& vocab);

struct OrchestratorConfig {
  AgentBudget budget;
  int k_target = 10;
  std::uint64_t seed = 0;
  int search_depth = 8;
  DistanceEstimatorConfig distance;
};

struct ClusterResult {
  bool success = false;
  Cluster cluster;
  int dropped = 0;  // negatives attempted but not kept
  std::string failure_reason;
};

ClusterResult orchestrate_cluster(const Prompt& prompt, ToolInterface& tools,
                                  const Vocabulary& vocab,
                                  const OrchestratorConfig& config,
                                  std::uint64_t cluster_ordinal);

// Seeded prompt source for dataset runs.
std::vector<Prompt> sample_prompts(const Vocabulary& vocab, int n,
                                   std::uint64_t seed, int max_groups = 0);

}  // namespace apo
