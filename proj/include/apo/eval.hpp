#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "apo/codec.hpp"
#include "apo/dataset.hpp"
#include "apo/optim.hpp"

namespace apo {

// Discrepancy tallies grouped by the kind of detail that differs.
struct CategoryCounts {
  int presence = 0;   // missing or extra group
  int count = 0;      // wrong count
  int attribute = 0;  // wrong color or size
  int relation = 0;   // missing or extra relation

  int total() const { return presence + count + attribute + relation; }
  bool operator==(const CategoryCounts&) const = default;
};

struct EvalReport {
  int prompts = 0;
  int samples_per_prompt = 0;
  std::uint64_t seed = 0;
  double exact_match = 0;   // fraction of samples decoding to the true scene
  double per_detail = 0;    // mean per-sample fraction of matching details
  CategoryCounts discrepancies;

  bool operator==(const EvalReport&) const = default;
};

// Draws one reverse-diffusion sample for a condition embedding.
using SamplerFn = std::function<std::vector<double>(
    const std::vector<double>& condition, std::uint64_t seed)>;

// The true scene plus up to `limit - 1` seeded one-edit near misses.
// limit <= 0 keeps the full one-edit neighborhood.
std::vector<Scene> near_miss_candidates(const Scene& truth,
                                        const Vocabulary& vocab, int limit,
                                        std::uint64_t seed);

// Number of scored details in a scene (three per group plus one per
// relation); the denominator of per-detail accuracy.
int detail_count(const Scene& scene);

// Candidate-set decoding accuracy: for each prompt draw samples, decode each
// against that prompt's candidate scenes, and score exact and per-detail
// match against the prompt's scene.
EvalReport compositional_accuracy(const SamplerFn& sampler, const Codec& codec,
                                  const Vocabulary& vocab,
                                  const std::vector<Prompt>& prompts,
                                  const std::vector<std::vector<Scene>>& candidates,
                                  int samples_per_prompt, std::uint64_t seed);

EvalReport compositional_accuracy(const TrainState& state, const Codec& codec,
                                  const Vocabulary& vocab,
                                  const std::vector<Prompt>& prompts,
                                  const std::vector<std::vector<Scene>>& candidates,
                                  int samples_per_prompt, std::uint64_t seed);

// Implicit-reward margin surrogate -(l_pos - l_neg) for one pair at a fixed
// timestep and noise draw; anti-symmetric under swapping the members (with
// the noise draws swapped alongside).
double pair_margin(const TrainState& state, const TrainPair& pair, int t,
                   const std::vector<double>& eps_pos,
                   const std::vector<double>& eps_neg);

struct MarginStats {
  double mean = 0;
  double stddev = 0;
  double positive_fraction = 0;
  int draws = 0;

  bool operator==(const MarginStats&) const = default;
};

// Monte-Carlo margin statistics over t and noise, deterministic in the seed.
MarginStats preference_margin(const TrainState& state,
                              const std::vector<TrainPair>& pairs,
                              std::uint64_t seed, int draws_per_pair = 8);

struct AblationRow {
  std::string name;
  bool diverged = false;
  std::string error;
  EvalReport report;
  // Effective beta (h * beta) tally over the training pairs' distances;
  // populated by the H-function ablation.
  std::map<int, int> effective_beta_histogram;
};

struct AblationReport {
  std::uint64_t base_hash = 0;  // parameter hash of the shared base
  std::vector<AblationRow> rows;  // ranked by exact match, descending
};

struct AblationSetup {
  TrainConfig train;
  HFunction h;
  std::vector<Prompt> eval_prompts;
  std::vector<std::vector<Scene>> candidates;
  int samples_per_prompt = 8;
  std::uint64_t eval_seed = 0;
};

// Trains all four loss modes from the same base under identical budgets and
// seeds, then evaluates each. A diverging mode yields a flagged row instead
// of aborting the report.
AblationReport ablation_strategies(const Dataset& data, const Codec& codec,
                                   const TrainState& base,
                                   const AblationSetup& setup);

// Trains APO with each of the four H variants (direction x placement) from
// the same base and reports each with its effective-beta histogram.
AblationReport ablation_h(const Dataset& data, const Codec& codec,
                          const TrainState& base, const AblationSetup& setup);

std::string render_ablation_table(const AblationReport& report);

// Prompts sampled from the vocabulary whose canonical scenes do not occur as
// any cluster prompt in the dataset.
std::vector<Prompt> held_out_prompts(const Dataset& data,
                                     const Vocabulary& vocab, int n,
                                     std::uint64_t seed, int max_groups = 0);

}  // namespace apo
