#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "apo/agents.hpp"
#include "apo/codec.hpp"

namespace apo {

struct PairMember {
  std::string image_id;
  Scene scene;
  std::vector<double> embedding;
  bool operator==(const PairMember&) const = default;
};

struct PairSource {
  enum class Kind { Anchor, Intra };
  Kind kind = Kind::Anchor;
  int a = 0;  // anchor: negative index k; intra: preferred negative index
  int b = 0;  // intra: dispreferred negative index
  bool operator==(const PairSource&) const = default;
};

struct PreferencePair {
  Prompt condition;  // always the preferred member's prompt
  PairMember preferred;
  PairMember dispreferred;
  int distance = 0;  // edit distance between the two member scenes
  PairSource source;
  bool operator==(const PreferencePair&) const = default;
};

struct DatasetManifest {
  int version = 1;
  std::uint64_t vocab_hash = 0;
  std::uint64_t codec_seed = 0;
  int cluster_count = 0;
  int negative_count = 0;
  int dropped_count = 0;
  int failed_clusters = 0;
  ToolStats tool_calls;
  std::uint64_t creation_seed = 0;
  bool operator==(const DatasetManifest&) const = default;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<Cluster> clusters;
  std::vector<PreferencePair> pairs;
};

// Anchor pairs (positive over every negative) plus the intra-cluster pairs
// admitted by pair_filter, with recomputed member-to-member distances and
// canonical-form deduplication.
std::vector<PreferencePair> expand_pairs(const Cluster& cluster,
                                         const Vocabulary& vocab,
                                         const Codec& codec,
                                         int search_depth = 8);

void write_dataset(const Dataset& dataset, const std::string& dir);
Dataset read_dataset(const std::string& dir);

struct DatasetStats {
  int clusters = 0;
  double negatives_mean = 0.0;
  int negatives_min = 0;
  int negatives_max = 0;
  std::map<int, int> distance_histogram;  // over negatives
  int anchor_pairs = 0;
  int intra_pairs = 0;
  ToolStats tool_calls;
};

DatasetStats dataset_stats(const Dataset& dataset);

// Runs the full agentic generation pipeline over seeded prompts and writes
// manifest.json,
// clusters.jsonl, pairs.jsonl, and traces.jsonl into `out_dir`. Clusters are
// executed by `parallelism` workers; outputs are ordered by prompt index, but
// shared tool-store interleaving means bitwise reproducibility requires
// parallelism 1.
DatasetManifest orchestrate_dataset(const std::vector<Prompt>& prompts,
                                    ToolInterface& tools,
                                    const Vocabulary& vocab, const Codec& codec,
                                    const OrchestratorConfig& config,
                                    int parallelism, const std::string& out_dir);

}  // namespace apo
