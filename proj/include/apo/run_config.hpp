#pragma once

#include <cstdint>
#include <string>

#include "apo/agents.hpp"
#include "apo/diffusion.hpp"
#include "apo/json_io.hpp"
#include "apo/optim.hpp"
#include "apo/tools.hpp"

namespace apo {

// Resolved configuration for one CLI run. Everything a subcommand reads flows
// through this struct: defaults -> profile -> config file -> flag overrides,
// in increasing precedence. Fully JSON-serializable; the resolved form is
// embedded in the run manifest before any work starts.
struct RunConfig {
  Vocabulary vocab = Vocabulary::default_vocab();
  std::uint64_t codec_seed = 42;
  int latent_dim = 32;

  NoiseProfile noise;          // tool simulator behavior
  AgentBudget budget;          // agent call budgets
  OrchestratorConfig orchestrator() const;  // assembled from the above

  int n_clusters = 50;
  int k_target = 5;
  std::uint64_t data_seed = 11;
  int max_groups = 0;          // 0 = vocabulary maximum
  int parallelism = 1;

  int hidden = 64;
  int hidden_layers = 2;
  PretrainConfig pretrain;
  int corpus_reps = 2;         // corpus draws per prompt

  TrainConfig train;
  std::string mode = "apo";    // apo | dpo | batch-ft | ft
  HFunction h;                 // d_lo/d_hi refit from the dataset at use

  int eval_prompts = 20;
  int samples_per_prompt = 16;
  int candidate_limit = 8;     // near-miss candidates per prompt; <=0 = all
  std::uint64_t eval_seed = 99;

  std::string out_dir = "out";

  void validate() const;
  MlpConfig mlp() const;
};

json to_json(const RunConfig& c);
RunConfig run_config_from_json(const json& j);

// Built-in presets: "desk" (tiny, minutes on a laptop) and "paper-defaults"
// (full-scale reference settings: 725 clusters, k 10, beta 100, 64 pairs per
// batch). Throws ValidationError for unknown names.
RunConfig profile_config(const std::string& name);

// Overlays every key present in `j` onto `base` (missing keys keep their
// current values). Unknown keys throw ValidationError.
RunConfig overlay_config(const RunConfig& base, const json& j);

// FNV-1a over the file bytes; used for artifact hashes in run manifests.
std::uint64_t file_hash(const std::string& path);

// Writes <out_dir>/run_manifest.json containing the subcommand, the resolved
// config, and an (initially empty) artifact table. Returns the manifest path.
std::string write_run_manifest(const RunConfig& config,
                               const std::string& subcommand);

// Re-reads the manifest, records name -> {path, fnv1a64} for each artifact,
// and rewrites it atomically-enough for single-process use.
void record_artifacts(const std::string& manifest_path,
                      const std::vector<std::string>& artifact_paths);

}  // namespace apo
