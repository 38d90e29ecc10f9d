// Command-line entry point wiring the scene tools, agents, dataset store,
// denoiser, and evaluation together. Every subcommand resolves its
// configuration as defaults -> profile -> config file -> flags and writes a
// run manifest (resolved config + seeds + artifact hashes) into the output
// directory before doing work. Logs go to stderr; data goes to files.
#include <CLI11.hpp>

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <thread>

#include "apo/agents.hpp"
#include "apo/dataset.hpp"
#include "apo/errors.hpp"
#include "apo/eval.hpp"
#include "apo/run_config.hpp"
#include "apo/tools_http.hpp"

namespace {

using namespace apo;

constexpr int kExitUsage = 1;
constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

struct CommonFlags {
  std::string profile = "desk";
  std::string config_file;
  // Flag overrides; only values the user actually passed are applied.
  std::optional<int> n, k, max_groups, parallelism, steps, pretrain_steps,
      pairs_per_batch, candidate_limit, eval_prompts, samples, hidden;
  std::optional<double> beta, lr, gen_error;
  std::optional<std::uint64_t> data_seed, train_seed, eval_seed, noise_seed;
  std::optional<std::string> mode, out_dir;
};

void add_common_flags(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--profile", f.profile,
                  "Built-in preset: desk or paper-defaults");
  cmd->add_option("--config", f.config_file, "JSON config file");
  cmd->add_option("--out", f.out_dir, "Output directory");
  cmd->add_option("--n", f.n, "Number of clusters");
  cmd->add_option("--k", f.k, "Negatives per cluster (k_target)");
  cmd->add_option("--max-groups", f.max_groups,
                  "Max groups per sampled prompt (0 = vocabulary max)");
  cmd->add_option("--parallelism", f.parallelism, "Cluster workers");
  cmd->add_option("--mode", f.mode, "Loss mode: apo | dpo | batch-ft | ft");
  cmd->add_option("--beta", f.beta, "Preference temperature beta");
  cmd->add_option("--lr", f.lr, "Learning rate");
  cmd->add_option("--steps", f.steps, "Training steps");
  cmd->add_option("--batch", f.pairs_per_batch, "Pairs (or samples) per batch");
  cmd->add_option("--pretrain-steps", f.pretrain_steps, "Pretraining steps");
  cmd->add_option("--hidden", f.hidden, "Denoiser hidden width");
  cmd->add_option("--gen-error", f.gen_error,
                  "Tool generator per-detail error rate");
  cmd->add_option("--data-seed", f.data_seed, "Dataset/prompt seed");
  cmd->add_option("--train-seed", f.train_seed, "Training seed");
  cmd->add_option("--eval-seed", f.eval_seed, "Evaluation seed");
  cmd->add_option("--noise-seed", f.noise_seed, "Tool noise seed");
  cmd->add_option("--candidate-limit", f.candidate_limit,
                  "Near-miss candidates per eval prompt (<=0 = all)");
  cmd->add_option("--eval-prompts", f.eval_prompts, "Held-out prompt count");
  cmd->add_option("--samples", f.samples, "Samples per eval prompt");
}

RunConfig resolve_config(const CommonFlags& f) {
  RunConfig c = profile_config(f.profile);
  if (!f.config_file.empty()) {
    std::ifstream in(f.config_file);
    if (!in) throw ValidationError("cannot open config: " + f.config_file);
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded())
      throw ValidationError("malformed JSON config: " + f.config_file);
    c = overlay_config(c, j);
  }
  if (f.n) c.n_clusters = *f.n;
  if (f.k) c.k_target = *f.k;
  if (f.max_groups) c.max_groups = *f.max_groups;
  if (f.parallelism) c.parallelism = *f.parallelism;
  if (f.mode) c.mode = *f.mode;
  if (f.beta) c.train.beta = *f.beta;
  if (f.lr) c.train.lr = *f.lr;
  if (f.steps) c.train.steps = *f.steps;
  if (f.pairs_per_batch) c.train.pairs_per_batch = *f.pairs_per_batch;
  if (f.pretrain_steps) c.pretrain.steps = *f.pretrain_steps;
  if (f.hidden) c.hidden = *f.hidden;
  if (f.gen_error) c.noise.gen_detail_error_rate = *f.gen_error;
  if (f.data_seed) c.data_seed = *f.data_seed;
  if (f.train_seed) c.train.seed = *f.train_seed;
  if (f.eval_seed) c.eval_seed = *f.eval_seed;
  if (f.noise_seed) c.noise.seed = *f.noise_seed;
  if (f.candidate_limit) c.candidate_limit = *f.candidate_limit;
  if (f.eval_prompts) c.eval_prompts = *f.eval_prompts;
  if (f.samples) c.samples_per_prompt = *f.samples;
  if (f.out_dir) c.out_dir = *f.out_dir;
  c.validate();
  return c;
}

void log_line(const std::string& msg) { std::cerr << msg << "\n"; }

void write_json_file(const std::string& path, const nlohmann::ordered_json& j) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << j.dump(2) << "\n";
  if (!out) throw std::runtime_error("failed to write " + path);
}

// ---------------------------------------------------------------------------
// serve-tools

std::atomic<bool> g_stop{false};
void handle_signal(int) { g_stop = true; }

int cmd_serve_tools(const CommonFlags& f, const std::string& host, int port) {
  RunConfig c = resolve_config(f);
  std::string manifest = write_run_manifest(c, "serve-tools");
  ToolService service(c.vocab, c.noise);
  ToolServer server(service);
  int bound = server.start(host, port);
  log_line("serve-tools: listening on " + host + ":" + std::to_string(bound));
  // Also announce the port on stdout so scripts can capture it.
  std::cout << bound << std::endl;
  std::signal(SIGINT, handle_signal);
  std::signal(SIGTERM, handle_signal);
  while (!g_stop)
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  server.stop();
  record_artifacts(manifest, {});
  log_line("serve-tools: stopped");
  return 0;
}

// ---------------------------------------------------------------------------
// gen-data

int cmd_gen_data(const CommonFlags& f, const std::string& tools_host,
                 int tools_port) {
  RunConfig c = resolve_config(f);
  std::string manifest = write_run_manifest(c, "gen-data");
  Codec codec(c.vocab, c.codec_seed, c.latent_dim);
  auto prompts = sample_prompts(c.vocab, c.n_clusters, c.data_seed, c.max_groups);

  std::unique_ptr<ToolInterface> tools;
  if (!tools_host.empty())
    tools = std::make_unique<ToolClient>(tools_host, tools_port);
  else
    tools = std::make_unique<ToolService>(c.vocab, c.noise);

  DatasetManifest dm = orchestrate_dataset(prompts, *tools, c.vocab, codec,
                                           c.orchestrator(), c.parallelism,
                                           c.out_dir);
  record_artifacts(manifest,
                   {c.out_dir + "/manifest.json", c.out_dir + "/clusters.jsonl",
                    c.out_dir + "/pairs.jsonl", c.out_dir + "/traces.jsonl"});
  log_line("gen-data: " + std::to_string(dm.cluster_count) + " clusters, " +
           std::to_string(dm.negative_count) + " negatives, " +
           std::to_string(dm.failed_clusters) + " failed");
  return 0;
}

// ---------------------------------------------------------------------------
// expand-pairs

int cmd_expand_pairs(const CommonFlags& f, const std::string& dataset_dir) {
  RunConfig c = resolve_config(f);
  std::string manifest = write_run_manifest(c, "expand-pairs");
  Codec codec(c.vocab, c.codec_seed, c.latent_dim);
  Dataset data = read_dataset(dataset_dir);
  data.pairs.clear();
  for (const Cluster& cl : data.clusters) {
    auto pairs = expand_pairs(cl, c.vocab, codec);
    data.pairs.insert(data.pairs.end(), pairs.begin(), pairs.end());
  }
  write_dataset(data, c.out_dir);
  record_artifacts(manifest,
                   {c.out_dir + "/manifest.json", c.out_dir + "/clusters.jsonl",
                    c.out_dir + "/pairs.jsonl", c.out_dir + "/traces.jsonl"});
  log_line("expand-pairs: " + std::to_string(data.pairs.size()) + " pairs");
  return 0;
}

// ---------------------------------------------------------------------------
// pretrain

std::vector<CorpusItem> build_corpus(const RunConfig& c, const Codec& codec) {
  ToolService gen(c.vocab, c.noise);
  auto prompts = sample_prompts(c.vocab, c.n_clusters, c.data_seed, c.max_groups);
  std::vector<CorpusItem> corpus;
  for (size_t i = 0; i < prompts.size(); ++i)
    for (int rep = 0; rep < c.corpus_reps; ++rep) {
      std::string id = gen.generate(prompts[i], 1000 * i + rep);
      corpus.push_back({codec.embed(prompts[i].scene),
                        codec.embed(gen.image(id).scene)});
    }
  return corpus;
}

int cmd_pretrain(const CommonFlags& f) {
  RunConfig c = resolve_config(f);
  std::string manifest = write_run_manifest(c, "pretrain");
  Codec codec(c.vocab, c.codec_seed, c.latent_dim);
  auto corpus = build_corpus(c, codec);
  double final_loss = 0;
  TrainState state = pretrain(corpus, c.mlp(), NoiseSchedule::cosine(64),
                              c.pretrain, &final_loss);
  std::string ckpt = c.out_dir + "/base.ckpt.json";
  save_checkpoint(state, ckpt);
  record_artifacts(manifest, {ckpt});
  log_line("pretrain: " + std::to_string(corpus.size()) + " corpus items, " +
           std::to_string(c.pretrain.steps) + " steps, final loss " +
           std::to_string(final_loss));
  return 0;
}

// ---------------------------------------------------------------------------
// train

int cmd_train(const CommonFlags& f, const std::string& dataset_dir,
              const std::string& base_ckpt) {
  RunConfig c = resolve_config(f);
  std::string manifest = write_run_manifest(c, "train");
  Codec codec(c.vocab, c.codec_seed, c.latent_dim);
  Dataset data = read_dataset(dataset_dir);
  TrainState state = load_checkpoint(base_ckpt);
  HFunction h = fit_h_bounds(make_train_pairs(data, codec), c.h);
  std::string metrics = c.out_dir + "/metrics.jsonl";
  std::string ckpt = c.out_dir + "/model.ckpt.json";
  train_on_dataset(state, loss_mode_from_name(c.mode), data, codec, c.train, h,
                   metrics, ckpt);
  record_artifacts(manifest, {metrics, ckpt});
  log_line("train: mode " + c.mode + ", " + std::to_string(c.train.steps) +
           " steps");
  return 0;
}

// ---------------------------------------------------------------------------
// eval

int cmd_eval(const CommonFlags& f, const std::string& dataset_dir,
             const std::string& ckpt) {
  RunConfig c = resolve_config(f);
  std::string manifest = write_run_manifest(c, "eval");
  Codec codec(c.vocab, c.codec_seed, c.latent_dim);
  Dataset data = read_dataset(dataset_dir);
  TrainState state = load_checkpoint(ckpt);
  auto prompts = held_out_prompts(data, c.vocab, c.eval_prompts, c.eval_seed,
                                  c.max_groups);
  std::vector<std::vector<Scene>> candidates;
  for (size_t i = 0; i < prompts.size(); ++i)
    candidates.push_back(near_miss_candidates(
        prompts[i].scene, c.vocab, c.candidate_limit,
        DetRng::mix(c.eval_seed, 0x63616e64ULL, i)));
  EvalReport r = compositional_accuracy(state, codec, c.vocab, prompts,
                                        candidates, c.samples_per_prompt,
                                        c.eval_seed);
  nlohmann::ordered_json out;
  out["prompts"] = r.prompts;
  out["samples_per_prompt"] = r.samples_per_prompt;
  out["seed"] = r.seed;
  out["exact_match"] = r.exact_match;
  out["per_detail"] = r.per_detail;
  out["discrepancies"] = {{"presence", r.discrepancies.presence},
                          {"count", r.discrepancies.count},
                          {"attribute", r.discrepancies.attribute},
                          {"relation", r.discrepancies.relation}};
  std::string path = c.out_dir + "/eval_report.json";
  write_json_file(path, out);
  record_artifacts(manifest, {path});
  log_line("eval: exact " + std::to_string(r.exact_match) + ", per-detail " +
           std::to_string(r.per_detail));
  return 0;
}

// ---------------------------------------------------------------------------
// ablate

int cmd_ablate(const CommonFlags& f, const std::string& dataset_dir,
               const std::string& base_ckpt) {
  RunConfig c = resolve_config(f);
  std::string manifest = write_run_manifest(c, "ablate");
  Codec codec(c.vocab, c.codec_seed, c.latent_dim);
  Dataset data = read_dataset(dataset_dir);
  TrainState base = load_checkpoint(base_ckpt);

  AblationSetup setup;
  setup.train = c.train;
  setup.h = fit_h_bounds(make_train_pairs(data, codec), c.h);
  setup.eval_prompts = held_out_prompts(data, c.vocab, c.eval_prompts,
                                        c.eval_seed, c.max_groups);
  for (size_t i = 0; i < setup.eval_prompts.size(); ++i)
    setup.candidates.push_back(near_miss_candidates(
        setup.eval_prompts[i].scene, c.vocab, c.candidate_limit,
        DetRng::mix(c.eval_seed, 0x63616e64ULL, i)));
  setup.samples_per_prompt = c.samples_per_prompt;
  setup.eval_seed = c.eval_seed;

  AblationReport strategies = ablation_strategies(data, codec, base, setup);
  AblationReport hvariants = ablation_h(data, codec, base, setup);

  auto row_json = [](const AblationRow& r) {
    nlohmann::ordered_json j;
    j["name"] = r.name;
    j["diverged"] = r.diverged;
    if (!r.error.empty()) j["error"] = r.error;
    j["exact_match"] = r.report.exact_match;
    j["per_detail"] = r.report.per_detail;
    if (!r.effective_beta_histogram.empty()) {
      nlohmann::ordered_json hist;
      for (const auto& [k, v] : r.effective_beta_histogram)
        hist[std::to_string(k)] = v;
      j["effective_beta_histogram"] = hist;
    }
    return j;
  };
  nlohmann::ordered_json out;
  out["base_hash"] = strategies.base_hash;
  out["strategies"] = nlohmann::ordered_json::array();
  for (const auto& r : strategies.rows) out["strategies"].push_back(row_json(r));
  out["h_variants"] = nlohmann::ordered_json::array();
  for (const auto& r : hvariants.rows) out["h_variants"].push_back(row_json(r));
  std::string json_path = c.out_dir + "/ablation.json";
  write_json_file(json_path, out);

  std::string table = render_ablation_table(strategies) + "\n" +
                      render_ablation_table(hvariants);
  std::string table_path = c.out_dir + "/ablation.txt";
  {
    std::ofstream t(table_path, std::ios::binary | std::ios::trunc);
    t << table;
  }
  record_artifacts(manifest, {json_path, table_path});
  std::cerr << table;
  return 0;
}

// ---------------------------------------------------------------------------
// stats

int cmd_stats(const CommonFlags& f, const std::string& dataset_dir) {
  RunConfig c = resolve_config(f);
  std::string manifest = write_run_manifest(c, "stats");
  Dataset data = read_dataset(dataset_dir);
  DatasetStats s = dataset_stats(data);
  nlohmann::ordered_json out;
  out["clusters"] = s.clusters;
  out["negatives_mean"] = s.negatives_mean;
  out["negatives_min"] = s.negatives_min;
  out["negatives_max"] = s.negatives_max;
  nlohmann::ordered_json hist;
  for (const auto& [d, n] : s.distance_histogram) hist[std::to_string(d)] = n;
  out["distance_histogram"] = hist;
  out["anchor_pairs"] = s.anchor_pairs;
  out["intra_pairs"] = s.intra_pairs;
  out["tool_calls"] = {{"imggen", s.tool_calls.imggen_calls},
                       {"editor", s.tool_calls.editor_calls},
                       {"vqa", s.tool_calls.vqa_calls}};
  std::string path = c.out_dir + "/stats.json";
  write_json_file(path, out);
  record_artifacts(manifest, {path});
  std::cout << out.dump(2) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// grad-check

int cmd_grad_check(const CommonFlags& f, int probes) {
  RunConfig c = resolve_config(f);
  std::string manifest = write_run_manifest(c, "grad-check");

  // Small denoiser so central differences stay fast and well-conditioned.
  MlpConfig mcfg;
  mcfg.latent = 4;
  mcfg.hidden = 8;
  mcfg.hidden_layers = 2;
  NoiseSchedule sched = NoiseSchedule::cosine(64);
  DetRng rng(c.eval_seed, 0x67636b31ULL);
  TrainState st;
  st.mlp = mcfg;
  st.schedule = sched;
  st.params = mlp_init(mcfg, rng);
  for (double& p : st.params) p += 0.1 * rng.gaussian();
  st.ref_params = st.params;
  for (double& p : st.params) p += 0.05 * rng.gaussian();

  TrainPair pair;
  for (int i = 0; i < mcfg.latent; ++i) {
    pair.condition.push_back(rng.uniform(-1, 1));
    pair.preferred.push_back(rng.uniform(-1, 1));
    pair.dispreferred.push_back(rng.uniform(-1, 1));
  }
  pair.distance = 2;
  std::vector<double> eps_pos, eps_neg;
  for (int i = 0; i < mcfg.latent; ++i) {
    eps_pos.push_back(rng.gaussian());
    eps_neg.push_back(rng.gaussian());
  }
  int t = 20;
  TrainConfig tc = c.train;
  HFunction h = c.h;
  h.d_lo = 1;
  h.d_hi = 3;

  FtSample sample{pair.condition, pair.preferred};

  struct Check {
    std::string name;
    double threshold;
    double max_rel_error;
  };
  std::vector<Check> checks;
  auto run = [&](const std::string& name, double threshold, double fd_step,
                 auto&& loss_fn) {
    auto fn = [&](const std::vector<double>& params) {
      TrainState probe = st;
      probe.params = params;
      return loss_fn(probe);
    };
    GradCheckResult r = grad_check(fn, st.params, probes, fd_step,
                                   DetRng::mix(c.eval_seed, 0x67636b32ULL,
                                               checks.size()));
    checks.push_back({name, threshold, r.max_rel_error});
  };
  run("apo", 1e-4, 1e-6, [&](const TrainState& s) {
    auto r = apo_pair_loss(s, pair, t, eps_pos, eps_neg, tc, h);
    return std::make_pair(r.loss, r.grad);
  });
  run("dpo", 1e-4, 1e-6, [&](const TrainState& s) {
    auto r = dpo_pair_loss(s, pair, t, eps_pos, eps_neg, tc);
    return std::make_pair(r.loss, r.grad);
  });
  run("ft", 1e-6, 1e-5, [&](const TrainState& s) {
    auto r = standard_ft_loss(s, sample, t, eps_pos);
    return std::make_pair(r.loss, r.grad);
  });
  run("batch-ft", 1e-6, 1e-5, [&](const TrainState& s) {
    auto r = batch_ft_loss(s, {sample, {pair.condition, pair.dispreferred}},
                           {t, t + 5}, {eps_pos, eps_neg});
    return std::make_pair(r.loss, r.grad);
  });

  bool ok = true;
  nlohmann::ordered_json out;
  out["probes"] = probes;
  out["checks"] = nlohmann::ordered_json::array();
  for (const Check& ch : checks) {
    bool pass = ch.max_rel_error < ch.threshold;
    ok = ok && pass;
    out["checks"].push_back({{"name", ch.name},
                             {"max_rel_error", ch.max_rel_error},
                             {"threshold", ch.threshold},
                             {"pass", pass}});
    log_line("grad-check " + ch.name + ": max rel error " +
             std::to_string(ch.max_rel_error) + (pass ? " (ok)" : " (FAIL)"));
  }
  std::string path = c.out_dir + "/grad_check.json";
  write_json_file(path, out);
  record_artifacts(manifest, {path});
  return ok ? 0 : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contrastive dataset pipeline and preference fine-tuning for a "
               "toy compositional diffusion model"};
  app.require_subcommand(1);

  CommonFlags flags;
  std::string host = "127.0.0.1", tools_host;
  int port = 0, tools_port = 0, probes = 200;
  std::string dataset_dir, base_ckpt, model_ckpt;

  auto* serve = app.add_subcommand("serve-tools", "Serve the simulated tools over HTTP");
  add_common_flags(serve, flags);
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port (0 = OS-assigned)");

  auto* gen = app.add_subcommand("gen-data", "Run the agent pipeline and write a dataset");
  add_common_flags(gen, flags);
  gen->add_option("--tools-host", tools_host, "Use a remote tool server");
  gen->add_option("--tools-port", tools_port, "Remote tool server port");

  auto* expand = app.add_subcommand("expand-pairs", "Recompute contrastive pairs for a dataset");
  add_common_flags(expand, flags);
  expand->add_option("--dataset", dataset_dir, "Dataset directory")->required();

  auto* pre = app.add_subcommand("pretrain", "Pretrain the base denoiser on a noisy corpus");
  add_common_flags(pre, flags);

  auto* train = app.add_subcommand("train", "Fine-tune from a base checkpoint");
  add_common_flags(train, flags);
  train->add_option("--dataset", dataset_dir, "Dataset directory")->required();
  train->add_option("--base", base_ckpt, "Base checkpoint")->required();

  auto* eval = app.add_subcommand("eval", "Held-out compositional accuracy");
  add_common_flags(eval, flags);
  eval->add_option("--dataset", dataset_dir, "Dataset directory")->required();
  eval->add_option("--checkpoint", model_ckpt, "Model checkpoint")->required();

  auto* ablate = app.add_subcommand("ablate", "Strategy and H-variant ablations");
  add_common_flags(ablate, flags);
  ablate->add_option("--dataset", dataset_dir, "Dataset directory")->required();
  ablate->add_option("--base", base_ckpt, "Base checkpoint")->required();

  auto* stats = app.add_subcommand("stats", "Dataset summary statistics");
  add_common_flags(stats, flags);
  stats->add_option("--dataset", dataset_dir, "Dataset directory")->required();

  auto* gc = app.add_subcommand("grad-check", "Finite-difference gradient verification");
  add_common_flags(gc, flags);
  gc->add_option("--probes", probes, "Probed coordinates per loss");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (serve->parsed()) return cmd_serve_tools(flags, host, port);
    if (gen->parsed()) return cmd_gen_data(flags, tools_host, tools_port);
    if (expand->parsed()) return cmd_expand_pairs(flags, dataset_dir);
    if (pre->parsed()) return cmd_pretrain(flags);
    if (train->parsed()) return cmd_train(flags, dataset_dir, base_ckpt);
    if (eval->parsed()) return cmd_eval(flags, dataset_dir, model_ckpt);
    if (ablate->parsed()) return cmd_ablate(flags, dataset_dir, base_ckpt);
    if (stats->parsed()) return cmd_stats(flags, dataset_dir);
    if (gc->parsed()) return cmd_grad_check(flags, probes);
  } catch (const ValidationError& e) {
    std::cerr << json{{"error", {{"code", "validation"}, {"message", e.what()}}}}
                     .dump()
              << "\n";
    return kExitValidation;
  } catch (const NotFoundError& e) {
    std::cerr << json{{"error", {{"code", "not_found"}, {"message", e.what()}}}}
                     .dump()
              << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", {{"code", "runtime"}, {"message", e.what()}}}}
                     .dump()
              << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
