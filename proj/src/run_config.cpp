#include "apo/run_config.hpp"

#include <filesystem>
#include <fstream>

#include "apo/errors.hpp"
#include "apo/tools_http.hpp"

namespace apo {
namespace {

json budget_to_json(const AgentBudget& b) {
  return json{{"max_total_attempts", b.max_total_attempts},
              {"max_initial_generations", b.max_initial_generations},
              {"max_edit_calls", b.max_edit_calls}};
}

AgentBudget budget_from_json(const json& j) {
  AgentBudget b;
  b.max_total_attempts = j.at("max_total_attempts").get<int>();
  b.max_initial_generations = j.at("max_initial_generations").get<int>();
  b.max_edit_calls = j.at("max_edit_calls").get<int>();
  return b;
}

json pretrain_to_json(const PretrainConfig& p) {
  return json{{"steps", p.steps},
              {"lr", p.lr},
              {"batch", p.batch},
              {"seed", p.seed}};
}

PretrainConfig pretrain_from_json(const json& j) {
  PretrainConfig p;
  p.steps = j.at("steps").get<int>();
  p.lr = j.at("lr").get<double>();
  p.batch = j.at("batch").get<int>();
  p.seed = j.at("seed").get<std::uint64_t>();
  return p;
}

json train_to_json(const TrainConfig& t) {
  return json{{"beta", t.beta},           {"lr", t.lr},
              {"clip_norm", t.clip_norm}, {"pairs_per_batch", t.pairs_per_batch},
              {"steps", t.steps},         {"seed", t.seed},
              {"log_interval", t.log_interval}};
}

TrainConfig train_from_json(const json& j) {
  TrainConfig t;
  t.beta = j.at("beta").get<double>();
  t.lr = j.at("lr").get<double>();
  t.clip_norm = j.at("clip_norm").get<double>();
  t.pairs_per_batch = j.at("pairs_per_batch").get<int>();
  t.steps = j.at("steps").get<int>();
  t.seed = j.at("seed").get<std::uint64_t>();
  t.log_interval = j.at("log_interval").get<int>();
  return t;
}

json h_to_json(const HFunction& h) {
  return json{
      {"h_min", h.h_min},
      {"h_max", h.h_max},
      {"direction",
       h.direction == HFunction::Direction::Increasing ? "increasing"
                                                       : "decreasing"},
      {"placement",
       h.placement == HFunction::Placement::ScaleBeta ? "scale-beta"
                                                      : "scale-loss"}};
}

HFunction h_from_json(const json& j) {
  HFunction h;
  h.h_min = j.at("h_min").get<double>();
  h.h_max = j.at("h_max").get<double>();
  std::string dir = j.at("direction").get<std::string>();
  std::string pl = j.at("placement").get<std::string>();
  if (dir == "increasing")
    h.direction = HFunction::Direction::Increasing;
  else if (dir == "decreasing")
    h.direction = HFunction::Direction::Decreasing;
  else
    throw ValidationError("unknown h direction: " + dir);
  if (pl == "scale-beta")
    h.placement = HFunction::Placement::ScaleBeta;
  else if (pl == "scale-loss")
    h.placement = HFunction::Placement::ScaleLoss;
  else
    throw ValidationError("unknown h placement: " + pl);
  return h;
}

}  // namespace

OrchestratorConfig RunConfig::orchestrator() const {
  OrchestratorConfig c;
  c.budget = budget;
  c.k_target = k_target;
  c.seed = data_seed;
  return c;
}

MlpConfig RunConfig::mlp() const {
  MlpConfig m;
  m.latent = latent_dim;
  m.hidden = hidden;
  m.hidden_layers = hidden_layers;
  return m;
}

void RunConfig::validate() const {
  vocab.validate();
  noise.validate();
  budget.validate();
  train.validate();
  h.validate();
  if (latent_dim < 1) throw ValidationError("latent_dim must be positive");
  if (n_clusters < 1) throw ValidationError("n_clusters must be positive");
  if (k_target < 1) throw ValidationError("k_target must be positive");
  if (parallelism < 1) throw ValidationError("parallelism must be positive");
  if (hidden < 1 || hidden_layers < 1)
    throw ValidationError("denoiser dimensions must be positive");
  if (corpus_reps < 1) throw ValidationError("corpus_reps must be positive");
  if (eval_prompts < 1 || samples_per_prompt < 1)
    throw ValidationError("eval sizes must be positive");
  if (out_dir.empty()) throw ValidationError("out_dir must be set");
  if (loss_mode_name(loss_mode_from_name(mode)) != mode)
    throw ValidationError("unknown mode: " + mode);
}

json to_json(const RunConfig& c) {
  return json{{"vocab", to_json(c.vocab)},
              {"codec_seed", c.codec_seed},
              {"latent_dim", c.latent_dim},
              {"noise", to_json(c.noise)},
              {"budget", budget_to_json(c.budget)},
              {"n_clusters", c.n_clusters},
              {"k_target", c.k_target},
              {"data_seed", c.data_seed},
              {"max_groups", c.max_groups},
              {"parallelism", c.parallelism},
              {"hidden", c.hidden},
              {"hidden_layers", c.hidden_layers},
              {"pretrain", pretrain_to_json(c.pretrain)},
              {"corpus_reps", c.corpus_reps},
              {"train", train_to_json(c.train)},
              {"mode", c.mode},
              {"h", h_to_json(c.h)},
              {"eval_prompts", c.eval_prompts},
              {"samples_per_prompt", c.samples_per_prompt},
              {"candidate_limit", c.candidate_limit},
              {"eval_seed", c.eval_seed},
              {"out_dir", c.out_dir}};
}

RunConfig run_config_from_json(const json& j) {
  return overlay_config(RunConfig{}, j);
}

RunConfig overlay_config(const RunConfig& base, const json& j) {
  if (!j.is_object()) throw ValidationError("config must be a JSON object");
  RunConfig c = base;
  for (const auto& [key, value] : j.items()) {
    if (key == "vocab")
      c.vocab = vocab_from_json(value);
    else if (key == "codec_seed")
      c.codec_seed = value.get<std::uint64_t>();
    else if (key == "latent_dim")
      c.latent_dim = value.get<int>();
    else if (key == "noise")
      c.noise = profile_from_json(value);
    else if (key == "budget")
      c.budget = budget_from_json(value);
    else if (key == "n_clusters")
      c.n_clusters = value.get<int>();
    else if (key == "k_target")
      c.k_target = value.get<int>();
    else if (key == "data_seed")
      c.data_seed = value.get<std::uint64_t>();
    else if (key == "max_groups")
      c.max_groups = value.get<int>();
    else if (key == "parallelism")
      c.parallelism = value.get<int>();
    else if (key == "hidden")
      c.hidden = value.get<int>();
    else if (key == "hidden_layers")
      c.hidden_layers = value.get<int>();
    else if (key == "pretrain")
      c.pretrain = pretrain_from_json(value);
    else if (key == "corpus_reps")
      c.corpus_reps = value.get<int>();
    else if (key == "train")
      c.train = train_from_json(value);
    else if (key == "mode")
      c.mode = value.get<std::string>();
    else if (key == "h")
      c.h = h_from_json(value);
    else if (key == "eval_prompts")
      c.eval_prompts = value.get<int>();
    else if (key == "samples_per_prompt")
      c.samples_per_prompt = value.get<int>();
    else if (key == "candidate_limit")
      c.candidate_limit = value.get<int>();
    else if (key == "eval_seed")
      c.eval_seed = value.get<std::uint64_t>();
    else if (key == "out_dir")
      c.out_dir = value.get<std::string>();
    else
      throw ValidationError("unknown config key: " + key);
  }
  return c;
}

RunConfig profile_config(const std::string& name) {
  RunConfig c;
  if (name == "desk") {
    c.n_clusters = 50;
    c.k_target = 5;
    c.train.steps = 2000;
    c.pretrain.steps = 2000;
  } else if (name == "paper-defaults") {
    c.n_clusters = 725;
    c.k_target = 10;
    c.train.beta = 100.0;
    c.train.pairs_per_batch = 64;
    c.train.steps = 2000;
    c.pretrain.steps = 4000;
  } else {
    throw ValidationError("unknown profile: " + name);
  }
  return c;
}

std::uint64_t file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open for hashing: " + path);
  std::uint64_t h = 1469598103934665603ULL;
  char buf[4096];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ULL;
    }
  }
  return h;
}

std::string write_run_manifest(const RunConfig& config,
                               const std::string& subcommand) {
  std::filesystem::create_directories(config.out_dir);
  std::string path = config.out_dir + "/run_manifest.json";
  nlohmann::ordered_json m;
  m["version"] = 1;
  m["subcommand"] = subcommand;
  m["config"] = to_json(config);
  m["artifacts"] = json::object();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << m.dump(2) << "\n";
  if (!out) throw NumericError("failed to write " + path);
  return path;
}

void record_artifacts(const std::string& manifest_path,
                      const std::vector<std::string>& artifact_paths) {
  std::ifstream in(manifest_path, std::ios::binary);
  if (!in) throw NotFoundError("missing manifest: " + manifest_path);
  nlohmann::ordered_json m = nlohmann::ordered_json::parse(in);
  for (const std::string& p : artifact_paths) {
    std::string name = std::filesystem::path(p).filename().string();
    m["artifacts"][name] = json{{"path", p}, {"fnv1a64", file_hash(p)}};
  }
  std::ofstream out(manifest_path, std::ios::binary | std::ios::trunc);
  out << m.dump(2) << "\n";
}

}  // namespace apo
