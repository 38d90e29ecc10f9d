#include "apo/dataset.hpp"

#include <atomic>
#include <filesystem>
#include <fstream>
#include <thread>

#include "apo/json_io.hpp"
#include "apo/tools_http.hpp"

namespace apo {

namespace {

json to_json_member(const PairMember& m) {
  return {{"image_id", m.image_id},
          {"scene", to_json(m.scene)},
          {"embedding", m.embedding}};
}

PairMember member_from_json(const json& j) {
  PairMember m;
  m.image_id = j.at("image_id").get<std::string>();
  m.scene = scene_from_json(j.at("scene"));
  m.embedding = j.at("embedding").get<std::vector<double>>();
  return m;
}

json to_json_source(const PairSource& s) {
  if (s.kind == PairSource::Kind::Anchor)
    return {{"kind", "anchor"}, {"a", s.a}};
  return {{"kind", "intra"}, {"a", s.a}, {"b", s.b}};
}

PairSource source_from_json(const json& j) {
  PairSource s;
  std::string kind = j.at("kind").get<std::string>();
  if (kind == "anchor") {
    s.kind = PairSource::Kind::Anchor;
    s.a = j.at("a").get<int>();
  } else if (kind == "intra") {
    s.kind = PairSource::Kind::Intra;
    s.a = j.at("a").get<int>();
    s.b = j.at("b").get<int>();
  } else {
    throw ValidationError("unknown pair source kind: " + kind);
  }
  return s;
}

json to_json_pair(const PreferencePair& p) {
  return {{"condition", to_json(p.condition)},
          {"preferred", to_json_member(p.preferred)},
          {"dispreferred", to_json_member(p.dispreferred)},
          {"distance", p.distance},
          {"source", to_json_source(p.source)}};
}

PreferencePair pair_from_json(const json& j) {
  PreferencePair p;
  p.condition = prompt_from_json(j.at("condition"));
  p.preferred = member_from_json(j.at("preferred"));
  p.dispreferred = member_from_json(j.at("dispreferred"));
  p.distance = j.at("distance").get<int>();
  p.source = source_from_json(j.at("source"));
  return p;
}

json to_json_cluster(const Cluster& c) {
  json negs = json::array();
  for (const NegativeRecord& n : c.negatives)
    negs.push_back({{"prompt", to_json(n.prompt)},
                    {"image_id", n.image_id},
                    {"scene", to_json(n.scene)},
                    {"distance", n.distance}});
  return {{"prompt", to_json(c.prompt)},
          {"positive_image", c.positive_image},
          {"positive_scene", to_json(c.positive_scene)},
          {"negatives", negs}};
}

Cluster cluster_from_json(const json& j) {
  Cluster c;
  c.prompt = prompt_from_json(j.at("prompt"));
  c.positive_image = j.at("positive_image").get<std::string>();
  c.positive_scene = scene_from_json(j.at("positive_scene"));
  for (const json& n : j.at("negatives")) {
    NegativeRecord rec;
    rec.prompt = prompt_from_json(n.at("prompt"));
    rec.image_id = n.at("image_id").get<std::string>();
    rec.scene = scene_from_json(n.at("scene"));
    rec.distance = n.at("distance").get<int>();
    c.negatives.push_back(std::move(rec));
  }
  return c;
}

json to_json_trace(const AgentTrace& t) {
  json steps = json::array();
  for (const TraceStep& s : t.steps)
    steps.push_back({{"tool", s.tool},
                     {"request", s.request},
                     {"response", s.response},
                     {"note", s.note}});
  return {{"steps", steps}, {"counters", to_json(t.counters)}};
}

AgentTrace trace_from_json(const json& j) {
  AgentTrace t;
  for (const json& s : j.at("steps")) {
    TraceStep step;
    step.tool = s.at("tool").get<std::string>();
    step.request = s.at("request").get<std::string>();
    step.response = s.at("response").get<std::string>();
    step.note = s.at("note").get<std::string>();
    t.steps.push_back(std::move(step));
  }
  t.counters = stats_from_json(j.at("counters"));
  return t;
}

json to_json_manifest(const DatasetManifest& m) {
  return {{"version", m.version},
          {"vocab_hash", m.vocab_hash},
          {"codec_seed", m.codec_seed},
          {"cluster_count", m.cluster_count},
          {"negative_count", m.negative_count},
          {"dropped_count", m.dropped_count},
          {"failed_clusters", m.failed_clusters},
          {"tool_calls", to_json(m.tool_calls)},
          {"creation_seed", m.creation_seed}};
}

DatasetManifest manifest_from_json(const json& j) {
  DatasetManifest m;
  m.version = j.at("version").get<int>();
  m.vocab_hash = j.at("vocab_hash").get<std::uint64_t>();
  m.codec_seed = j.at("codec_seed").get<std::uint64_t>();
  m.cluster_count = j.at("cluster_count").get<int>();
  m.negative_count = j.at("negative_count").get<int>();
  m.dropped_count = j.at("dropped_count").get<int>();
  m.failed_clusters = j.value("failed_clusters", 0);
  m.tool_calls = stats_from_json(j.at("tool_calls"));
  m.creation_seed = j.at("creation_seed").get<std::uint64_t>();
  return m;
}

std::vector<json> read_jsonl(const std::string& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw ValidationError(std::string("cannot open ") + path);
  std::vector<json> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded())
      throw ValidationError(std::string(what) + " line " +
                            std::to_string(line_no) + ": malformed JSON");
    out.push_back(std::move(j));
  }
  return out;
}

template <typename Fn>
auto parse_line(const char* what, int line_no, Fn&& fn) {
  try {
    return fn();
  } catch (const json::exception& e) {
    throw ValidationError(std::string(what) + " line " +
                          std::to_string(line_no) + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError(std::string(what) + " line " +
                          std::to_string(line_no) + ": " + e.what());
  }
}

}  // namespace

std::vector<PreferencePair> expand_pairs(const Cluster& cluster,
                                         const Vocabulary& vocab,
                                         const Codec& codec, int search_depth) {
  std::vector<PreferencePair> out;
  std::vector<std::string> seen;
  auto key_of = [&](const PreferencePair& p) {
    return packed_key(canonicalize(p.condition.scene, vocab), vocab) + "|" +
           packed_key(canonicalize(p.preferred.scene, vocab), vocab) + "|" +
           packed_key(canonicalize(p.dispreferred.scene, vocab), vocab);
  };
  auto push = [&](PreferencePair p) {
    std::string key = key_of(p);
    if (std::find(seen.begin(), seen.end(), key) != seen.end()) return;
    seen.push_back(key);
    out.push_back(std::move(p));
  };

  PairMember positive{cluster.positive_image, cluster.positive_scene,
                      codec.embed(cluster.positive_scene)};
  for (size_t k = 0; k < cluster.negatives.size(); ++k) {
    const NegativeRecord& n = cluster.negatives[k];
    PreferencePair p;
    p.condition = cluster.prompt;
    p.preferred = positive;
    p.dispreferred = {n.image_id, n.scene, codec.embed(n.scene)};
    p.distance = n.distance;
    p.source = {PairSource::Kind::Anchor, static_cast<int>(k), 0};
    push(std::move(p));
  }

  DistanceSearcher searcher(vocab, search_depth);
  for (size_t a = 0; a < cluster.negatives.size(); ++a)
    for (size_t b = 0; b < cluster.negatives.size(); ++b) {
      if (a == b) continue;
      const NegativeRecord& na = cluster.negatives[a];
      const NegativeRecord& nb = cluster.negatives[b];
      if (!pair_filter({na.prompt, na.scene}, {nb.prompt, nb.scene}, vocab))
        continue;
      PreferencePair p;
      p.condition = na.prompt;
      p.preferred = {na.image_id, na.scene, codec.embed(na.scene)};
      p.dispreferred = {nb.image_id, nb.scene, codec.embed(nb.scene)};
      p.distance = searcher.distance(na.scene, nb.scene).distance;
      p.source = {PairSource::Kind::Intra, static_cast<int>(a),
                  static_cast<int>(b)};
      if (p.distance < 1) continue;
      push(std::move(p));
    }
  return out;
}

void write_dataset(const Dataset& dataset, const std::string& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir + "/manifest.json");
    out << to_json_manifest(dataset.manifest).dump(2) << "\n";
  }
  {
    std::ofstream out(dir + "/clusters.jsonl");
    for (const Cluster& c : dataset.clusters)
      out << to_json_cluster(c).dump() << "\n";
  }
  {
    std::ofstream out(dir + "/pairs.jsonl");
    for (const PreferencePair& p : dataset.pairs)
      out << to_json_pair(p).dump() << "\n";
  }
  {
    std::ofstream out(dir + "/traces.jsonl");
    for (size_t i = 0; i < dataset.clusters.size(); ++i)
      for (const auto& [agent, trace] : dataset.clusters[i].traces)
        out << json{{"cluster", static_cast<int>(i)},
                    {"agent", agent},
                    {"trace", to_json_trace(trace)}}
                   .dump()
            << "\n";
  }
}

Dataset read_dataset(const std::string& dir) {
  Dataset d;
  {
    std::ifstream in(dir + "/manifest.json");
    if (!in) throw ValidationError("cannot open " + dir + "/manifest.json");
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded())
      throw ValidationError("manifest.json: malformed JSON");
    d.manifest = parse_line("manifest.json", 1, [&] { return manifest_from_json(j); });
  }
  {
    auto lines = read_jsonl(dir + "/clusters.jsonl", "clusters.jsonl");
    for (size_t i = 0; i < lines.size(); ++i)
      d.clusters.push_back(parse_line("clusters.jsonl", static_cast<int>(i) + 1,
                                      [&] { return cluster_from_json(lines[i]); }));
  }
  {
    auto lines = read_jsonl(dir + "/pairs.jsonl", "pairs.jsonl");
    for (size_t i = 0; i < lines.size(); ++i)
      d.pairs.push_back(parse_line("pairs.jsonl", static_cast<int>(i) + 1,
                                   [&] { return pair_from_json(lines[i]); }));
  }
  if (std::filesystem::exists(dir + "/traces.jsonl")) {
    auto lines = read_jsonl(dir + "/traces.jsonl", "traces.jsonl");
    for (size_t i = 0; i < lines.size(); ++i)
      parse_line("traces.jsonl", static_cast<int>(i) + 1, [&] {
        int c = lines[i].at("cluster").get<int>();
        if (c >= 0 && c < static_cast<int>(d.clusters.size()))
          d.clusters[c].traces[lines[i].at("agent").get<std::string>()] =
              trace_from_json(lines[i].at("trace"));
        return 0;
      });
  }
  // Manifest consistency with the records on disk.
  int negatives = 0;
  for (const Cluster& c : d.clusters)
    negatives += static_cast<int>(c.negatives.size());
  if (d.manifest.cluster_count != static_cast<int>(d.clusters.size()))
    throw ValidationError("manifest cluster_count disagrees with clusters.jsonl");
  if (d.manifest.negative_count != negatives)
    throw ValidationError("manifest negative_count disagrees with clusters.jsonl");
  return d;
}

DatasetStats dataset_stats(const Dataset& dataset) {
  DatasetStats s;
  s.clusters = static_cast<int>(dataset.clusters.size());
  s.tool_calls = dataset.manifest.tool_calls;
  bool first = true;
  long total = 0;
  for (const Cluster& c : dataset.clusters) {
    int n = static_cast<int>(c.negatives.size());
    total += n;
    if (first || n < s.negatives_min) s.negatives_min = n;
    if (first || n > s.negatives_max) s.negatives_max = n;
    first = false;
    for (const NegativeRecord& rec : c.negatives)
      ++s.distance_histogram[rec.distance];
  }
  if (s.clusters > 0)
    s.negatives_mean = static_cast<double>(total) / s.clusters;
  for (const PreferencePair& p : dataset.pairs)
    (p.source.kind == PairSource::Kind::Anchor ? s.anchor_pairs
                                               : s.intra_pairs)++;
  return s;
}

DatasetManifest orchestrate_dataset(const std::vector<Prompt>& prompts,
                                    ToolInterface& tools,
                                    const Vocabulary& vocab, const Codec& codec,
                                    const OrchestratorConfig& config,
                                    int parallelism,
                                    const std::string& out_dir) {
  if (prompts.empty()) throw ValidationError("dataset run needs >= 1 prompt");
  if (parallelism < 1) parallelism = 1;

  std::vector<ClusterResult> results(prompts.size());
  std::atomic<size_t> next{0};
  auto worker = [&] {
    while (true) {
      size_t i = next.fetch_add(1);
      if (i >= prompts.size()) return;
      results[i] =
          orchestrate_cluster(prompts[i], tools, vocab, config, i);
    }
  };
  if (parallelism == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < parallelism; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  Dataset dataset;
  DatasetManifest& m = dataset.manifest;
  m.vocab_hash = vocab.hash();
  m.codec_seed = codec.seed();
  m.creation_seed = config.seed;
  std::vector<const ClusterResult*> failures;
  for (const ClusterResult& r : results) {
    m.dropped_count += r.dropped;
    for (const auto& [agent, trace] : r.cluster.traces) {
      m.tool_calls.imggen_calls += trace.counters.imggen_calls;
      m.tool_calls.editor_calls += trace.counters.editor_calls;
      m.tool_calls.vqa_calls += trace.counters.vqa_calls;
    }
    if (!r.success) {
      ++m.failed_clusters;
      failures.push_back(&r);
      continue;
    }
    dataset.clusters.push_back(r.cluster);
    m.negative_count += static_cast<int>(r.cluster.negatives.size());
    auto pairs = expand_pairs(r.cluster, vocab, codec, config.search_depth);
    dataset.pairs.insert(dataset.pairs.end(), pairs.begin(), pairs.end());
  }
  m.cluster_count = static_cast<int>(dataset.clusters.size());

  write_dataset(dataset, out_dir);
  // Failed cluster attempts keep their traces for tool-call accounting.
  {
    std::ofstream out(out_dir + "/traces.jsonl", std::ios::app);
    for (const ClusterResult* r : failures)
      for (const auto& [agent, trace] : r->cluster.traces)
        out << json{{"cluster", -1},
                    {"agent", agent},
                    {"trace", to_json_trace(trace)}}
                   .dump()
            << "\n";
  }
  return m;
}

}  // namespace apo
