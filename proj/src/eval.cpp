#include "apo/eval.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "apo/agents.hpp"
#include "apo/rng.hpp"

namespace apo {

namespace {

void classify(const Discrepancy& d, CategoryCounts& c) {
  switch (d.kind) {
    case Discrepancy::Kind::MissingGroup:
    case Discrepancy::Kind::ExtraGroup:
      ++c.presence;
      break;
    case Discrepancy::Kind::WrongCount:
      ++c.count;
      break;
    case Discrepancy::Kind::WrongColor:
    case Discrepancy::Kind::WrongSize:
      ++c.attribute;
      break;
    case Discrepancy::Kind::MissingRelation:
    case Discrepancy::Kind::ExtraRelation:
      ++c.relation;
      break;
  }
}

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

double sq_error(const std::vector<double>& eps,
                const std::vector<double>& eps_hat) {
  double s = 0;
  for (size_t i = 0; i < eps.size(); ++i) {
    double r = eps[i] - eps_hat[i];
    s += r * r;
  }
  return s;
}

}  // namespace

std::vector<Scene> near_miss_candidates(const Scene& truth,
                                        const Vocabulary& vocab, int limit,
                                        std::uint64_t seed) {
  Scene canon = canonicalize(truth, vocab);
  std::vector<Scene> out{canon};
  std::set<std::string> seen{packed_key(canon, vocab)};
  std::vector<Scene> misses;
  for (const AtomicEdit& e : enumerate_edits(canon, vocab)) {
    Scene s = apply_edit(canon, e, vocab);
    if (seen.insert(packed_key(s, vocab)).second) misses.push_back(std::move(s));
  }
  if (limit > 0 && static_cast<int>(misses.size()) > limit - 1) {
    DetRng rng(seed, 0x6d697373ULL);
    for (int i = 0; i < limit - 1; ++i)
      std::swap(misses[i], misses[i + rng.uniform_int(misses.size() - i)]);
    misses.resize(limit - 1);
  }
  out.insert(out.end(), misses.begin(), misses.end());
  return out;
}

int detail_count(const Scene& scene) {
  int n = static_cast<int>(scene.groups.size()) * 3 +
          static_cast<int>(scene.relations.size());
  return std::max(n, 1);
}

EvalReport compositional_accuracy(const SamplerFn& sampler, const Codec& codec,
                                  const Vocabulary& vocab,
                                  const std::vector<Prompt>& prompts,
                                  const std::vector<std::vector<Scene>>& candidates,
                                  int samples_per_prompt, std::uint64_t seed) {
  if (prompts.empty())
    throw ValidationError("compositional_accuracy: no prompts");
  if (candidates.size() != prompts.size())
    throw ValidationError(
        "compositional_accuracy: one candidate set per prompt required");
  if (samples_per_prompt < 1)
    throw ValidationError("compositional_accuracy: need at least one sample");

  EvalReport report;
  report.prompts = static_cast<int>(prompts.size());
  report.samples_per_prompt = samples_per_prompt;
  report.seed = seed;

  long total = 0, exact = 0;
  double detail_sum = 0;
  for (size_t i = 0; i < prompts.size(); ++i) {
    const std::vector<Scene>& cands = candidates[i];
    if (cands.empty())
      throw ValidationError("compositional_accuracy: empty candidate set");
    std::vector<std::vector<double>> cand_emb;
    cand_emb.reserve(cands.size());
    for (const Scene& c : cands) cand_emb.push_back(codec.embed(c));

    std::vector<double> cond = codec.embed(prompts[i].scene);
    int details = detail_count(prompts[i].scene);
    for (int r = 0; r < samples_per_prompt; ++r) {
      std::vector<double> out = sampler(cond, DetRng::mix(seed, i, r));
      size_t best = 0;
      double best_d = sq_dist(out, cand_emb[0]);
      for (size_t k = 1; k < cand_emb.size(); ++k) {
        double d = sq_dist(out, cand_emb[k]);
        if (d < best_d) {
          best_d = d;
          best = k;
        }
      }
      auto diff = scene_diff(prompts[i].scene, cands[best], vocab);
      ++total;
      if (diff.empty()) ++exact;
      detail_sum += std::max(
          0.0, 1.0 - static_cast<double>(diff.size()) / details);
      for (const Discrepancy& d : diff) classify(d, report.discrepancies);
    }
  }
  report.exact_match = static_cast<double>(exact) / total;
  report.per_detail = detail_sum / total;
  return report;
}

EvalReport compositional_accuracy(const TrainState& state, const Codec& codec,
                                  const Vocabulary& vocab,
                                  const std::vector<Prompt>& prompts,
                                  const std::vector<std::vector<Scene>>& candidates,
                                  int samples_per_prompt, std::uint64_t seed) {
  SamplerFn fn = [&state](const std::vector<double>& cond, std::uint64_t s) {
    return sample(state, cond, s);
  };
  return compositional_accuracy(fn, codec, vocab, prompts, candidates,
                                samples_per_prompt, seed);
}

double pair_margin(const TrainState& state, const TrainPair& pair, int t,
                   const std::vector<double>& eps_pos,
                   const std::vector<double>& eps_neg) {
  const NoiseSchedule& s = state.schedule;
  auto x_pos = forward_noise(pair.preferred, t, eps_pos, s);
  auto x_neg = forward_noise(pair.dispreferred, t, eps_neg, s);
  auto th_pos =
      predict_eps(state.mlp, state.params, x_pos, pair.condition, t, s.T);
  auto th_neg =
      predict_eps(state.mlp, state.params, x_neg, pair.condition, t, s.T);
  auto ref_pos =
      predict_eps(state.mlp, state.ref_params, x_pos, pair.condition, t, s.T);
  auto ref_neg =
      predict_eps(state.mlp, state.ref_params, x_neg, pair.condition, t, s.T);
  double l_pos = sq_error(eps_pos, th_pos) - sq_error(eps_pos, ref_pos);
  double l_neg = sq_error(eps_neg, th_neg) - sq_error(eps_neg, ref_neg);
  if (!std::isfinite(l_pos) || !std::isfinite(l_neg))
    throw NumericError("pair_margin: non-finite excess error");
  return -(l_pos - l_neg);
}

MarginStats preference_margin(const TrainState& state,
                              const std::vector<TrainPair>& pairs,
                              std::uint64_t seed, int draws_per_pair) {
  if (pairs.empty()) throw ValidationError("preference_margin: no pairs");
  if (draws_per_pair < 1)
    throw ValidationError("preference_margin: need at least one draw");
  MarginStats stats;
  DetRng rng(seed, 0x6d61726dULL);
  double sum = 0, sumsq = 0;
  double positive = 0;  // exact ties count as half
  long total = 0;
  int latent = state.mlp.latent;
  for (const TrainPair& p : pairs) {
    for (int d = 0; d < draws_per_pair; ++d) {
      int t = 1 + static_cast<int>(rng.uniform_int(state.schedule.T));
      std::vector<double> ep(latent), en(latent);
      for (double& e : ep) e = rng.gaussian();
      for (double& e : en) e = rng.gaussian();
      double m = pair_margin(state, p, t, ep, en);
      sum += m;
      sumsq += m * m;
      positive += m > 0 ? 1.0 : (m == 0 ? 0.5 : 0.0);
      ++total;
    }
  }
  stats.draws = static_cast<int>(total);
  stats.mean = sum / total;
  stats.stddev = std::sqrt(std::max(0.0, sumsq / total - stats.mean * stats.mean));
  stats.positive_fraction = positive / total;
  return stats;
}

namespace {

AblationRow run_variant(const std::string& name, LossMode mode,
                        const Dataset& data, const Codec& codec,
                        const TrainState& base, const TrainConfig& cfg,
                        const HFunction& h, const AblationSetup& setup,
                        const Vocabulary& vocab) {
  AblationRow row;
  row.name = name;
  TrainState st = base;
  try {
    train_on_dataset(st, mode, data, codec, cfg, h);
    row.report = compositional_accuracy(st, codec, vocab, setup.eval_prompts,
                                        setup.candidates,
                                        setup.samples_per_prompt,
                                        setup.eval_seed);
  } catch (const NumericError& e) {
    row.diverged = true;
    row.error = e.what();
  }
  return row;
}

void rank_rows(std::vector<AblationRow>& rows) {
  std::stable_sort(rows.begin(), rows.end(),
                   [](const AblationRow& a, const AblationRow& b) {
                     if (a.diverged != b.diverged) return !a.diverged;
                     return a.report.exact_match > b.report.exact_match;
                   });
}

Vocabulary vocab_of(const Codec& codec) { return codec.vocab(); }

}  // namespace

AblationReport ablation_strategies(const Dataset& data, const Codec& codec,
                                   const TrainState& base,
                                   const AblationSetup& setup) {
  Vocabulary vocab = vocab_of(codec);
  AblationReport report;
  report.base_hash = params_hash(base.params);
  for (LossMode mode : {LossMode::APO, LossMode::DPO, LossMode::BatchFT,
                        LossMode::StandardFT})
    report.rows.push_back(run_variant(loss_mode_name(mode), mode, data, codec,
                                      base, setup.train, setup.h, setup,
                                      vocab));
  rank_rows(report.rows);
  return report;
}

AblationReport ablation_h(const Dataset& data, const Codec& codec,
                          const TrainState& base, const AblationSetup& setup) {
  Vocabulary vocab = vocab_of(codec);
  AblationReport report;
  report.base_hash = params_hash(base.params);
  struct Variant {
    std::string name;
    HFunction::Direction dir;
    HFunction::Placement place;
  };
  const Variant variants[] = {
      {"inc-beta", HFunction::Direction::Increasing,
       HFunction::Placement::ScaleBeta},
      {"dec-beta", HFunction::Direction::Decreasing,
       HFunction::Placement::ScaleBeta},
      {"inc-loss", HFunction::Direction::Increasing,
       HFunction::Placement::ScaleLoss},
      {"dec-loss", HFunction::Direction::Decreasing,
       HFunction::Placement::ScaleLoss},
  };
  for (const Variant& v : variants) {
    HFunction h = setup.h;
    h.direction = v.dir;
    h.placement = v.place;
    AblationRow row = run_variant(v.name, LossMode::APO, data, codec, base,
                                  setup.train, h, setup, vocab);
    for (const PreferencePair& p : data.pairs)
      ++row.effective_beta_histogram[static_cast<int>(
          std::llround(h_weight(p.distance, h) * setup.train.beta))];
    report.rows.push_back(std::move(row));
  }
  rank_rows(report.rows);
  return report;
}

std::string render_ablation_table(const AblationReport& report) {
  std::ostringstream out;
  out << "variant      exact   per-detail  status\n";
  for (const AblationRow& r : report.rows) {
    out << r.name;
    for (size_t i = r.name.size(); i < 13; ++i) out << ' ';
    char buf[64];
    if (r.diverged) {
      out << "-       -           diverged: " << r.error;
    } else {
      std::snprintf(buf, sizeof(buf), "%.4f  %.4f      ok",
                    r.report.exact_match, r.report.per_detail);
      out << buf;
    }
    out << "\n";
  }
  return out.str();
}

std::vector<Prompt> held_out_prompts(const Dataset& data,
                                     const Vocabulary& vocab, int n,
                                     std::uint64_t seed, int max_groups) {
  std::set<std::string> used;
  for (const Cluster& c : data.clusters)
    used.insert(packed_key(canonicalize(c.prompt.scene, vocab), vocab));
  std::vector<Prompt> out;
  std::set<std::string> chosen;
  for (int round = 0; round < 32 && static_cast<int>(out.size()) < n; ++round) {
    auto batch = sample_prompts(vocab, 4 * n + 16,
                                DetRng::mix(seed, 0x686f6c64ULL, round),
                                max_groups);
    for (const Prompt& p : batch) {
      if (static_cast<int>(out.size()) >= n) break;
      std::string key = packed_key(canonicalize(p.scene, vocab), vocab);
      if (used.count(key) || !chosen.insert(key).second) continue;
      out.push_back(p);
    }
  }
  if (static_cast<int>(out.size()) < n)
    throw ValidationError(
        "held_out_prompts: vocabulary too small to find disjoint prompts");
  return out;
}

}  // namespace apo
