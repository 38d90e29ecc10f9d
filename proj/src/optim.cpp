#include "apo/optim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

namespace apo {

using json = nlohmann::ordered_json;

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

double bt_probability(double r_pos, double r_neg) {
  if (!std::isfinite(r_pos) || !std::isfinite(r_neg))
    throw NumericError("bt_probability: non-finite utility");
  return sigmoid(r_pos - r_neg);
}

void HFunction::validate() const {
  if (!(h_min > 0) || !(h_min <= h_max))
    throw ValidationError("h function: need 0 < h_min <= h_max");
  if (!(d_lo <= d_hi)) throw ValidationError("h function: need d_lo <= d_hi");
}

HFunction HFunction::constant_one() {
  HFunction h;
  h.h_min = 1.0;
  h.h_max = 1.0;
  h.d_lo = 1.0;
  h.d_hi = 1.0;
  return h;
}

double h_weight(int d, const HFunction& h) {
  h.validate();
  if (h.d_lo == h.d_hi) return h.h_max;
  double x = std::clamp(static_cast<double>(d), h.d_lo, h.d_hi);
  double u = (x - h.d_lo) / (h.d_hi - h.d_lo);
  if (h.direction == HFunction::Direction::Decreasing) u = 1.0 - u;
  return h.h_min + u * (h.h_max - h.h_min);
}

std::string loss_mode_name(LossMode mode) {
  switch (mode) {
    case LossMode::StandardFT: return "ft";
    case LossMode::BatchFT: return "batch-ft";
    case LossMode::DPO: return "dpo";
    case LossMode::APO: return "apo";
  }
  throw ValidationError("unknown loss mode");
}

LossMode loss_mode_from_name(const std::string& name) {
  if (name == "ft") return LossMode::StandardFT;
  if (name == "batch-ft") return LossMode::BatchFT;
  if (name == "dpo") return LossMode::DPO;
  if (name == "apo") return LossMode::APO;
  throw ValidationError("unknown loss mode: " + name);
}

void TrainConfig::validate() const {
  if (!(beta > 0)) throw ValidationError("train config: beta must be positive");
  if (!(lr > 0)) throw ValidationError("train config: lr must be positive");
  if (!(clip_norm > 0))
    throw ValidationError("train config: clip norm must be positive");
  if (pairs_per_batch < 1)
    throw ValidationError("train config: batch size must be >= 1");
  if (steps < 0) throw ValidationError("train config: steps must be >= 0");
  if (log_interval < 1)
    throw ValidationError("train config: log interval must be >= 1");
}

TrainPair make_train_pair(const PreferencePair& pair, const Codec& codec) {
  TrainPair t;
  t.condition = codec.embed(pair.condition.scene);
  t.preferred = pair.preferred.embedding.size() ==
                        static_cast<size_t>(codec.latent_dim())
                    ? pair.preferred.embedding
                    : codec.embed(pair.preferred.scene);
  t.dispreferred = pair.dispreferred.embedding.size() ==
                           static_cast<size_t>(codec.latent_dim())
                       ? pair.dispreferred.embedding
                       : codec.embed(pair.dispreferred.scene);
  t.distance = pair.distance;
  return t;
}

std::vector<TrainPair> make_train_pairs(const Dataset& data,
                                        const Codec& codec) {
  std::vector<TrainPair> out;
  out.reserve(data.pairs.size());
  for (const PreferencePair& p : data.pairs)
    out.push_back(make_train_pair(p, codec));
  return out;
}

HFunction fit_h_bounds(const std::vector<TrainPair>& pairs, HFunction base) {
  if (pairs.empty()) return base;
  int lo = pairs[0].distance, hi = pairs[0].distance;
  for (const TrainPair& p : pairs) {
    lo = std::min(lo, p.distance);
    hi = std::max(hi, p.distance);
  }
  base.d_lo = lo;
  base.d_hi = hi;
  return base;
}

namespace {

// Numerically stable softplus(u) = log(1 + e^u) = -log(sigma(-u)).
double softplus(double u) {
  return std::max(u, 0.0) + std::log1p(std::exp(-std::abs(u)));
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

double preference_loss_value(double l_pos, double l_neg, double h, double beta,
                             int T, HFunction::Placement placement) {
  double diff = l_pos - l_neg;
  if (!std::isfinite(diff))
    throw NumericError("pair loss: non-finite excess-error difference");
  if (placement == HFunction::Placement::ScaleBeta)
    return softplus(h * beta * T * diff);
  return h * softplus(beta * T * diff);
}

namespace {

PairLossResult pair_loss_impl(const TrainState& state, const TrainPair& pair,
                              int t, const std::vector<double>& eps_pos,
                              const std::vector<double>& eps_neg,
                              const TrainConfig& cfg, const HFunction& h,
                              bool want_grad) {
  cfg.validate();
  if (state.ref_params.empty())
    throw ValidationError("pair loss: state has no frozen reference");
  const NoiseSchedule& s = state.schedule;
  if (t < 1 || t > s.T) throw ValidationError("pair loss: t out of range");

  auto x_pos = forward_noise(pair.preferred, t, eps_pos, s);
  auto x_neg = forward_noise(pair.dispreferred, t, eps_neg, s);

  MlpCache cache_pos, cache_neg;
  auto th_pos = predict_eps(state.mlp, state.params, x_pos, pair.condition, t,
                            s.T, want_grad ? &cache_pos : nullptr);
  auto th_neg = predict_eps(state.mlp, state.params, x_neg, pair.condition, t,
                            s.T, want_grad ? &cache_neg : nullptr);
  auto ref_pos =
      predict_eps(state.mlp, state.ref_params, x_pos, pair.condition, t, s.T);
  auto ref_neg =
      predict_eps(state.mlp, state.ref_params, x_neg, pair.condition, t, s.T);

  double l_pos = sq_error(eps_pos, th_pos) - sq_error(eps_pos, ref_pos);
  double l_neg = sq_error(eps_neg, th_neg) - sq_error(eps_neg, ref_neg);
  if (!std::isfinite(l_pos))
    throw NumericError("pair loss: non-finite preferred excess error");
  if (!std::isfinite(l_neg))
    throw NumericError("pair loss: non-finite dispreferred excess error");

  double hd = h_weight(pair.distance, h);
  double diff = l_pos - l_neg;

  PairLossResult out;
  out.loss = preference_loss_value(l_pos, l_neg, hd, cfg.beta, s.T, h.placement);
  if (!std::isfinite(out.loss))
    throw NumericError("pair loss: non-finite loss value");
  out.margin = -diff;
  out.implicit_score = l_pos < l_neg ? 1.0 : (l_pos == l_neg ? 0.5 : 0.0);

  if (want_grad) {
    // d(loss)/d(diff); for ScaleBeta the weight sits inside the sigmoid
    // argument, for ScaleLoss outside the whole term.
    double dldiff =
        h.placement == HFunction::Placement::ScaleBeta
            ? hd * cfg.beta * s.T * sigmoid(hd * cfg.beta * s.T * diff)
            : hd * cfg.beta * s.T * sigmoid(cfg.beta * s.T * diff);
    out.grad.assign(state.params.size(), 0.0);
    std::vector<double> dout(state.mlp.latent);
    for (int i = 0; i < state.mlp.latent; ++i)
      dout[i] = dldiff * 2.0 * (th_pos[i] - eps_pos[i]);
    mlp_backward(state.mlp, state.params, cache_pos, dout, out.grad);
    for (int i = 0; i < state.mlp.latent; ++i)
      dout[i] = -dldiff * 2.0 * (th_neg[i] - eps_neg[i]);
    mlp_backward(state.mlp, state.params, cache_neg, dout, out.grad);
  }
  return out;
}

}  // namespace

PairLossResult apo_pair_loss(const TrainState& state, const TrainPair& pair,
                             int t, const std::vector<double>& eps_pos,
                             const std::vector<double>& eps_neg,
                             const TrainConfig& cfg, const HFunction& h) {
  return pair_loss_impl(state, pair, t, eps_pos, eps_neg, cfg, h, true);
}

PairLossResult dpo_pair_loss(const TrainState& state, const TrainPair& pair,
                             int t, const std::vector<double>& eps_pos,
                             const std::vector<double>& eps_neg,
                             const TrainConfig& cfg) {
  return pair_loss_impl(state, pair, t, eps_pos, eps_neg, cfg,
                        HFunction::constant_one(), true);
}

FtLossResult standard_ft_loss(const TrainState& state, const FtSample& sample,
                              int t, const std::vector<double>& eps) {
  return batch_ft_loss(state, {sample}, {t}, {eps});
}

FtLossResult batch_ft_loss(const TrainState& state,
                           const std::vector<FtSample>& batch,
                           const std::vector<int>& ts,
                           const std::vector<std::vector<double>>& eps) {
  if (batch.empty()) throw ValidationError("ft loss: empty batch");
  if (ts.size() != batch.size() || eps.size() != batch.size())
    throw ValidationError("ft loss: batch arrays must be parallel");
  const NoiseSchedule& s = state.schedule;
  FtLossResult out;
  out.grad.assign(state.params.size(), 0.0);
  double denom =
      static_cast<double>(batch.size()) * static_cast<double>(state.mlp.latent);
  for (size_t k = 0; k < batch.size(); ++k) {
    int t = ts[k];
    if (t < 1 || t > s.T) throw ValidationError("ft loss: t out of range");
    auto x_t = forward_noise(batch[k].x0, t, eps[k], s);
    MlpCache cache;
    auto eps_hat = predict_eps(state.mlp, state.params, x_t,
                               batch[k].condition, t, s.T, &cache);
    std::vector<double> dout(state.mlp.latent);
    for (int i = 0; i < state.mlp.latent; ++i) {
      double r = eps_hat[i] - eps[k][i];
      out.loss += r * r / denom;
      dout[i] = 2.0 * r / denom;
    }
    mlp_backward(state.mlp, state.params, cache, dout, out.grad);
  }
  if (!std::isfinite(out.loss))
    throw NumericError("ft loss: non-finite loss value");
  return out;
}

StepMetrics evaluate_pairs(const TrainState& state,
                           const std::vector<TrainPair>& pairs,
                           const TrainConfig& cfg, const HFunction& h,
                           std::uint64_t seed, int draws) {
  if (pairs.empty()) throw ValidationError("evaluate_pairs: no pairs");
  DetRng rng(seed, 0x6576616cULL);
  StepMetrics m;
  for (int i = 0; i < draws; ++i) {
    const TrainPair& p = pairs[rng.uniform_int(pairs.size())];
    int t = 1 + static_cast<int>(rng.uniform_int(state.schedule.T));
    std::vector<double> ep(state.mlp.latent), en(state.mlp.latent);
    for (double& e : ep) e = rng.gaussian();
    for (double& e : en) e = rng.gaussian();
    PairLossResult r = pair_loss_impl(state, p, t, ep, en, cfg, h, false);
    m.loss += r.loss / draws;
    m.margin_mean += r.margin / draws;
    m.implicit_accuracy += r.implicit_score / draws;
  }
  m.step = state.step;
  return m;
}

void dataset_ft_views(const Dataset& data, const Codec& codec, LossMode mode,
                      std::vector<FtSample>& samples,
                      std::vector<std::pair<int, int>>& clusters) {
  samples.clear();
  clusters.clear();
  for (const Cluster& c : data.clusters) {
    int begin = static_cast<int>(samples.size());
    samples.push_back(
        {codec.embed(c.prompt.scene), codec.embed(c.positive_scene)});
    if (mode == LossMode::BatchFT)
      for (const NegativeRecord& n : c.negatives)
        samples.push_back({codec.embed(n.prompt.scene), codec.embed(n.scene)});
    clusters.emplace_back(begin, static_cast<int>(samples.size()));
  }
}

namespace {

void clip_gradient(std::vector<double>& grad, double clip_norm) {
  double sq = 0;
  for (double g : grad) sq += g * g;
  if (!std::isfinite(sq)) throw NumericError("train: non-finite gradient norm");
  double norm = std::sqrt(sq);
  if (norm > clip_norm) {
    double scale = clip_norm / norm;
    for (double& g : grad) g *= scale;
  }
}

void write_metrics(const std::string& path,
                   const std::vector<StepMetrics>& log) {
  if (path.empty()) return;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("train: cannot open metrics file " + path);
  for (const StepMetrics& m : log) {
    json j;
    j["step"] = m.step;
    j["loss"] = m.loss;
    j["margin_mean"] = m.margin_mean;
    j["implicit_accuracy"] = m.implicit_accuracy;
    out << j.dump() << "\n";
  }
}

}  // namespace

std::vector<StepMetrics> train(TrainState& state, LossMode mode,
                               const std::vector<TrainPair>& pairs,
                               const std::vector<FtSample>& ft_samples,
                               const std::vector<std::pair<int, int>>& ft_clusters,
                               const TrainConfig& cfg, const HFunction& h,
                               const std::string& metrics_path,
                               const std::string& checkpoint_path) {
  cfg.validate();
  h.validate();
  if (state.ref_params.empty())
    throw ValidationError("train: state has no frozen reference");
  bool pair_mode = (mode == LossMode::DPO || mode == LossMode::APO);
  if (pair_mode && pairs.empty()) throw ValidationError("train: no pairs");
  if (!pair_mode && ft_samples.empty())
    throw ValidationError("train: no fine-tuning samples");
  if (mode == LossMode::BatchFT && ft_clusters.empty())
    throw ValidationError("train: no cluster grouping for batch fine-tuning");

  const HFunction h_eff =
      (mode == LossMode::DPO) ? HFunction::constant_one() : h;
  const std::uint64_t ref_hash = params_hash(state.ref_params);
  if (state.adam.m.size() != state.params.size()) {
    state.adam = AdamState{};
    state.adam.init(state.params.size());
  }

  DetRng shuffle_rng(cfg.seed, 0x73687566ULL);
  DetRng draw_rng(cfg.seed, 0x64726177ULL);
  std::vector<int> order(
      pair_mode ? pairs.size()
                : (mode == LossMode::BatchFT ? ft_clusters.size()
                                             : ft_samples.size()));
  std::iota(order.begin(), order.end(), 0);
  size_t cursor = order.size();  // trigger a shuffle on first use
  auto next_index = [&]() {
    if (cursor >= order.size()) {
      for (size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[shuffle_rng.uniform_int(i)]);
      cursor = 0;
    }
    return order[cursor++];
  };

  std::vector<StepMetrics> log;
  std::vector<double> grad(state.params.size());
  int latent = state.mlp.latent;

  for (int step = 0; step < cfg.steps; ++step) {
    std::fill(grad.begin(), grad.end(), 0.0);
    StepMetrics m;
    m.step = state.step;

    try {
    if (pair_mode) {
      int n = cfg.pairs_per_batch;
      for (int b = 0; b < n; ++b) {
        const TrainPair& p = pairs[next_index()];
        int t = 1 + static_cast<int>(draw_rng.uniform_int(state.schedule.T));
        std::vector<double> ep(latent), en(latent);
        for (double& e : ep) e = draw_rng.gaussian();
        for (double& e : en) e = draw_rng.gaussian();
        PairLossResult r = pair_loss_impl(state, p, t, ep, en, cfg, h_eff, true);
        for (size_t i = 0; i < grad.size(); ++i) grad[i] += r.grad[i] / n;
        m.loss += r.loss / n;
        m.margin_mean += r.margin / n;
        m.implicit_accuracy += r.implicit_score / n;
      }
    } else {
      std::vector<FtSample> batch;
      if (mode == LossMode::StandardFT) {
        for (int b = 0; b < cfg.pairs_per_batch; ++b)
          batch.push_back(ft_samples[next_index()]);
      } else {
        while (static_cast<int>(batch.size()) < cfg.pairs_per_batch) {
          auto [begin, end] = ft_clusters[next_index()];
          for (int i = begin; i < end; ++i) batch.push_back(ft_samples[i]);
        }
      }
      std::vector<int> ts(batch.size());
      std::vector<std::vector<double>> eps(batch.size());
      for (size_t k = 0; k < batch.size(); ++k) {
        ts[k] = 1 + static_cast<int>(draw_rng.uniform_int(state.schedule.T));
        eps[k].resize(latent);
        for (double& e : eps[k]) e = draw_rng.gaussian();
      }
      FtLossResult r = batch_ft_loss(state, batch, ts, eps);
      grad = std::move(r.grad);
      m.loss = r.loss;
      m.implicit_accuracy = 0.5;  // not defined for non-pair objectives
    }

    if (!std::isfinite(m.loss))
      throw NumericError("train: loss diverged to a non-finite value at step " +
                         std::to_string(state.step));
    clip_gradient(grad, cfg.clip_norm);
    } catch (const NumericError&) {
      // The state has not been updated this step, so it is the last good one.
      if (!checkpoint_path.empty()) save_checkpoint(state, checkpoint_path);
      throw;
    }
    state.adam.update(state.params, grad, cfg.lr);
    ++state.step;

    if (step % cfg.log_interval == 0 || step + 1 == cfg.steps)
      log.push_back(m);
  }

  if (params_hash(state.ref_params) != ref_hash)
    throw NumericError("train: reference parameters changed during training");
  write_metrics(metrics_path, log);
  if (!checkpoint_path.empty()) save_checkpoint(state, checkpoint_path);
  return log;
}

std::vector<StepMetrics> train_on_dataset(TrainState& state, LossMode mode,
                                          const Dataset& data,
                                          const Codec& codec,
                                          const TrainConfig& cfg,
                                          const HFunction& h,
                                          const std::string& metrics_path,
                                          const std::string& checkpoint_path) {
  std::vector<TrainPair> pairs = make_train_pairs(data, codec);
  std::vector<FtSample> samples;
  std::vector<std::pair<int, int>> clusters;
  if (mode == LossMode::StandardFT || mode == LossMode::BatchFT)
    dataset_ft_views(data, codec, mode, samples, clusters);
  return train(state, mode, pairs, samples, clusters, cfg, h, metrics_path,
               checkpoint_path);
}

GradCheckResult grad_check(
    const std::function<std::pair<double, std::vector<double>>(
        const std::vector<double>&)>& fn,
    const std::vector<double>& params, int probes, double fd_step,
    std::uint64_t seed) {
  if (params.empty()) throw ValidationError("grad_check: empty parameters");
  auto [base_loss, analytic] = fn(params);
  if (analytic.size() != params.size())
    throw ValidationError("grad_check: gradient size mismatch");
  std::vector<int> coords(params.size());
  std::iota(coords.begin(), coords.end(), 0);
  int n = std::min<int>(probes, static_cast<int>(params.size()));
  DetRng rng(seed, 0x6763686bULL);
  for (int i = 0; i < n; ++i)
    std::swap(coords[i], coords[i + rng.uniform_int(coords.size() - i)]);

  GradCheckResult out;
  out.probes = n;
  std::vector<double> p = params;
  for (int i = 0; i < n; ++i) {
    int c = coords[i];
    double keep = p[c];
    p[c] = keep + fd_step;
    double up = fn(p).first;
    p[c] = keep - fd_step;
    double down = fn(p).first;
    p[c] = keep;
    double fd = (up - down) / (2.0 * fd_step);
    double denom = std::max({std::abs(analytic[c]), std::abs(fd), 1e-6});
    out.max_rel_error =
        std::max(out.max_rel_error, std::abs(analytic[c] - fd) / denom);
  }
  return out;
}

}  // namespace apo
