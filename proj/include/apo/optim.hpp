#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "apo/codec.hpp"
#include "apo/dataset.hpp"
#include "apo/diffusion.hpp"
#include "apo/errors.hpp"

namespace apo {

double sigmoid(double z);

// Bradley-Terry preference probability sigma(r_pos - r_neg).
double bt_probability(double r_pos, double r_neg);

// Distance-dependent weight mapped linearly from [d_lo, d_hi] to
// [h_min, h_max] (direction Increasing) or [h_max, h_min] (Decreasing).
// Placement selects where the weight enters the pair loss.
struct HFunction {
  double h_min = 0.5;
  double h_max = 1.0;
  double d_lo = 1.0;
  double d_hi = 1.0;
  enum class Direction { Increasing, Decreasing };
  enum class Placement { ScaleBeta, ScaleLoss };
  Direction direction = Direction::Increasing;
  Placement placement = Placement::ScaleBeta;

  void validate() const;
  // H == 1 everywhere; turns the pair loss into plain preference optimization
  // without distance scaling.
  static HFunction constant_one();
};

double h_weight(int d, const HFunction& h);

enum class LossMode { StandardFT, BatchFT, DPO, APO };

std::string loss_mode_name(LossMode mode);
LossMode loss_mode_from_name(const std::string& name);

struct TrainConfig {
  double beta = 100.0;
  double lr = 1e-4;
  double clip_norm = 1.0;
  int pairs_per_batch = 64;
  int steps = 0;
  std::uint64_t seed = 0;
  int log_interval = 50;

  void validate() const;
};

// Numeric view of a preference pair: condition embedding, both member
// embeddings, and the pair's edit distance.
struct TrainPair {
  std::vector<double> condition;
  std::vector<double> preferred;
  std::vector<double> dispreferred;
  int distance = 1;
};

TrainPair make_train_pair(const PreferencePair& pair, const Codec& codec);
std::vector<TrainPair> make_train_pairs(const Dataset& data, const Codec& codec);

// Returns `base` with d_lo/d_hi set to the min/max distance observed across
// the pairs (global normalization).
HFunction fit_h_bounds(const std::vector<TrainPair>& pairs, HFunction base = {});

// Scalar pair loss given the two per-member excess errors
// l± = |eps± - eps_theta±|^2 - |eps± - eps_ref±|^2:
//   ScaleBeta: -log sigma(-h * beta * T * (l_pos - l_neg))
//   ScaleLoss: -h * log sigma(-beta * T * (l_pos - l_neg))
double preference_loss_value(double l_pos, double l_neg, double h, double beta,
                             int T, HFunction::Placement placement);

struct PairLossResult {
  double loss = 0;
  double margin = 0;           // -(l_pos - l_neg)
  double implicit_score = 0;   // 1 if l_pos < l_neg, 0.5 on an exact tie
  std::vector<double> grad;    // w.r.t. trainable parameters only
};

// Preference loss and exact gradients for one pair at a shared timestep with
// independent noise draws per member. The reference network is a constant.
PairLossResult apo_pair_loss(const TrainState& state, const TrainPair& pair,
                             int t, const std::vector<double>& eps_pos,
                             const std::vector<double>& eps_neg,
                             const TrainConfig& cfg, const HFunction& h);

// Same loss with the distance weight fixed to 1 (plain Diffusion-DPO).
PairLossResult dpo_pair_loss(const TrainState& state, const TrainPair& pair,
                             int t, const std::vector<double>& eps_pos,
                             const std::vector<double>& eps_neg,
                             const TrainConfig& cfg);

struct FtSample {
  std::vector<double> condition;
  std::vector<double> x0;
};

struct FtLossResult {
  double loss = 0;
  std::vector<double> grad;
};

// Per-sample denoising MSE (mean over embedding dimensions).
FtLossResult standard_ft_loss(const TrainState& state, const FtSample& sample,
                              int t, const std::vector<double>& eps);

// Mean denoising MSE over a batch; every sample is supervised toward its own
// condition. Parallel vectors of timesteps and noise draws, one per sample.
FtLossResult batch_ft_loss(const TrainState& state,
                           const std::vector<FtSample>& batch,
                           const std::vector<int>& ts,
                           const std::vector<std::vector<double>>& eps);

struct StepMetrics {
  long step = 0;
  double loss = 0;
  double margin_mean = 0;
  double implicit_accuracy = 0;
};

// Loss/margin/implicit-accuracy over `draws` seeded pair draws, without
// touching the state.
StepMetrics evaluate_pairs(const TrainState& state,
                           const std::vector<TrainPair>& pairs,
                           const TrainConfig& cfg, const HFunction& h,
                           std::uint64_t seed, int draws);

// Runs cfg.steps Adam updates on the state. Pair modes draw batches from
// `pairs`; fine-tuning modes draw from `ft_samples` (for BatchFT the samples
// must be grouped per cluster in `ft_clusters` as index ranges). Logged
// metrics describe each batch before its update. Writes JSONL metrics when
// metrics_path is non-empty and a checkpoint at the end (or the last good one
// on divergence) when checkpoint_path is non-empty.
std::vector<StepMetrics> train(TrainState& state, LossMode mode,
                               const std::vector<TrainPair>& pairs,
                               const std::vector<FtSample>& ft_samples,
                               const std::vector<std::pair<int, int>>& ft_clusters,
                               const TrainConfig& cfg, const HFunction& h,
                               const std::string& metrics_path = "",
                               const std::string& checkpoint_path = "");

// Convenience wrapper that derives pair and fine-tuning views from a dataset.
std::vector<StepMetrics> train_on_dataset(TrainState& state, LossMode mode,
                                          const Dataset& data,
                                          const Codec& codec,
                                          const TrainConfig& cfg,
                                          const HFunction& h,
                                          const std::string& metrics_path = "",
                                          const std::string& checkpoint_path = "");

// Fine-tuning views of a dataset. StandardFT uses one sample per cluster
// (the positive); BatchFT uses the positive plus each negative paired with
// its own prompt, grouped per cluster.
void dataset_ft_views(const Dataset& data, const Codec& codec, LossMode mode,
                      std::vector<FtSample>& samples,
                      std::vector<std::pair<int, int>>& clusters);

// Central-difference verification of an analytic gradient on `probes`
// randomly chosen coordinates. `fn` must return loss and full gradient at the
// given parameter vector.
struct GradCheckResult {
  double max_rel_error = 0;
  int probes = 0;
};

GradCheckResult grad_check(
    const std::function<std::pair<double, std::vector<double>>(
        const std::vector<double>&)>& fn,
    const std::vector<double>& params, int probes, double fd_step,
    std::uint64_t seed);

}  // namespace apo
