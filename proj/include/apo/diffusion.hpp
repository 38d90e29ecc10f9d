#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "apo/errors.hpp"
#include "apo/rng.hpp"

namespace apo {

// Variance-preserving schedule: x_t = a[t] * x0 + b[t] * eps with
// a[t]^2 + b[t]^2 = 1, a decreasing from ~1 to ~0 over t = 1..T.
struct NoiseSchedule {
  int T = 64;
  std::vector<double> a;  // index 0..T, a[0] = 1
  std::vector<double> b;  // b[t] = sqrt(1 - a[t]^2)

  static NoiseSchedule cosine(int T = 64);
  void validate() const;
};

std::vector<double> forward_noise(const std::vector<double>& x0, int t,
                                  const std::vector<double>& eps,
                                  const NoiseSchedule& schedule);

// Fully connected eps-prediction network:
//   input  = [x_t (latent), c (latent), t/T]  ->  hidden tanh layers -> eps_hat
struct MlpConfig {
  int latent = 32;
  int hidden = 64;
  int hidden_layers = 2;

  int input_dim() const { return 2 * latent + 1; }
  int param_count() const;
};

// Flat parameter vector layout: for each layer, row-major weight matrix then
// bias. Activations cached for the backward pass.
struct MlpCache {
  std::vector<double> input;
  std::vector<std::vector<double>> pre;   // pre-activation per layer
  std::vector<std::vector<double>> post;  // post-activation per layer
};

std::vector<double> mlp_init(const MlpConfig& cfg, DetRng& rng);

// Throws NumericError naming the layer if an activation is non-finite.
std::vector<double> mlp_forward(const MlpConfig& cfg,
                                const std::vector<double>& params,
                                const std::vector<double>& input,
                                MlpCache* cache = nullptr);

// Accumulates d(loss)/d(params) into `grad` given d(loss)/d(output).
void mlp_backward(const MlpConfig& cfg, const std::vector<double>& params,
                  const MlpCache& cache, const std::vector<double>& dout,
                  std::vector<double>& grad);

std::vector<double> predict_eps(const MlpConfig& cfg,
                                const std::vector<double>& params,
                                const std::vector<double>& x_t,
                                const std::vector<double>& c, int t, int T,
                                MlpCache* cache = nullptr);

struct AdamState {
  std::vector<double> m, v;
  long step = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  void init(size_t n);
  void update(std::vector<double>& params, const std::vector<double>& grad,
              double lr);
};

struct TrainState {
  MlpConfig mlp;
  NoiseSchedule schedule;
  std::vector<double> params;
  std::vector<double> ref_params;  // frozen after pretraining
  AdamState adam;
  long step = 0;
  std::uint64_t seed = 0;
};

std::uint64_t params_hash(const std::vector<double>& params);

// Ancestral reverse diffusion from pure noise, deterministic given the seed.
// Each step clamps the implied clean embedding to [-x0_clamp, x0_clamp] for
// numerical stability.
std::vector<double> sample(const TrainState& state, const std::vector<double>& c,
                           std::uint64_t seed, double x0_clamp = 4.0);

struct PretrainConfig {
  int steps = 2000;
  double lr = 1e-3;
  int batch = 32;
  std::uint64_t seed = 0;
};

struct CorpusItem {
  std::vector<double> condition;
  std::vector<double> x0;
};

// Denoising-MSE pretraining; the returned state's reference parameters are a
// snapshot of the final weights. Returns the final running loss through
// `final_loss` when non-null.
TrainState pretrain(const std::vector<CorpusItem>& corpus,
                    const MlpConfig& mlp, const NoiseSchedule& schedule,
                    const PretrainConfig& config, double* final_loss = nullptr);

void save_checkpoint(const TrainState& state, const std::string& path);
TrainState load_checkpoint(const std::string& path);

}  // namespace apo
