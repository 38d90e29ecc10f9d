#include "apo/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace apo {

using json = nlohmann::ordered_json;

namespace {

constexpr double kPi = 3.14159265358979323846;

// Layer widths from input to output: [in, hidden..., latent].
std::vector<int> layer_dims(const MlpConfig& cfg) {
  std::vector<int> dims;
  dims.push_back(cfg.input_dim());
  for (int i = 0; i < cfg.hidden_layers; ++i) dims.push_back(cfg.hidden);
  dims.push_back(cfg.latent);
  return dims;
}

std::string layer_name(const MlpConfig& cfg, int layer) {
  if (layer == cfg.hidden_layers) return "output layer";
  return "hidden layer " + std::to_string(layer + 1);
}

void check_finite(const std::vector<double>& v, const std::string& where) {
  for (double x : v)
    if (!std::isfinite(x))
      throw NumericError("non-finite activation in " + where);
}

}  // namespace

NoiseSchedule NoiseSchedule::cosine(int T) {
  if (T < 1) throw ValidationError("noise schedule: T must be >= 1");
  NoiseSchedule s;
  s.T = T;
  s.a.resize(T + 1);
  s.b.resize(T + 1);
  const double offset = 0.008;
  auto f = [&](double t) {
    double arg = (t / T + offset) / (1.0 + offset) * (kPi / 2.0);
    double c = std::cos(arg);
    return c * c;
  };
  double f0 = f(0.0);
  for (int t = 0; t <= T; ++t) {
    double abar = std::clamp(f(static_cast<double>(t)) / f0, 1e-6, 1.0);
    if (t == 0) abar = 1.0;
    s.a[t] = std::sqrt(abar);
    s.b[t] = std::sqrt(1.0 - abar);
  }
  s.validate();
  return s;
}

void NoiseSchedule::validate() const {
  if (T < 1 || static_cast<int>(a.size()) != T + 1 ||
      static_cast<int>(b.size()) != T + 1)
    throw ValidationError("noise schedule: coefficient arrays must have T+1 entries");
  for (int t = 0; t <= T; ++t) {
    if (!std::isfinite(a[t]) || !std::isfinite(b[t]))
      throw ValidationError("noise schedule: non-finite coefficient");
    if (std::abs(a[t] * a[t] + b[t] * b[t] - 1.0) > 1e-12)
      throw ValidationError("noise schedule: a^2 + b^2 != 1");
    if (t > 0 && a[t] > a[t - 1] + 1e-12)
      throw ValidationError("noise schedule: signal coefficient not decreasing");
  }
  if (a[0] != 1.0) throw ValidationError("noise schedule: a[0] must be 1");
  if (a[T] > 0.05) throw ValidationError("noise schedule: a[T] must be near 0");
}

std::vector<double> forward_noise(const std::vector<double>& x0, int t,
                                  const std::vector<double>& eps,
                                  const NoiseSchedule& schedule) {
  if (t < 1 || t > schedule.T)
    throw ValidationError("forward_noise: t out of range");
  if (x0.size() != eps.size())
    throw ValidationError("forward_noise: dimension mismatch");
  std::vector<double> out(x0.size());
  for (size_t i = 0; i < x0.size(); ++i)
    out[i] = schedule.a[t] * x0[i] + schedule.b[t] * eps[i];
  return out;
}

int MlpConfig::param_count() const {
  auto dims = layer_dims(*this);
  int n = 0;
  for (size_t l = 0; l + 1 < dims.size(); ++l)
    n += dims[l + 1] * dims[l] + dims[l + 1];
  return n;
}

std::vector<double> mlp_init(const MlpConfig& cfg, DetRng& rng) {
  auto dims = layer_dims(cfg);
  std::vector<double> params;
  params.reserve(cfg.param_count());
  for (size_t l = 0; l + 1 < dims.size(); ++l) {
    bool output = (l + 2 == dims.size());
    double scale = output ? 0.0 : 1.0 / std::sqrt(static_cast<double>(dims[l]));
    for (int i = 0; i < dims[l + 1] * dims[l]; ++i)
      params.push_back(scale == 0.0 ? 0.0 : scale * rng.gaussian());
    for (int i = 0; i < dims[l + 1]; ++i) params.push_back(0.0);
  }
  return params;
}

std::vector<double> mlp_forward(const MlpConfig& cfg,
                                const std::vector<double>& params,
                                const std::vector<double>& input,
                                MlpCache* cache) {
  auto dims = layer_dims(cfg);
  if (static_cast<int>(input.size()) != dims[0])
    throw ValidationError("mlp_forward: input dimension mismatch");
  if (static_cast<int>(params.size()) != cfg.param_count())
    throw ValidationError("mlp_forward: parameter count mismatch");
  if (cache) {
    cache->input = input;
    cache->pre.clear();
    cache->post.clear();
  }
  std::vector<double> act = input;
  size_t off = 0;
  int n_layers = static_cast<int>(dims.size()) - 1;
  for (int l = 0; l < n_layers; ++l) {
    int in = dims[l], out = dims[l + 1];
    std::vector<double> pre(out);
    for (int r = 0; r < out; ++r) {
      double s = params[off + static_cast<size_t>(out) * in + r];  // bias
      const double* w = &params[off + static_cast<size_t>(r) * in];
      for (int c = 0; c < in; ++c) s += w[c] * act[c];
      pre[r] = s;
    }
    off += static_cast<size_t>(out) * in + out;
    check_finite(pre, layer_name(cfg, l));
    bool last = (l + 1 == n_layers);
    std::vector<double> post(out);
    for (int r = 0; r < out; ++r) post[r] = last ? pre[r] : std::tanh(pre[r]);
    if (cache) {
      cache->pre.push_back(pre);
      cache->post.push_back(post);
    }
    act = std::move(post);
  }
  return act;
}

void mlp_backward(const MlpConfig& cfg, const std::vector<double>& params,
                  const MlpCache& cache, const std::vector<double>& dout,
                  std::vector<double>& grad) {
  auto dims = layer_dims(cfg);
  int n_layers = static_cast<int>(dims.size()) - 1;
  if (grad.size() != params.size())
    throw ValidationError("mlp_backward: gradient buffer size mismatch");
  // Offsets of each layer's weight block in the flat vector.
  std::vector<size_t> offsets(n_layers);
  size_t off = 0;
  for (int l = 0; l < n_layers; ++l) {
    offsets[l] = off;
    off += static_cast<size_t>(dims[l + 1]) * dims[l] + dims[l + 1];
  }
  std::vector<double> delta = dout;  // d(loss)/d(post-activation of layer l)
  for (int l = n_layers - 1; l >= 0; --l) {
    int in = dims[l], out = dims[l + 1];
    bool last = (l + 1 == n_layers);
    // d(loss)/d(pre-activation)
    std::vector<double> dpre(out);
    for (int r = 0; r < out; ++r) {
      double d = delta[r];
      if (!last) {
        double y = cache.post[l][r];
        d *= (1.0 - y * y);  // tanh'
      }
      dpre[r] = d;
    }
    const std::vector<double>& prev =
        (l == 0) ? cache.input : cache.post[l - 1];
    size_t base = offsets[l];
    for (int r = 0; r < out; ++r) {
      double d = dpre[r];
      double* gw = &grad[base + static_cast<size_t>(r) * in];
      for (int c = 0; c < in; ++c) gw[c] += d * prev[c];
      grad[base + static_cast<size_t>(out) * in + r] += d;  // bias
    }
    if (l > 0) {
      std::vector<double> dprev(in, 0.0);
      for (int r = 0; r < out; ++r) {
        double d = dpre[r];
        const double* w = &params[base + static_cast<size_t>(r) * in];
        for (int c = 0; c < in; ++c) dprev[c] += d * w[c];
      }
      delta = std::move(dprev);
    }
  }
}

std::vector<double> predict_eps(const MlpConfig& cfg,
                                const std::vector<double>& params,
                                const std::vector<double>& x_t,
                                const std::vector<double>& c, int t, int T,
                                MlpCache* cache) {
  if (static_cast<int>(x_t.size()) != cfg.latent ||
      static_cast<int>(c.size()) != cfg.latent)
    throw ValidationError("predict_eps: embedding dimension mismatch");
  std::vector<double> input;
  input.reserve(cfg.input_dim());
  input.insert(input.end(), x_t.begin(), x_t.end());
  input.insert(input.end(), c.begin(), c.end());
  input.push_back(static_cast<double>(t) / T);
  return mlp_forward(cfg, params, input, cache);
}

void AdamState::init(size_t n) {
  m.assign(n, 0.0);
  v.assign(n, 0.0);
  step = 0;
}

void AdamState::update(std::vector<double>& params,
                       const std::vector<double>& grad, double lr) {
  if (m.size() != params.size() || grad.size() != params.size())
    throw ValidationError("adam: size mismatch");
  ++step;
  double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  for (size_t i = 0; i < params.size(); ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
    double mhat = m[i] / c1;
    double vhat = v[i] / c2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

std::uint64_t params_hash(const std::vector<double>& params) {
  // FNV-1a over the raw little-endian bytes of the doubles.
  std::uint64_t h = 1469598103934665603ULL;
  for (double d : params) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, sizeof(bits));
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xff;
      h *= 1099511628211ULL;
    }
  }
  return h;
}

std::vector<double> sample(const TrainState& state, const std::vector<double>& c,
                           std::uint64_t seed, double x0_clamp) {
  const NoiseSchedule& s = state.schedule;
  DetRng rng(seed, 0x73616d70ULL);
  std::vector<double> x(state.mlp.latent);
  for (double& xi : x) xi = rng.gaussian();
  for (int t = s.T; t >= 1; --t) {
    std::vector<double> eps_hat =
        predict_eps(state.mlp, state.params, x, c, t, s.T);
    // Predicted clean embedding; static clamping keeps the reverse process
    // stable when eps_hat is inaccurate at high noise levels.
    std::vector<double> x0_hat(state.mlp.latent);
    for (int i = 0; i < state.mlp.latent; ++i)
      x0_hat[i] = std::clamp((x[i] - s.b[t] * eps_hat[i]) / s.a[t], -x0_clamp,
                             x0_clamp);
    if (t == 1) {
      x = std::move(x0_hat);
    } else {
      double alpha = (s.a[t] / s.a[t - 1]) * (s.a[t] / s.a[t - 1]);
      double beta = 1.0 - alpha;
      double var_t = s.b[t] * s.b[t];
      double var_prev = s.b[t - 1] * s.b[t - 1];
      double c0 = s.a[t - 1] * beta / var_t;       // weight on x0_hat
      double ct = std::sqrt(alpha) * var_prev / var_t;  // weight on x_t
      double sigma = std::sqrt(beta * var_prev / var_t);
      for (int i = 0; i < state.mlp.latent; ++i)
        x[i] = c0 * x0_hat[i] + ct * x[i] + sigma * rng.gaussian();
    }
    check_finite(x, "ancestral sampler at t=" + std::to_string(t));
  }
  return x;
}

TrainState pretrain(const std::vector<CorpusItem>& corpus,
                    const MlpConfig& mlp, const NoiseSchedule& schedule,
                    const PretrainConfig& config, double* final_loss) {
  if (corpus.empty()) throw ValidationError("pretrain: empty corpus");
  for (const CorpusItem& item : corpus)
    if (static_cast<int>(item.condition.size()) != mlp.latent ||
        static_cast<int>(item.x0.size()) != mlp.latent)
      throw ValidationError("pretrain: corpus embedding dimension mismatch");

  TrainState state;
  state.mlp = mlp;
  state.schedule = schedule;
  state.seed = config.seed;
  DetRng init_rng(config.seed, 0x696e6974ULL);
  state.params = mlp_init(mlp, init_rng);
  state.adam.init(state.params.size());

  DetRng rng(config.seed, 0x70726574ULL);
  std::vector<double> grad(state.params.size());
  double running = 0.0;
  for (int step = 0; step < config.steps; ++step) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double loss = 0.0;
    for (int b = 0; b < config.batch; ++b) {
      const CorpusItem& item = corpus[rng.uniform_int(corpus.size())];
      int t = 1 + static_cast<int>(rng.uniform_int(schedule.T));
      std::vector<double> eps(mlp.latent);
      for (double& e : eps) e = rng.gaussian();
      std::vector<double> x_t = forward_noise(item.x0, t, eps, schedule);
      MlpCache cache;
      std::vector<double> eps_hat = predict_eps(mlp, state.params, x_t,
                                                item.condition, t, schedule.T,
                                                &cache);
      std::vector<double> dout(mlp.latent);
      double denom = static_cast<double>(config.batch) * mlp.latent;
      for (int i = 0; i < mlp.latent; ++i) {
        double r = eps_hat[i] - eps[i];
        loss += r * r / denom;
        dout[i] = 2.0 * r / denom;
      }
      mlp_backward(mlp, state.params, cache, dout, grad);
    }
    if (!std::isfinite(loss))
      throw NumericError("pretrain: loss diverged to a non-finite value at step " +
                         std::to_string(step));
    state.adam.update(state.params, grad, config.lr);
    ++state.step;
    running = (step == 0) ? loss : 0.99 * running + 0.01 * loss;
  }
  if (final_loss) *final_loss = running;
  state.ref_params = state.params;
  return state;
}

namespace {

json state_to_json(const TrainState& state) {
  json j;
  j["version"] = 1;
  j["mlp"] = {{"latent", state.mlp.latent},
              {"hidden", state.mlp.hidden},
              {"hidden_layers", state.mlp.hidden_layers}};
  j["schedule_T"] = state.schedule.T;
  j["params"] = state.params;
  j["ref_params"] = state.ref_params;
  j["adam"] = {{"m", state.adam.m},
               {"v", state.adam.v},
               {"step", state.adam.step},
               {"beta1", state.adam.beta1},
               {"beta2", state.adam.beta2},
               {"eps", state.adam.eps}};
  j["step"] = state.step;
  j["seed"] = state.seed;
  return j;
}

TrainState state_from_json(const json& j) {
  if (!j.contains("version") || j.at("version").get<int>() != 1)
    throw ValidationError("checkpoint: unsupported version");
  TrainState s;
  const json& m = j.at("mlp");
  s.mlp.latent = m.at("latent").get<int>();
  s.mlp.hidden = m.at("hidden").get<int>();
  s.mlp.hidden_layers = m.at("hidden_layers").get<int>();
  s.schedule = NoiseSchedule::cosine(j.at("schedule_T").get<int>());
  s.params = j.at("params").get<std::vector<double>>();
  s.ref_params = j.at("ref_params").get<std::vector<double>>();
  const json& a = j.at("adam");
  s.adam.m = a.at("m").get<std::vector<double>>();
  s.adam.v = a.at("v").get<std::vector<double>>();
  s.adam.step = a.at("step").get<long>();
  s.adam.beta1 = a.at("beta1").get<double>();
  s.adam.beta2 = a.at("beta2").get<double>();
  s.adam.eps = a.at("eps").get<double>();
  s.step = j.at("step").get<long>();
  s.seed = j.at("seed").get<std::uint64_t>();
  size_t n = static_cast<size_t>(s.mlp.param_count());
  if (s.params.size() != n ||
      (!s.ref_params.empty() && s.ref_params.size() != n))
    throw ValidationError("checkpoint: parameter count mismatch");
  if (!s.adam.m.empty() && (s.adam.m.size() != n || s.adam.v.size() != n))
    throw ValidationError("checkpoint: optimizer moment size mismatch");
  return s;
}

}  // namespace

void save_checkpoint(const TrainState& state, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("checkpoint: cannot open " + path + " for writing");
  out << state_to_json(state).dump() << "\n";
}

TrainState load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("checkpoint: cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ValidationError("checkpoint: " + std::string(e.what()));
  }
  return state_from_json(j);
}

}  // namespace apo
