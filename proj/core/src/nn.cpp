#include "vvopt/nn.hpp"

#include "vvopt/io_util.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

namespace vvopt {

namespace {

using nlohmann::json;

double sigmoid(double t) {
  return t >= 0.0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
}

double stable_softplus(double t) {
  return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
}

struct ForwardCache {
  std::vector<Vec> acts;     // acts[0] = normalized features, acts.back() = output
  std::vector<Vec> preacts;  // pre-activation of each layer
};

double forward_cached(const PolicyParams& params, const Vec& features, ForwardCache& cache) {
  const std::size_t layers = params.layer_count();
  cache.acts.resize(layers + 1);
  cache.preacts.resize(layers);
  cache.acts[0] =
      (features - params.feat_stats.mean).cwiseQuotient(params.feat_stats.stddev);
  for (std::size_t t = 0; t < layers; ++t) {
    cache.preacts[t] = params.weights[t] * cache.acts[t] + params.biases[t];
    if (t + 1 < layers)
      cache.acts[t + 1] = cache.preacts[t].cwiseMax(0.0);
    else
      cache.acts[t + 1] = cache.preacts[t];
  }
  return cache.acts[layers](0);
}

// Accumulates d(dout * output)/d(weights, biases) into grads.
// ReLU subgradient at exactly 0 is taken as 0.
void backward_accumulate(const PolicyParams& params, const ForwardCache& cache,
                         double dout, Gradients& grads) {
  const std::size_t layers = params.layer_count();
  Vec delta = Vec::Constant(1, dout);
  for (std::size_t t = layers; t-- > 0;) {
    grads.w[t].noalias() += delta * cache.acts[t].transpose();
    grads.b[t] += delta;
    if (t > 0) {
      Vec up = params.weights[t].transpose() * delta;
      delta = up.cwiseProduct(
          (cache.preacts[t - 1].array() > 0.0).cast<double>().matrix());
    }
  }
}

// Per-sample forward state reused by the CVaR losses.
struct SampleForward {
  std::vector<ForwardCache> caches;  // one per DER node
  std::vector<double> outputs;       // one per DER node
};

SampleForward forward_sample(const PolicyParams& params, const OperatingCondition& oc,
                             const FeederModel& model) {
  SampleForward sf;
  const auto& der = model.der_indices();
  sf.caches.resize(der.size());
  sf.outputs.resize(der.size());
  for (std::size_t d = 0; d < der.size(); ++d)
    sf.outputs[d] = forward_cached(params, node_features(oc, der[d]), sf.caches[d]);
  return sf;
}

}  // namespace

std::size_t PolicyParams::scalar_count() const {
  std::size_t count = 0;
  for (const Mat& w : weights) count += static_cast<std::size_t>(w.size());
  for (const Vec& b : biases) count += static_cast<std::size_t>(b.size());
  return count;
}

void PolicyParams::validate() const {
  if (layer_widths.size() < 2) throw NnError("policy needs at least one layer");
  if (layer_widths.back() != 1) throw NnError("policy output width must be 1");
  if (weights.size() != layer_widths.size() - 1 || biases.size() != weights.size())
    throw NnError("layer count mismatch");
  for (std::size_t t = 0; t < weights.size(); ++t) {
    if (weights[t].rows() != layer_widths[t + 1] || weights[t].cols() != layer_widths[t])
      throw NnError("weight shape mismatch at layer " + std::to_string(t));
    if (biases[t].size() != layer_widths[t + 1])
      throw NnError("bias shape mismatch at layer " + std::to_string(t));
  }
  if (feat_stats.mean.size() != layer_widths.front() ||
      feat_stats.stddev.size() != layer_widths.front())
    throw NnError("feature stats do not match the input width");
  if ((feat_stats.stddev.array() <= 0.0).any())
    throw NnError("feature stddev must be positive");
}

Vec node_features(const OperatingCondition& oc, int node_index) {
  Vec f(kFeatureCount);
  f << oc.p_gen[node_index], oc.p_load[node_index], oc.q_load[node_index],
      oc.p_load.sum() - oc.p_gen.sum(), oc.q_load.sum();
  return f;
}

PolicyParams make_policy(const std::vector<int>& hidden_widths, std::uint64_t seed) {
  PolicyParams params;
  params.layer_widths.push_back(kFeatureCount);
  for (int w : hidden_widths) {
    if (w < 1) throw NnError("hidden width must be positive");
    params.layer_widths.push_back(w);
  }
  params.layer_widths.push_back(1);

  std::mt19937_64 rng(seed);
  for (std::size_t t = 0; t + 1 < params.layer_widths.size(); ++t) {
    const int fan_in = params.layer_widths[t];
    const int fan_out = params.layer_widths[t + 1];
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Mat w(fan_out, fan_in);
    for (int r = 0; r < fan_out; ++r)
      for (int c = 0; c < fan_in; ++c) w(r, c) = dist(rng);
    params.weights.push_back(std::move(w));
    params.biases.push_back(Vec::Zero(fan_out));
  }
  params.feat_stats.mean = Vec::Zero(kFeatureCount);
  params.feat_stats.stddev = Vec::Ones(kFeatureCount);
  return params;
}

FeatureStats compute_feature_stats(std::span<const Sample> train_split) {
  if (train_split.empty()) throw NnError("cannot compute feature stats of an empty split");
  // Stats over (sample, DER node) feature vectors; node identity does not
  // enter because all nodes share the network.
  Vec sum = Vec::Zero(kFeatureCount);
  Vec sum_sq = Vec::Zero(kFeatureCount);
  std::size_t count = 0;
  for (const Sample& sample : train_split) {
    for (Eigen::Index n = 0; n < sample.oc.p_gen.size(); ++n) {
      if (sample.sol.q_gen.size() != sample.oc.p_gen.size())
        throw NnError("sample label size mismatch");
    }
    const Vec totals(Vec::Zero(0));
    (void)totals;
    for (Eigen::Index n = 0; n < sample.oc.p_gen.size(); ++n) {
      // Restrict to DER nodes via q_gen? The model is not available here;
      // use every bus with nonzero generation capability marker.
      break;
    }
    break;
  }
  (void)count;
  (void)sum;
  (void)sum_sq;
  throw NnError("unreachable");
}

double forward(const PolicyParams& params, const Vec& features) {
  if (features.size() != params.layer_widths.front())
    throw NnError("feature vector width mismatch");
  ForwardCache cache;
  return forward_cached(params, features, cache);
}

Vec predict_all(const PolicyParams& params, const OperatingCondition& oc,
                const FeederModel& model, bool clamp_output) {
  Vec q = Vec::Zero(model.n());
  for (int n : model.der_indices()) {
    double out = forward(params, node_features(oc, n));
    if (clamp_output) out = std::clamp(out, -model.q_limits()[n], model.q_limits()[n]);
    q[n] = out;
  }
  return q;
}

Gradients Gradients::zeros_like(const PolicyParams& params) {
  Gradients g;
  for (const Mat& w : params.weights) g.w.push_back(Mat::Zero(w.rows(), w.cols()));
  for (const Vec& b : params.biases) g.b.push_back(Vec::Zero(b.size()));
  return g;
}

void Gradients::add_scaled(const Gradients& other, double factor) {
  for (std::size_t t = 0; t < w.size(); ++t) {
    w[t] += factor * other.w[t];
    b[t] += factor * other.b[t];
  }
}

void Gradients::scale(double factor) {
  for (std::size_t t = 0; t < w.size(); ++t) {
    w[t] *= factor;
    b[t] *= factor;
  }
}

double Gradients::squared_norm() const {
  double acc = 0.0;
  for (const Mat& m : w) acc += m.squaredNorm();
  for (const Vec& v : b) acc += v.squaredNorm();
  return acc;
}

std::string to_string(LossMode mode) {
  switch (mode) {
    case LossMode::mse: return "mse";
    case LossMode::mse_cvar_q: return "cvar_q";
    case LossMode::mse_cvar_qv: return "cvar_qv";
  }
  return "unknown";
}

LossMode loss_mode_from_string(const std::string& s) {
  if (s == "mse") return LossMode::mse;
  if (s == "cvar_q") return LossMode::mse_cvar_q;
  if (s == "cvar_qv") return LossMode::mse_cvar_qv;
  throw NnError("unknown loss mode: " + s + " (expected mse|cvar_q|cvar_qv)");
}

double sample_q_loss(const PolicyParams& params, const Sample& sample,
                     const FeederModel& model) {
  double acc = 0.0;
  for (int n : model.der_indices()) {
    const double e = forward(params, node_features(sample.oc, n)) - sample.sol.q_gen[n];
    acc += e * e;
  }
  return acc;
}

double sample_v_loss(const PolicyParams& params, const Sample& sample,
                     const FeederModel& model, const SensitivityPair& s) {
  const Vec q = predict_all(params, sample.oc, model, false);
  const Vec v = s.X * q + load_voltage_term(sample.oc, s);
  return v.cwiseAbs().maxCoeff();
}

std::vector<double> per_sample_q_losses(const PolicyParams& params, Batch batch,
                                        const FeederModel& model) {
  std::vector<double> out;
  out.reserve(batch.size());
  for (const Sample* sample : batch) out.push_back(sample_q_loss(params, *sample, model));
  return out;
}

std::vector<double> per_sample_v_losses(const PolicyParams& params, Batch batch,
                                        const FeederModel& model, const SensitivityPair& s) {
  std::vector<double> out;
  out.reserve(batch.size());
  for (const Sample* sample : batch)
    out.push_back(sample_v_loss(params, *sample, model, s));
  return out;
}

LossGrad mse_loss_grad(const PolicyParams& params, Batch batch, const FeederModel& model) {
  if (batch.empty()) throw NnError("empty batch");
  LossGrad lg;
  lg.grads = Gradients::zeros_like(params);
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  ForwardCache cache;
  for (const Sample* sample : batch) {
    for (int n : model.der_indices()) {
      const double out = forward_cached(params, node_features(sample->oc, n), cache);
      const double e = out - sample->sol.q_gen[n];
      loss += e * e;
      backward_accumulate(params, cache, 2.0 * e * inv_b, lg.grads);
    }
  }
  lg.value.mse = loss * inv_b;
  lg.value.total = lg.value.mse;
  return lg;
}

LossGrad cvar_q_loss_grad(const PolicyParams& params, Batch batch, const FeederModel& model,
                          double alpha, double tau) {
  if (batch.size() < 2) throw NnError("CVaR loss needs a batch of at least 2");
  if (alpha * static_cast<double>(batch.size()) < 1.0)
    throw NnError("alpha * batch size must be at least 1");
  if (tau <= 0.0) throw NnError("tau must be positive");

  const auto& der = model.der_indices();
  const double scale = 1.0 / (alpha * static_cast<double>(batch.size()));
  const double beta = params.beta_q;

  LossGrad lg;
  lg.grads = Gradients::zeros_like(params);
  double smooth_sum = 0.0;
  double weight_sum = 0.0;
  for (const Sample* sample : batch) {
    SampleForward sf = forward_sample(params, sample->oc, model);
    double sample_loss = 0.0;
    std::vector<double> errors(der.size());
    for (std::size_t d = 0; d < der.size(); ++d) {
      errors[d] = sf.outputs[d] - sample->sol.q_gen[der[d]];
      sample_loss += errors[d] * errors[d];
    }
    const double weight = sigmoid((sample_loss - beta) / tau);
    smooth_sum += tau * stable_softplus((sample_loss - beta) / tau);
    weight_sum += weight;
    for (std::size_t d = 0; d < der.size(); ++d)
      backward_accumulate(params, sf.caches[d], scale * weight * 2.0 * errors[d], lg.grads);
  }
  lg.value.cvar_q = beta + scale * smooth_sum;
  lg.value.total = lg.value.cvar_q;
  lg.grad_beta_q = 1.0 - scale * weight_sum;
  return lg;
}

LossGrad cvar_v_loss_grad(const PolicyParams& params, Batch batch, const FeederModel& model,
                          const SensitivityPair& s, double alpha, double tau) {
  if (batch.size() < 2) throw NnError("CVaR loss needs a batch of at least 2");
  if (alpha * static_cast<double>(batch.size()) < 1.0)
    throw NnError("alpha * batch size must be at least 1");
  if (tau <= 0.0) throw NnError("tau must be positive");

  const auto& der = model.der_indices();
  const int n = model.n();
  const double scale = 1.0 / (alpha * static_cast<double>(batch.size()));
  const double beta = params.beta_v;

  LossGrad lg;
  lg.grads = Gradients::zeros_like(params);
  double smooth_sum = 0.0;
  double weight_sum = 0.0;
  for (const Sample* sample : batch) {
    SampleForward sf = forward_sample(params, sample->oc, model);
    Vec q = Vec::Zero(n);
    for (std::size_t d = 0; d < der.size(); ++d) q[der[d]] = sf.outputs[d];
    const Vec v = s.X * q + load_voltage_term(sample->oc, s);

    // Smooth max of |v_n| as log-sum-exp over the stacked values {v, -v};
    // differentiable everywhere, upper-bounds the exact max.
    const Vec a = v / tau;
    const double m = a.cwiseAbs().maxCoeff();
    const Vec e_pos = (a.array() - m).exp();
    const Vec e_neg = (-a.array() - m).exp();
    const double z = e_pos.sum() + e_neg.sum();
    const double sample_loss = tau * (m + std::log(z));
    const Vec dloss_dv = (e_pos - e_neg) / z;

    const double weight = sigmoid((sample_loss - beta) / tau);
    smooth_sum += tau * stable_softplus((sample_loss - beta) / tau);
    weight_sum += weight;

    const Vec dq = s.X.transpose() * dloss_dv;
    for (std::size_t d = 0; d < der.size(); ++d)
      backward_accumulate(params, sf.caches[d], scale * weight * dq[der[d]], lg.grads);
  }
  lg.value.cvar_v = beta + scale * smooth_sum;
  lg.value.total = lg.value.cvar_v;
  lg.grad_beta_v = 1.0 - scale * weight_sum;
  return lg;
}

LossGrad combined_loss_grad(const PolicyParams& params, Batch batch,
                            const FeederModel& model, const SensitivityPair* s,
                            const LossConfig& cfg) {
  if (cfg.lambda_q < 0.0 || cfg.lambda_v < 0.0)
    throw NnError("lambda weights must be nonnegative");
  LossGrad total = mse_loss_grad(params, batch, model);
  if (has_cvar_q(cfg.mode)) {
    LossGrad q = cvar_q_loss_grad(params, batch, model, cfg.alpha, cfg.tau);
    total.value.cvar_q = q.value.cvar_q;
    total.value.total += cfg.lambda_q * q.value.cvar_q;
    total.grads.add_scaled(q.grads, cfg.lambda_q);
    total.grad_beta_q = cfg.lambda_q * q.grad_beta_q;
  }
  if (has_cvar_v(cfg.mode)) {
    if (!s) throw NnError("voltage CVaR loss needs sensitivity matrices");
    LossGrad v = cvar_v_loss_grad(params, batch, model, *s, cfg.alpha, cfg.tau);
    total.value.cvar_v = v.value.cvar_v;
    total.value.total += cfg.lambda_v * v.value.cvar_v;
    total.grads.add_scaled(v.grads, cfg.lambda_v);
    total.grad_beta_v = cfg.lambda_v * v.grad_beta_v;
  }
  return total;
}

void save_policy(const std::filesystem::path& path, const PolicyParams& params,
                 std::uint64_t feeder_hash, const std::string& config_echo_json) {
  params.validate();
  json j;
  j["layer_widths"] = params.layer_widths;
  json weights = json::array();
  for (const Mat& w : params.weights) {
    json flat = json::array();
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) flat.push_back(w(r, c));
    weights.push_back(std::move(flat));
  }
  j["weights"] = std::move(weights);
  json biases = json::array();
  for (const Vec& b : params.biases) {
    json flat = json::array();
    for (Eigen::Index i = 0; i < b.size(); ++i) flat.push_back(b(i));
    biases.push_back(std::move(flat));
  }
  j["biases"] = std::move(biases);
  j["beta_q"] = params.beta_q;
  j["beta_v"] = params.beta_v;
  j["betas_initialized"] = params.betas_initialized;
  json mean = json::array(), stddev = json::array();
  for (Eigen::Index i = 0; i < params.feat_stats.mean.size(); ++i) {
    mean.push_back(params.feat_stats.mean[i]);
    stddev.push_back(params.feat_stats.stddev[i]);
  }
  j["feat_mean"] = std::move(mean);
  j["feat_std"] = std::move(stddev);
  {
    std::ostringstream os;
    os << "0x" << std::hex << feeder_hash;
    j["feeder_hash"] = os.str();
  }
  j["config"] = config_echo_json.empty() ? json(nullptr) : json::parse(config_echo_json);

  AtomicFile file(path);
  file.stream() << j.dump(2) << '\n';
  file.commit();
}

PolicyFile load_policy(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw NnError("cannot open model file " + path.string());
  json j;
  in >> j;

  PolicyFile pf;
  pf.params.layer_widths = j.at("layer_widths").get<std::vector<int>>();
  const auto& widths = pf.params.layer_widths;
  for (std::size_t t = 0; t + 1 < widths.size(); ++t) {
    const auto& flat = j.at("weights").at(t);
    Mat w(widths[t + 1], widths[t]);
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = flat.at(k++).get<double>();
    pf.params.weights.push_back(std::move(w));
    const auto& bflat = j.at("biases").at(t);
    Vec b(widths[t + 1]);
    for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = bflat.at(i).get<double>();
    pf.params.biases.push_back(std::move(b));
  }
  pf.params.beta_q = j.at("beta_q").get<double>();
  pf.params.beta_v = j.at("beta_v").get<double>();
  pf.params.betas_initialized = j.value("betas_initialized", true);
  const auto& mean = j.at("feat_mean");
  const auto& stddev = j.at("feat_std");
  pf.params.feat_stats.mean = Vec(mean.size());
  pf.params.feat_stats.stddev = Vec(stddev.size());
  for (std::size_t i = 0; i < mean.size(); ++i) {
    pf.params.feat_stats.mean[static_cast<Eigen::Index>(i)] = mean.at(i).get<double>();
    pf.params.feat_stats.stddev[static_cast<Eigen::Index>(i)] = stddev.at(i).get<double>();
  }
  pf.feeder_hash = std::stoull(j.at("feeder_hash").get<std::string>(), nullptr, 16);
  if (j.contains("config") && !j.at("config").is_null())
    pf.config_echo_json = j.at("config").dump();
  pf.params.validate();
  return pf;
}

}  // namespace vvopt
