#pragma once

#include "vvopt/dataset.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace vvopt {

class NnError : public std::runtime_error {
public:
  using NnError_base = std::runtime_error;
  using NnError_base::NnError_base;
};

/// Per-feature normalization statistics frozen from the training split.
struct FeatureStats {
  Vec mean;
  Vec stddev;  // > 0; zero-variance features get 1
};

/**
 * Parameters of the decision rule shared by every DER node: the MLP weights
 * and biases, the two auxiliary CVaR thresholds updated jointly with them,
 * and the input normalization statistics.
 */
struct PolicyParams {
  std::vector<int> layer_widths;  // input, hidden..., 1
  std::vector<Mat> weights;       // weights[t]: widths[t+1] x widths[t]
  std::vector<Vec> biases;
  double beta_q = 0.0;
  double beta_v = 0.0;
  bool betas_initialized = false;
  FeatureStats feat_stats;

  std::size_t layer_count() const { return weights.size(); }
  std::size_t scalar_count() const;
  void validate() const;
};

/// Local measurements plus the feeder-head broadcast:
/// [p^g_n, p^c_n, q^c_n, sum(p^c) - sum(p^g), sum(q^c)].
inline constexpr int kFeatureCount = 5;

Vec node_features(const OperatingCondition& oc, int node_index);

/// Glorot-uniform weights, zero biases, identity normalization.
PolicyParams make_policy(const std::vector<int>& hidden_widths, std::uint64_t seed);

/// Per-feature mean/stddev over every (sample, DER node) feature vector of
/// the training split; zero-variance features get stddev 1.
FeatureStats compute_feature_stats(std::span<const Sample> train_split,
                                   const FeederModel& model);

/// MLP forward pass; normalization is applied inside using feat_stats.
/// ReLU on hidden layers, identity output.
double forward(const PolicyParams& params, const Vec& features);

/// Applies the shared net on every DER node of the feeder (zeros elsewhere).
/// When clamp >= 0 is taken from the feeder limits the output is saturated to
/// [-q_max_n, q_max_n]; training never clamps.
Vec predict_all(const PolicyParams& params, const OperatingCondition& oc,
                const FeederModel& model, bool clamp_output = false);

struct Gradients {
  std::vector<Mat> w;
  std::vector<Vec> b;

  static Gradients zeros_like(const PolicyParams& params);
  void add_scaled(const Gradients& other, double factor);
  void scale(double factor);
  double squared_norm() const;
};

struct LossValue {
  double total = 0.0;
  double mse = 0.0;
  double cvar_q = 0.0;
  double cvar_v = 0.0;
};

struct LossGrad {
  LossValue value;
  Gradients grads;
  double grad_beta_q = 0.0;
  double grad_beta_v = 0.0;
};

using Batch = std::span<const Sample* const>;

enum class LossMode { mse, mse_cvar_q, mse_cvar_qv };

std::string to_string(LossMode mode);
LossMode loss_mode_from_string(const std::string& s);
inline bool has_cvar_q(LossMode m) { return m != LossMode::mse; }
inline bool has_cvar_v(LossMode m) { return m == LossMode::mse_cvar_qv; }

struct LossConfig {
  LossMode mode = LossMode::mse;
  double lambda_q = 1.0;
  double lambda_v = 1.0;
  double alpha = 0.2;
  double tau = 1e-2;
};

/// Squared prediction error of one sample summed over DER nodes.
double sample_q_loss(const PolicyParams& params, const Sample& sample,
                     const FeederModel& model);
/// Exact worst absolute predicted voltage deviation of one sample.
double sample_v_loss(const PolicyParams& params, const Sample& sample,
                     const FeederModel& model, const SensitivityPair& s);

std::vector<double> per_sample_q_losses(const PolicyParams& params, Batch batch,
                                        const FeederModel& model);
std::vector<double> per_sample_v_losses(const PolicyParams& params, Batch batch,
                                        const FeederModel& model, const SensitivityPair& s);

/// Batch-mean squared prediction error and its exact backpropagated gradient.
LossGrad mse_loss_grad(const PolicyParams& params, Batch batch, const FeederModel& model);

/// Softplus-smoothed CVaR of per-sample squared prediction errors at
/// beta = params.beta_q; gradients weight each sample's backprop path by
/// sigmoid((l_k - beta)/tau), and grad_beta_q = 1 - mean weight / alpha.
LossGrad cvar_q_loss_grad(const PolicyParams& params, Batch batch, const FeederModel& model,
                          double alpha, double tau);

/// Smoothed CVaR of per-sample voltage losses at beta = params.beta_v, where
/// the per-sample loss is a log-sum-exp smooth max of |v_n| at temperature
/// tau; gradients flow through X into the shared weights of every DER node.
LossGrad cvar_v_loss_grad(const PolicyParams& params, Batch batch, const FeederModel& model,
                          const SensitivityPair& s, double alpha, double tau);

/// mse + lambda_q * cvar_q + lambda_v * cvar_v per the configured mode,
/// with gradients (including the beta gradients) weighted accordingly.
LossGrad combined_loss_grad(const PolicyParams& params, Batch batch,
                            const FeederModel& model, const SensitivityPair* s,
                            const LossConfig& cfg);

/// Model file round-trip (JSON: widths, row-major weights, biases, betas,
/// feature stats, feeder hash, training-config echo).
void save_policy(const std::filesystem::path& path, const PolicyParams& params,
                 std::uint64_t feeder_hash, const std::string& config_echo_json);

struct PolicyFile {
  PolicyParams params;
  std::uint64_t feeder_hash = 0;
  std::string config_echo_json;
};

PolicyFile load_policy(const std::filesystem::path& path);

}  // namespace vvopt
