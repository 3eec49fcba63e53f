#pragma once

#include "vvopt/feeder.hpp"

#include <cstddef>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace vvopt {

class RiskError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Tail statistics of an empirical loss distribution at significance alpha.
struct RiskReport {
  double alpha = 0.0;
  double var = 0.0;
  double cvar = 0.0;
  double mean = 0.0;
  double max = 0.0;
  std::size_t n_samples = 0;
};

/**
 * Empirical value-at-risk: the ceil((1-alpha)K)-th ascending order statistic
 * (clamped to the first for alpha = 1).  This is the smallest beta with at
 * least (1-alpha)K losses <= beta, i.e. the left endpoint of the Rockafellar
 * minimizer set, so var() always equals cvar_rockafellar().beta_star.
 */
double value_at_risk(std::span<const double> losses, double alpha);

/// Mean of the alpha*K largest losses.  Requires alpha*K to be a positive
/// integer; cvar_rockafellar is the general-alpha definition.
double cvar_indicator(std::span<const double> losses, double alpha);

struct RockafellarResult {
  double cvar = 0.0;
  double beta_star = 0.0;
};

/// Exact minimum of beta + (1/(alpha K)) sum [l_k - beta]_+ over beta,
/// evaluated at every sample value (the minimum is attained at one); returns
/// the smallest minimizing beta.
RockafellarResult cvar_rockafellar(std::span<const double> losses, double alpha);

/// Softplus-smoothed Rockafellar objective at a fixed beta:
/// beta + (1/(alpha K)) sum tau*log(1+exp((l_k-beta)/tau)).  Overflow-safe.
double smoothed_cvar(std::span<const double> losses, double alpha, double beta,
                     double sharpness);

/// d smoothed_cvar / d beta = 1 - (1/(alpha K)) sum sigmoid((l_k-beta)/tau).
double smoothed_cvar_beta_grad(std::span<const double> losses, double alpha, double beta,
                               double sharpness);

RiskReport make_risk_report(std::span<const double> losses, double alpha);

/// Reduces each voltage sample to max_n |v_n| and reports the tail risk of
/// those per-sample worst deviations.
RiskReport voltage_risk(const std::vector<Vec>& v_samples, double alpha);

struct Histogram {
  std::vector<double> edges;        // bins + 1 entries
  std::vector<std::size_t> counts;  // bins entries
};

Histogram make_histogram(std::span<const double> values, int bins);

std::string to_json_string(const RiskReport& report);
void write_histogram_csv(const std::filesystem::path& path, const Histogram& hist);

}  // namespace vvopt
