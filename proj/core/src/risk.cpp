#include "vvopt/risk.hpp"

#include "vvopt/io_util.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace vvopt {

namespace {

void check_inputs(std::span<const double> losses, double alpha) {
  if (losses.empty()) throw RiskError("empty loss sample");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw RiskError("alpha must lie in (0, 1]");
}

std::vector<double> sorted_ascending(std::span<const double> losses) {
  std::vector<double> v(losses.begin(), losses.end());
  std::sort(v.begin(), v.end());
  return v;
}

double stable_softplus(double t) {
  return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
}

double sigmoid(double t) {
  return t >= 0.0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
}

}  // namespace

double value_at_risk(std::span<const double> losses, double alpha) {
  check_inputs(losses, alpha);
  const auto k_count = static_cast<std::size_t>(losses.size());
  auto rank = static_cast<std::size_t>(std::ceil((1.0 - alpha) * k_count));
  rank = std::clamp<std::size_t>(rank, 1, k_count);
  std::vector<double> v = sorted_ascending(losses);
  return v[rank - 1];
}

double cvar_indicator(std::span<const double> losses, double alpha) {
  check_inputs(losses, alpha);
  const double exact = alpha * losses.size();
  const auto m = static_cast<std::size_t>(std::llround(exact));
  if (m < 1 || std::abs(exact - static_cast<double>(m)) > 1e-9 * losses.size())
    throw RiskError("cvar_indicator requires alpha*K to be a positive integer");
  std::vector<double> v = sorted_ascending(losses);
  const double top = std::accumulate(v.end() - m, v.end(), 0.0);
  return top / static_cast<double>(m);
}

RockafellarResult cvar_rockafellar(std::span<const double> losses, double alpha) {
  check_inputs(losses, alpha);
  const std::vector<double> v = sorted_ascending(losses);
  const std::size_t k_count = v.size();
  const double scale = 1.0 / (alpha * static_cast<double>(k_count));

  // Suffix sums let each candidate objective be evaluated in O(1):
  // J(v[j]) = v[j] + scale * (suffix[j] - (K-j) * v[j]).
  std::vector<double> suffix(k_count + 1, 0.0);
  for (std::size_t j = k_count; j-- > 0;) suffix[j] = suffix[j + 1] + v[j];

  RockafellarResult best{std::numeric_limits<double>::infinity(), 0.0};
  for (std::size_t j = 0; j < k_count; ++j) {
    const double beta = v[j];
    const double hinge_sum = suffix[j] - static_cast<double>(k_count - j) * beta;
    const double objective = beta + scale * hinge_sum;
    if (objective < best.cvar) {
      best.cvar = objective;
      best.beta_star = beta;
    }
  }
  return best;
}

double smoothed_cvar(std::span<const double> losses, double alpha, double beta,
                     double sharpness) {
  check_inputs(losses, alpha);
  if (sharpness <= 0.0) throw RiskError("sharpness must be positive");
  double acc = 0.0;
  for (double l : losses) acc += sharpness * stable_softplus((l - beta) / sharpness);
  return beta + acc / (alpha * static_cast<double>(losses.size()));
}

double smoothed_cvar_beta_grad(std::span<const double> losses, double alpha, double beta,
                               double sharpness) {
  check_inputs(losses, alpha);
  if (sharpness <= 0.0) throw RiskError("sharpness must be positive");
  double acc = 0.0;
  for (double l : losses) acc += sigmoid((l - beta) / sharpness);
  return 1.0 - acc / (alpha * static_cast<double>(losses.size()));
}

RiskReport make_risk_report(std::span<const double> losses, double alpha) {
  check_inputs(losses, alpha);
  RiskReport report;
  report.alpha = alpha;
  report.n_samples = losses.size();
  const auto rocka = cvar_rockafellar(losses, alpha);
  report.cvar = rocka.cvar;
  report.var = rocka.beta_star;
  report.mean = std::accumulate(losses.begin(), losses.end(), 0.0) /
                static_cast<double>(losses.size());
  report.max = *std::max_element(losses.begin(), losses.end());
  return report;
}

RiskReport voltage_risk(const std::vector<Vec>& v_samples, double alpha) {
  if (v_samples.empty()) throw RiskError("empty voltage sample");
  std::vector<double> losses;
  losses.reserve(v_samples.size());
  for (const Vec& v : v_samples) losses.push_back(v.cwiseAbs().maxCoeff());
  return make_risk_report(losses, alpha);
}

Histogram make_histogram(std::span<const double> values, int bins) {
  if (values.empty()) throw RiskError("empty histogram input");
  if (bins < 1) throw RiskError("histogram needs at least one bin");
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it;
  double width = (*hi_it - lo) / bins;
  if (width <= 0.0) width = 1.0;

  Histogram hist;
  hist.counts.assign(bins, 0);
  for (int b = 0; b <= bins; ++b) hist.edges.push_back(lo + b * width);
  for (double x : values) {
    auto b = static_cast<long>((x - lo) / width);
    b = std::clamp<long>(b, 0, bins - 1);
    ++hist.counts[static_cast<std::size_t>(b)];
  }
  return hist;
}

std::string to_json_string(const RiskReport& report) {
  nlohmann::json j;
  j["alpha"] = report.alpha;
  j["var"] = report.var;
  j["cvar"] = report.cvar;
  j["mean"] = report.mean;
  j["max"] = report.max;
  j["n_samples"] = report.n_samples;
  return j.dump();
}

void write_histogram_csv(const std::filesystem::path& path, const Histogram& hist) {
  AtomicFile file(path);
  auto& out = file.stream();
  out << "bin_lo,bin_hi,count\n";
  for (std::size_t b = 0; b < hist.counts.size(); ++b)
    out << fmt_double(hist.edges[b]) << ',' << fmt_double(hist.edges[b + 1]) << ','
        << hist.counts[b] << '\n';
  file.commit();
}

}  // namespace vvopt
