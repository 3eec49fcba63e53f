#pragma once

#include "vvopt/opf.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace vvopt {

class DatasetError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// One labeled example: system input y and the dispatch that solves the LCQP.
struct Sample {
  OperatingCondition oc;
  OpfSolution sol;
};

/// Chronologically ordered labeled samples with a train/test boundary.
struct Dataset {
  std::vector<Sample> samples;
  std::uint64_t feeder_hash = 0;
  std::size_t split_index = 0;

  std::span<const Sample> train() const {
    return {samples.data(), split_index};
  }
  std::span<const Sample> test() const {
    return {samples.data() + split_index, samples.size() - split_index};
  }
};

struct ProfileConfig {
  int days = 10;
  int minutes_per_sample = 1;
  /// PV buses; empty means the feeder's DER buses.
  std::vector<int> pv_buses;
  std::uint64_t seed = 0;
  /// Per-bus peak active load / PV output in pu (plumbing knobs).
  double load_scale = 1.0;
  double pv_scale = 1.0;
  /// Uniform multiplicative noise half-width.
  double noise = 0.1;
};

/**
 * Synthesize minute-level diurnal operating conditions: sinusoidal load shape
 * (trough 06:00, peak 18:00) and a solar bell (06:00-18:00), both with bounded
 * multiplicative noise, and q^c = p^c tan(acos(pf)) with pf drawn uniformly
 * from [0.9, 0.95] per node per sample.  Deterministic given the seed.
 */
std::vector<OperatingCondition> generate_profiles(const FeederModel& model,
                                                  const ProfileConfig& config);

struct GenerationStats {
  std::size_t total = 0;
  std::size_t optimal = 0;
  std::size_t softened = 0;
  std::size_t dropped = 0;
};

/**
 * Solve the LCQP for every profile and assemble the labeled dataset in sample
 * order.  Samples that fail even the softened solve are dropped (counted in
 * stats).  split_index = floor(train_fraction * kept).  Solves may run on
 * n_threads; the result is identical for any thread count.
 */
Dataset generate_dataset(const FeederModel& model, const SensitivityPair& s,
                         const std::vector<OperatingCondition>& profiles, double tol,
                         double train_fraction, std::uint64_t feeder_hash = 0,
                         int n_threads = 1, GenerationStats* stats = nullptr);

/// CSV with header t,bus,p_gen,p_load,q_load; one row per (sample, bus).
void write_profiles_csv(const std::filesystem::path& path, const FeederModel& model,
                        const std::vector<OperatingCondition>& profiles);
std::vector<OperatingCondition> read_profiles_csv(const std::filesystem::path& path,
                                                  const FeederModel& model);

/// JSON-lines: header {feeder_hash, split_index, n, bus_order}, then one
/// sample per line {t, y:{pg,pc,qc}, z, objective, status}.
void write_dataset_jsonl(const std::filesystem::path& path, const Dataset& dataset);
Dataset read_dataset_jsonl(const std::filesystem::path& path);

}  // namespace vvopt
