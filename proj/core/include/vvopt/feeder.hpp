#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace vvopt {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Base class for all feeder-description validation failures.
class FeederError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class MissingReferenceError : public FeederError {
public:
  using FeederError::FeederError;
};
class DuplicateBusError : public FeederError {
public:
  using FeederError::FeederError;
};
class DuplicateLineError : public FeederError {
public:
  using FeederError::FeederError;
};
class CycleError : public FeederError {
public:
  using FeederError::FeederError;
};
class DisconnectedBusError : public FeederError {
public:
  using FeederError::FeederError;
};
class NonpositiveImpedanceError : public FeederError {
public:
  using FeederError::FeederError;
};
class UnknownBusError : public FeederError {
public:
  using FeederError::FeederError;
};

/// One distribution line segment, impedances in per-unit.
struct Line {
  int from = 0;
  int to = 0;
  double r = 0.0;
  double x = 0.0;
};

/// Allowed per-unit voltage deviation from the reference bus, lower < 0 < upper.
struct VoltageBounds {
  double lower = -0.05;
  double upper = 0.05;
};

/**
 * Radial feeder: a tree of N+1 buses rooted at the reference bus, with
 * controllable reactive capability on a subset of buses.
 *
 * Immutable after construction; safe to share read-only across threads.
 * Bus order (and hence every vector/matrix index in the library) is the
 * ascending order of non-reference bus ids.
 */
class FeederModel {
public:
  /// Validates the description and throws a named FeederError on the first
  /// violated invariant (tree structure, positive impedances, unique ids, ...).
  FeederModel(int reference_id, std::vector<int> bus_ids, std::vector<Line> lines,
              std::set<int> der_nodes, std::vector<double> q_limits_by_bus,
              VoltageBounds v_bounds, std::vector<int> load_buses = {});

  int reference_id() const { return reference_id_; }
  const std::vector<int>& bus_ids() const { return bus_ids_; }
  const std::vector<Line>& lines() const { return lines_; }
  const std::set<int>& der_nodes() const { return der_nodes_; }
  const std::vector<int>& load_buses() const { return load_buses_; }
  const Vec& q_limits() const { return q_limits_; }
  VoltageBounds v_bounds() const { return v_bounds_; }

  /// Number of non-reference buses N.
  int n() const { return static_cast<int>(bus_ids_.size()); }

  /// Position of a non-reference bus id in the canonical bus order.
  int index_of(int bus_id) const;
  bool has_bus(int bus_id) const;

  /// Indices (bus order) of the DER buses, ascending.
  const std::vector<int>& der_indices() const { return der_indices_; }
  /// Indices (bus order) of the load buses, ascending.
  const std::vector<int>& load_indices() const { return load_indices_; }

private:
  int reference_id_;
  std::vector<int> bus_ids_;
  std::vector<Line> lines_;
  std::set<int> der_nodes_;
  std::vector<int> load_buses_;
  Vec q_limits_;
  VoltageBounds v_bounds_;
  std::vector<int> der_indices_;
  std::vector<int> load_indices_;
};

/**
 * Voltage sensitivity matrices of the linearized DistFlow model,
 * v = R p + X q, in the magnitude-deviation convention (v is the per-unit
 * deviation from the reference voltage, injections positive).
 *
 * Entry (i, j) is the summed resistance (reactance) over the common portion
 * of the root-to-i and root-to-j paths.  Symmetric, entrywise nonnegative,
 * positive definite for a connected radial feeder.
 */
struct SensitivityPair {
  Mat R;
  Mat X;
  std::vector<int> bus_order;
};

/// Parse and validate a feeder JSON file (keys: reference, buses, lines,
/// der, v_bounds, optional loads).  Bus order is deterministic (sorted ids).
FeederModel load_feeder(const std::filesystem::path& path);

/// Build R and X by explicit path-intersection sums, O(N^2).
SensitivityPair build_sensitivities(const FeederModel& model);

/// v = R p + X q.  Throws std::invalid_argument on dimension mismatch.
Vec voltage_deviation(const SensitivityPair& s, const Vec& p, const Vec& q);

/// FNV-1a hash of the file bytes; identifies the feeder a dataset/model was
/// built against.
std::uint64_t feeder_file_hash(const std::filesystem::path& path);

}  // namespace vvopt
