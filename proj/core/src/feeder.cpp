#include "vvopt/feeder.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <map>
#include <queue>
#include <sstream>

namespace vvopt {

namespace {

std::string bus_str(int id) { return std::to_string(id); }

}  // namespace

FeederModel::FeederModel(int reference_id, std::vector<int> bus_ids,
                         std::vector<Line> lines, std::set<int> der_nodes,
                         std::vector<double> q_limits_by_bus, VoltageBounds v_bounds,
                         std::vector<int> load_buses)
    : reference_id_(reference_id),
      bus_ids_(std::move(bus_ids)),
      lines_(std::move(lines)),
      der_nodes_(std::move(der_nodes)),
      load_buses_(std::move(load_buses)),
      v_bounds_(v_bounds) {
  std::sort(bus_ids_.begin(), bus_ids_.end());
  if (std::adjacent_find(bus_ids_.begin(), bus_ids_.end()) != bus_ids_.end())
    throw DuplicateBusError("duplicate bus id in bus list");
  if (std::binary_search(bus_ids_.begin(), bus_ids_.end(), reference_id_))
    throw DuplicateBusError("reference bus " + bus_str(reference_id_) +
                            " also listed as a non-reference bus");

  const int n_buses = n();
  if (n_buses == 0) throw FeederError("feeder has no non-reference buses");
  if (static_cast<int>(lines_.size()) != n_buses)
    throw FeederError("expected " + std::to_string(n_buses) + " lines for " +
                      std::to_string(n_buses) + " non-reference buses, got " +
                      std::to_string(lines_.size()));

  auto known = [&](int id) { return id == reference_id_ || has_bus(id); };
  std::set<std::pair<int, int>> seen;
  for (const Line& l : lines_) {
    if (!known(l.from)) throw UnknownBusError("line endpoint " + bus_str(l.from) + " is not a bus");
    if (!known(l.to)) throw UnknownBusError("line endpoint " + bus_str(l.to) + " is not a bus");
    if (l.from == l.to) throw CycleError("self-loop at bus " + bus_str(l.from));
    if (l.r <= 0.0 || l.x <= 0.0)
      throw NonpositiveImpedanceError("line " + bus_str(l.from) + "-" + bus_str(l.to) +
                                      " has nonpositive impedance");
    auto key = std::minmax(l.from, l.to);
    if (!seen.insert(key).second)
      throw DuplicateLineError("duplicate line " + bus_str(key.first) + "-" + bus_str(key.second));
  }

  // BFS from the reference: with exactly N lines, a revisited bus means a
  // cycle and an unvisited bus means a disconnected component.
  std::map<int, std::vector<int>> adj;
  for (const Line& l : lines_) {
    adj[l.from].push_back(l.to);
    adj[l.to].push_back(l.from);
  }
  if (adj.find(reference_id_) == adj.end())
    throw MissingReferenceError("reference bus " + bus_str(reference_id_) +
                                " is not an endpoint of any line");
  std::set<int> visited{reference_id_};
  std::queue<std::pair<int, int>> frontier;  // (bus, parent)
  frontier.emplace(reference_id_, reference_id_);
  while (!frontier.empty()) {
    auto [bus, parent] = frontier.front();
    frontier.pop();
    for (int next : adj[bus]) {
      if (next == parent) continue;
      if (!visited.insert(next).second)
        throw CycleError("cycle through bus " + bus_str(next));
      frontier.emplace(next, bus);
    }
  }
  for (int id : bus_ids_)
    if (!visited.count(id)) throw DisconnectedBusError("bus " + bus_str(id) + " unreachable from reference");

  if (static_cast<int>(q_limits_by_bus.size()) != n_buses)
    throw FeederError("q_limits size mismatch");
  q_limits_ = Vec::Zero(n_buses);
  for (int i = 0; i < n_buses; ++i) {
    if (q_limits_by_bus[i] < 0.0)
      throw FeederError("negative reactive limit on bus " + bus_str(bus_ids_[i]));
    q_limits_[i] = q_limits_by_bus[i];
  }
  for (int id : der_nodes_) {
    if (!has_bus(id)) throw UnknownBusError("DER bus " + bus_str(id) + " is not a bus");
    der_indices_.push_back(index_of(id));
  }
  std::sort(der_indices_.begin(), der_indices_.end());

  if (load_buses_.empty()) load_buses_ = bus_ids_;
  std::sort(load_buses_.begin(), load_buses_.end());
  load_buses_.erase(std::unique(load_buses_.begin(), load_buses_.end()), load_buses_.end());
  for (int id : load_buses_) {
    if (!has_bus(id)) throw UnknownBusError("load bus " + bus_str(id) + " is not a bus");
    load_indices_.push_back(index_of(id));
  }

  if (!(v_bounds_.lower < 0.0 && 0.0 < v_bounds_.upper))
    throw FeederError("voltage bounds must satisfy lower < 0 < upper");
}

int FeederModel::index_of(int bus_id) const {
  auto it = std::lower_bound(bus_ids_.begin(), bus_ids_.end(), bus_id);
  if (it == bus_ids_.end() || *it != bus_id)
    throw UnknownBusError("bus " + bus_str(bus_id) + " not in feeder");
  return static_cast<int>(it - bus_ids_.begin());
}

bool FeederModel::has_bus(int bus_id) const {
  return std::binary_search(bus_ids_.begin(), bus_ids_.end(), bus_id);
}

FeederModel load_feeder(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FeederError("cannot open feeder file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FeederError("feeder file " + path.string() + ": " + e.what());
  }

  if (!j.contains("reference")) throw MissingReferenceError("feeder file has no \"reference\" key");
  const int reference = j.at("reference").get<int>();

  std::vector<int> buses;
  for (const auto& b : j.at("buses")) buses.push_back(b.get<int>());

  std::vector<Line> lines;
  for (const auto& l : j.at("lines"))
    lines.push_back(Line{l.at("from").get<int>(), l.at("to").get<int>(),
                         l.at("r").get<double>(), l.at("x").get<double>()});

  std::set<int> der;
  std::map<int, double> q_max;
  if (j.contains("der"))
    for (const auto& d : j.at("der")) {
      const int bus = d.at("bus").get<int>();
      der.insert(bus);
      q_max[bus] = d.at("q_max").get<double>();
    }

  VoltageBounds vb;
  if (j.contains("v_bounds")) {
    vb.lower = j.at("v_bounds").at("lower").get<double>();
    vb.upper = j.at("v_bounds").at("upper").get<double>();
  }

  std::vector<int> loads;
  if (j.contains("loads"))
    for (const auto& b : j.at("loads")) loads.push_back(b.get<int>());

  std::vector<int> sorted = buses;
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> q_limits(sorted.size(), 0.0);
  for (size_t i = 0; i < sorted.size(); ++i) {
    auto it = q_max.find(sorted[i]);
    if (it != q_max.end()) q_limits[i] = it->second;
  }
  return FeederModel(reference, std::move(buses), std::move(lines), std::move(der),
                     std::move(q_limits), vb, std::move(loads));
}

SensitivityPair build_sensitivities(const FeederModel& model) {
  const int n = model.n();
  // Parent pointers and per-bus root-path impedance prefixes via BFS.
  std::map<int, std::vector<std::pair<int, const Line*>>> adj;
  for (const Line& l : model.lines()) {
    adj[l.from].emplace_back(l.to, &l);
    adj[l.to].emplace_back(l.from, &l);
  }
  const int ref = model.reference_id();
  std::map<int, int> parent;    // bus -> parent bus
  std::map<int, int> depth;     // edges from root
  std::map<int, double> rpath;  // summed r on root path
  std::map<int, double> xpath;  // summed x on root path
  parent[ref] = ref;
  depth[ref] = 0;
  rpath[ref] = 0.0;
  xpath[ref] = 0.0;
  std::queue<int> frontier;
  frontier.push(ref);
  while (!frontier.empty()) {
    int bus = frontier.front();
    frontier.pop();
    for (auto [next, line] : adj[bus]) {
      if (parent.count(next)) continue;
      parent[next] = bus;
      depth[next] = depth[bus] + 1;
      rpath[next] = rpath[bus] + line->r;
      xpath[next] = xpath[bus] + line->x;
      frontier.push(next);
    }
  }

  // Common-path impedance equals the root-path impedance of the lowest
  // common ancestor, found by walking parents.
  auto lca = [&](int a, int b) {
    while (depth[a] > depth[b]) a = parent[a];
    while (depth[b] > depth[a]) b = parent[b];
    while (a != b) {
      a = parent[a];
      b = parent[b];
    }
    return a;
  };

  SensitivityPair s;
  s.R = Mat::Zero(n, n);
  s.X = Mat::Zero(n, n);
  s.bus_order = model.bus_ids();
  for (int i = 0; i < n; ++i) {
    for (int k = i; k < n; ++k) {
      const int anc = lca(s.bus_order[i], s.bus_order[k]);
      s.R(i, k) = s.R(k, i) = rpath[anc];
      s.X(i, k) = s.X(k, i) = xpath[anc];
    }
  }
  return s;
}

Vec voltage_deviation(const SensitivityPair& s, const Vec& p, const Vec& q) {
  if (p.size() != s.R.rows() || q.size() != s.X.rows())
    throw std::invalid_argument("voltage_deviation: dimension mismatch");
  return s.R * p + s.X * q;
}

std::uint64_t feeder_file_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FeederError("cannot open feeder file " + path.string());
  std::uint64_t h = 1469598103934665603ull;
  char c;
  while (in.get(c)) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace vvopt
