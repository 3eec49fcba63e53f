#include "vvopt/dataset.hpp"

#include "vvopt/io_util.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <thread>

namespace vvopt {

namespace {

using nlohmann::json;

double diurnal_load_shape(double day_fraction) {
  // Trough at 06:00, peak at 18:00.
  return 0.6 + 0.3 * std::sin(2.0 * std::numbers::pi * day_fraction - std::numbers::pi);
}

double solar_shape(double day_fraction) {
  if (day_fraction < 0.25 || day_fraction > 0.75) return 0.0;
  return std::sin(std::numbers::pi * (day_fraction - 0.25) / 0.5);
}

std::string hash_hex(std::uint64_t h) {
  std::ostringstream os;
  os << "0x" << std::hex << h;
  return os.str();
}

std::uint64_t hash_from_hex(const std::string& s) {
  return std::stoull(s, nullptr, 16);
}

json vec_to_json(const Vec& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Vec vec_from_json(const json& a) {
  Vec v(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
  return v;
}

}  // namespace

std::vector<OperatingCondition> generate_profiles(const FeederModel& model,
                                                  const ProfileConfig& config) {
  if (config.days <= 0 || config.minutes_per_sample <= 0)
    throw DatasetError("profile config requires positive days and minutes_per_sample");
  const int per_day = 1440 / config.minutes_per_sample;
  const long count = static_cast<long>(config.days) * per_day;
  const int n = model.n();

  std::vector<int> pv_indices;
  if (config.pv_buses.empty()) {
    pv_indices = model.der_indices();
  } else {
    for (int bus : config.pv_buses) pv_indices.push_back(model.index_of(bus));
    std::sort(pv_indices.begin(), pv_indices.end());
  }

  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_real_distribution<double> pf_draw(0.9, 0.95);

  std::vector<OperatingCondition> out;
  out.reserve(count);
  for (long t = 0; t < count; ++t) {
    const double day_fraction =
        (static_cast<double>((t * config.minutes_per_sample) % 1440)) / 1440.0;
    OperatingCondition oc;
    oc.timestamp = t;
    oc.p_gen = Vec::Zero(n);
    oc.p_load = Vec::Zero(n);
    oc.q_load = Vec::Zero(n);
    const double load_shape = diurnal_load_shape(day_fraction);
    for (int i : model.load_indices()) {
      const double wiggle = 1.0 + config.noise * unit(rng);
      const double pf = pf_draw(rng);
      const double pc = std::max(0.0, config.load_scale * load_shape * wiggle);
      oc.p_load[i] = pc;
      oc.q_load[i] = pc * std::sqrt(1.0 - pf * pf) / pf;
    }
    const double pv = solar_shape(day_fraction);
    for (int i : pv_indices) {
      const double wiggle = 1.0 + config.noise * unit(rng);
      oc.p_gen[i] = std::max(0.0, config.pv_scale * pv * wiggle);
    }
    out.push_back(std::move(oc));
  }
  return out;
}

Dataset generate_dataset(const FeederModel& model, const SensitivityPair& s,
                         const std::vector<OperatingCondition>& profiles, double tol,
                         double train_fraction, std::uint64_t feeder_hash, int n_threads,
                         GenerationStats* stats) {
  if (profiles.empty()) throw DatasetError("no profiles to solve");
  if (train_fraction <= 0.0 || train_fraction >= 1.0)
    throw DatasetError("train_fraction must lie in (0, 1)");

  SolverOptions opts;
  opts.tol = tol;
  const LcqpSolver solver(model, s, opts);

  struct Slot {
    OpfSolution sol;
    bool ok = false;
  };
  std::vector<Slot> slots(profiles.size());
  auto solve_range = [&](std::size_t begin, std::size_t end) {
    for (std::size_t k = begin; k < end; ++k) {
      try {
        slots[k].sol = solver.solve(profiles[k]);
        slots[k].ok = slots[k].sol.status != SolveStatus::infeasible;
      } catch (const IterationCapError&) {
        slots[k].ok = false;
      }
    }
  };

  const int workers = std::max(1, n_threads);
  if (workers == 1 || profiles.size() < 2) {
    solve_range(0, profiles.size());
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (profiles.size() + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
      const std::size_t begin = w * chunk;
      const std::size_t end = std::min(profiles.size(), begin + chunk);
      if (begin >= end) break;
      pool.emplace_back(solve_range, begin, end);
    }
    for (auto& th : pool) th.join();
  }

  Dataset ds;
  ds.feeder_hash = feeder_hash;
  GenerationStats local;
  local.total = profiles.size();
  for (std::size_t k = 0; k < profiles.size(); ++k) {
    if (!slots[k].ok) {
      ++local.dropped;
      continue;
    }
    if (slots[k].sol.status == SolveStatus::optimal)
      ++local.optimal;
    else
      ++local.softened;
    ds.samples.push_back(Sample{profiles[k], std::move(slots[k].sol)});
  }
  if (ds.samples.empty()) throw DatasetError("all samples infeasible");
  ds.split_index = static_cast<std::size_t>(train_fraction * ds.samples.size());
  if (ds.split_index == 0 || ds.split_index >= ds.samples.size())
    throw DatasetError("train/test split is degenerate for this sample count");
  if (stats) *stats = local;
  return ds;
}

void write_profiles_csv(const std::filesystem::path& path, const FeederModel& model,
                        const std::vector<OperatingCondition>& profiles) {
  AtomicFile file(path);
  auto& out = file.stream();
  out << "t,bus,p_gen,p_load,q_load\n";
  for (const auto& oc : profiles) {
    for (int i = 0; i < model.n(); ++i) {
      out << oc.timestamp << ',' << model.bus_ids()[i] << ',' << fmt_double(oc.p_gen[i])
          << ',' << fmt_double(oc.p_load[i]) << ',' << fmt_double(oc.q_load[i]) << '\n';
    }
  }
  file.commit();
}

std::vector<OperatingCondition> read_profiles_csv(const std::filesystem::path& path,
                                                  const FeederModel& model) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open profiles file " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("t,bus,", 0) != 0)
    throw DatasetError("profiles file missing t,bus,... header");

  std::vector<OperatingCondition> out;
  std::map<long, std::size_t> index_of_t;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string field;
    std::getline(row, field, ',');
    const long t = std::stol(field);
    std::getline(row, field, ',');
    const int bus = std::stoi(field);
    double vals[3];
    for (double& v : vals) {
      std::getline(row, field, ',');
      v = std::stod(field);
    }
    auto [it, fresh] = index_of_t.try_emplace(t, out.size());
    if (fresh) {
      OperatingCondition oc;
      oc.timestamp = t;
      oc.p_gen = Vec::Zero(model.n());
      oc.p_load = Vec::Zero(model.n());
      oc.q_load = Vec::Zero(model.n());
      out.push_back(std::move(oc));
    }
    OperatingCondition& oc = out[it->second];
    const int i = model.index_of(bus);
    oc.p_gen[i] = vals[0];
    oc.p_load[i] = vals[1];
    oc.q_load[i] = vals[2];
  }
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });
  return out;
}

void write_dataset_jsonl(const std::filesystem::path& path, const Dataset& dataset) {
  AtomicFile file(path);
  auto& out = file.stream();
  json header;
  header["feeder_hash"] = hash_hex(dataset.feeder_hash);
  header["split_index"] = dataset.split_index;
  header["n_samples"] = dataset.samples.size();
  out << header.dump() << '\n';
  for (const auto& sample : dataset.samples) {
    json j;
    j["t"] = sample.oc.timestamp;
    j["y"]["pg"] = vec_to_json(sample.oc.p_gen);
    j["y"]["pc"] = vec_to_json(sample.oc.p_load);
    j["y"]["qc"] = vec_to_json(sample.oc.q_load);
    j["z"] = vec_to_json(sample.sol.q_gen);
    j["objective"] = sample.sol.objective;
    j["status"] = to_string(sample.sol.status);
    out << j.dump() << '\n';
  }
  file.commit();
}

Dataset read_dataset_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open dataset file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DatasetError("dataset file is empty");
  json header = json::parse(line);

  Dataset ds;
  ds.feeder_hash = hash_from_hex(header.at("feeder_hash").get<std::string>());
  ds.split_index = header.at("split_index").get<std::size_t>();
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    Sample sample;
    sample.oc.timestamp = j.at("t").get<long>();
    sample.oc.p_gen = vec_from_json(j.at("y").at("pg"));
    sample.oc.p_load = vec_from_json(j.at("y").at("pc"));
    sample.oc.q_load = vec_from_json(j.at("y").at("qc"));
    sample.sol.q_gen = vec_from_json(j.at("z"));
    sample.sol.objective = j.at("objective").get<double>();
    sample.sol.status = solve_status_from_string(j.at("status").get<std::string>());
    ds.samples.push_back(std::move(sample));
  }
  if (header.contains("n_samples") &&
      header.at("n_samples").get<std::size_t>() != ds.samples.size())
    throw DatasetError("dataset sample count does not match its header");
  if (ds.samples.empty()) throw DatasetError("dataset has no samples");
  if (ds.split_index == 0 || ds.split_index >= ds.samples.size())
    throw DatasetError("dataset split_index out of range");
  return ds;
}

}  // namespace vvopt
