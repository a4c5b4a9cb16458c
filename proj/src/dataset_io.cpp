#include "kalmanuq/dataset_io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

#include <nlohmann/json.hpp>

#include "kalmanuq/errors.hpp"

namespace kalmanuq {

namespace {

using nlohmann::json;

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) fields.push_back(field);
  return fields;
}

double parse_double(const std::string& s) {
  try {
    return std::stod(s);
  } catch (const std::exception&) {
    throw IoError("malformed numeric field: " + s);
  }
}

}  // namespace

std::string format_value(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string sidecar_path(const std::string& csv_path) {
  const std::string suffix = ".csv";
  if (csv_path.size() > suffix.size() &&
      csv_path.compare(csv_path.size() - suffix.size(), suffix.size(),
                       suffix) == 0)
    return csv_path.substr(0, csv_path.size() - suffix.size()) + ".json";
  return csv_path + ".json";
}

void write_dataset_csv(const Dataset& dataset, const std::string& csv_path) {
  const int m = dataset.model.state_dim;
  const int n = dataset.model.obs_dim;

  std::ofstream out(csv_path);
  if (!out) throw IoError("cannot open for writing: " + csv_path);

  out << "traj_id,t";
  for (int j = 1; j <= m; ++j) out << ",x_" << j;
  for (int j = 1; j <= n; ++j) out << ",y_" << j;
  out << "\n";

  for (int i = 0; i < dataset.count(); ++i) {
    const Trajectory& traj = dataset.trajectories[i];
    // t = 0: initial state, no observation exists; pad with zeros.
    out << i << ",0";
    for (int j = 0; j < m; ++j) out << "," << format_value(traj.x0(j));
    for (int j = 0; j < n; ++j) out << "," << format_value(0.0);
    out << "\n";
    for (int t = 1; t <= traj.horizon(); ++t) {
      out << i << "," << t;
      const Eigen::VectorXd& x = traj.states[t - 1];
      const Eigen::VectorXd& y = traj.observations[t - 1];
      for (int j = 0; j < m; ++j) out << "," << format_value(x(j));
      for (int j = 0; j < n; ++j) out << "," << format_value(y(j));
      out << "\n";
    }
  }
  if (!out) throw IoError("write failed: " + csv_path);
  out.close();

  json side;
  side["model_tag"] = to_string(dataset.model.tag);
  side["m"] = m;
  side["n"] = n;
  side["T"] = dataset.horizon;
  side["count"] = dataset.count();
  side["snr_db"] = dataset.model.snr_db;
  side["seed"] = dataset.seed;
  json mis;
  switch (dataset.mismatch.kind) {
    case MismatchConfig::Kind::none:
      mis["kind"] = "none";
      break;
    case MismatchConfig::Kind::process_noise:
      mis["kind"] = "process_noise";
      break;
    case MismatchConfig::Kind::observation_noise:
      mis["kind"] = "observation_noise";
      break;
    case MismatchConfig::Kind::evolution_model:
      mis["kind"] = "evolution_model";
      break;
  }
  mis["factor"] = dataset.mismatch.factor;
  side["mismatch"] = mis;

  std::ofstream sout(sidecar_path(csv_path));
  if (!sout) throw IoError("cannot open for writing: " + sidecar_path(csv_path));
  sout << side.dump(2) << "\n";
}

Dataset read_dataset_csv(const std::string& csv_path) {
  std::ifstream sin(sidecar_path(csv_path));
  if (!sin) throw IoError("missing sidecar: " + sidecar_path(csv_path));
  json side;
  try {
    sin >> side;
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed sidecar: ") + e.what());
  }

  Dataset ds;
  try {
    const ModelTag tag = model_tag_from_string(side.at("model_tag"));
    const double snr_db = side.at("snr_db");
    MismatchConfig mismatch;
    mismatch.kind = mismatch_kind_from_string(side.at("mismatch").at("kind"));
    mismatch.factor = side.at("mismatch").at("factor");

    // Rebuild the data-generating model: nominal model at the recorded tag
    // unless the mismatch swapped or rescaled it.
    if (mismatch.kind == MismatchConfig::Kind::evolution_model) {
      ds.model = make_ca_model(snr_db);
    } else {
      ds.model = apply_mismatch(make_model(tag, snr_db), mismatch).first;
    }
    ds.mismatch = mismatch;
    ds.horizon = side.at("T");
    ds.seed = side.at("seed");

    const int m = side.at("m");
    const int n = side.at("n");
    if (m != ds.model.state_dim || n != ds.model.obs_dim)
      throw IoError("sidecar dimensions do not match the recorded model");

    std::ifstream in(csv_path);
    if (!in) throw IoError("cannot open: " + csv_path);
    std::string line;
    if (!std::getline(in, line)) throw IoError("empty dataset file");

    const int count = side.at("count");
    ds.trajectories.assign(count, Trajectory{});

    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto fields = split_csv_line(line);
      if (static_cast<int>(fields.size()) != 2 + m + n)
        throw IoError("row has wrong field count");
      const int traj_id = static_cast<int>(parse_double(fields[0]));
      const int t = static_cast<int>(parse_double(fields[1]));
      if (traj_id < 0 || traj_id >= count)
        throw IoError("trajectory id out of range");
      Trajectory& traj = ds.trajectories[traj_id];
      Eigen::VectorXd x(m);
      for (int j = 0; j < m; ++j) x(j) = parse_double(fields[2 + j]);
      if (t == 0) {
        traj.x0 = x;
      } else {
        if (t != traj.horizon() + 1) throw IoError("non-contiguous time index");
        Eigen::VectorXd y(n);
        for (int j = 0; j < n; ++j) y(j) = parse_double(fields[2 + m + j]);
        traj.states.push_back(x);
        traj.observations.push_back(y);
      }
    }

    for (const auto& traj : ds.trajectories) {
      if (traj.x0.size() != m || traj.horizon() != ds.horizon)
        throw IoError("incomplete trajectory in dataset file");
    }
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed sidecar: ") + e.what());
  }
  return ds;
}

}  // namespace kalmanuq
