#include "kalmanuq/checkpoint.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "kalmanuq/errors.hpp"

namespace kalmanuq {

namespace {

using nlohmann::json;

json matrix_to_json(const Eigen::MatrixXd& m) {
  json entry;
  entry["shape"] = {m.rows(), m.cols()};
  json data = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
  entry["data"] = std::move(data);
  return entry;
}

Eigen::MatrixXd matrix_from_json(const json& entry) {
  const auto& shape = entry.at("shape");
  const Eigen::Index rows = shape.at(0), cols = shape.at(1);
  const auto& data = entry.at("data");
  if (static_cast<Eigen::Index>(data.size()) != rows * cols)
    throw IoError("checkpoint entry data length does not match its shape");
  Eigen::MatrixXd m(rows, cols);
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = data.at(k++);
  return m;
}

}  // namespace

Checkpoint Checkpoint::from_params(const ParameterSet& params) {
  Checkpoint ckpt;
  for (const auto& e : params.entries()) ckpt.params[e.path] = e.var.value();
  return ckpt;
}

void Checkpoint::apply_to(ParameterSet& target) const {
  if (params.size() != target.entries().size())
    throw ConfigError("checkpoint parameter count mismatch");
  for (const auto& [path, value] : params) {
    Value* var = target.find(path);
    if (var == nullptr)
      throw ConfigError("checkpoint parameter not in network: " + path);
    if (var->value().rows() != value.rows() ||
        var->value().cols() != value.cols())
      throw ConfigError("checkpoint shape mismatch for " + path);
    var->node()->value = value;
  }
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  json root;
  root["format_version"] = ckpt.format_version;
  json params = json::object();
  for (const auto& [name, value] : ckpt.params)
    params[name] = matrix_to_json(value);
  root["params"] = std::move(params);
  json buffers = json::object();
  for (const auto& [name, value] : ckpt.buffers)
    buffers[name] = matrix_to_json(value);
  root["buffers"] = std::move(buffers);
  root["meta"] = ckpt.meta;

  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << root.dump(2) << "\n";
  if (!out) throw IoError("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path);
  json root;
  try {
    in >> root;
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed checkpoint: ") + e.what());
  }

  Checkpoint ckpt;
  try {
    ckpt.format_version = root.at("format_version");
    if (ckpt.format_version != Checkpoint::kFormatVersion)
      throw IoError("unsupported checkpoint format version");
    for (const auto& [name, entry] : root.at("params").items())
      ckpt.params[name] = matrix_from_json(entry);
    for (const auto& [name, entry] : root.at("buffers").items())
      ckpt.buffers[name] = matrix_from_json(entry);
    if (root.contains("meta"))
      for (const auto& [k, v] : root.at("meta").items())
        ckpt.meta[k] = v.get<std::string>();
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed checkpoint: ") + e.what());
  }
  return ckpt;
}

}  // namespace kalmanuq
