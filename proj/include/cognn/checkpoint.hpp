#pragma once

// Binary checkpoint:
//   "CGNN" | u8 version | u32 len | config text | u32 count |
//   count x (u32 name len | name | u32 rank | rank x u64 dim | numel x f64)
// All integers and doubles little-endian. The config text is `key = value`
// lines: the model architecture, then `meta.*` entries.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "cognn/cognn.hpp"
#include "cognn/config.hpp"
#include "cognn/error.hpp"

namespace cognn {

inline constexpr char kCheckpointMagic[4] = {'C', 'G', 'N', 'N'};
inline constexpr std::uint8_t kCheckpointVersion = 1;

using Metadata = std::map<std::string, std::string>;

struct Checkpoint {
  CoGnnModel model;
  Metadata metadata;
};

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_str(std::string& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

class Reader {
 public:
  explicit Reader(const std::string& data) : data_(data) {}

  std::uint64_t u(int bytes) {
    need(static_cast<std::size_t>(bytes));
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(bytes);
    return v;
  }
  std::string str() {
    const auto n = static_cast<std::size_t>(u(4));
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw ParseError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  const std::string& data_;
  std::size_t pos_ = 0;
};

inline std::string model_config_text(const ModelConfig& c) {
  std::ostringstream s;
  s.precision(17);
  s << "task = " << to_string(c.task) << "\n"
    << "family = " << to_string(c.family) << "\n"
    << "in_dim = " << c.in_dim << "\n"
    << "out_dim = " << c.out_dim << "\n"
    << "env_layers = " << c.env_layers << "\n"
    << "env_dim = " << c.env_dim << "\n"
    << "env_agg = " << to_string(c.env_agg) << "\n"
    << "action_layers = " << c.action_layers << "\n"
    << "action_dim = " << c.action_dim << "\n"
    << "action_agg = " << to_string(c.action_agg) << "\n"
    << "activation = " << to_string(c.act) << "\n"
    << "dropout = " << c.dropout << "\n"
    << "temperature = " << to_string(c.temperature) << "\n"
    << "tau0 = " << c.tau0 << "\n"
    << "tau = " << c.tau << "\n"
    << "pooling = " << to_string(c.pooling) << "\n";
  return s.str();
}

inline void parse_model_config_text(const std::string& text, ModelConfig& c, Metadata& meta) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw ParseError("checkpoint config: expected 'key = value'", lineno);
    const std::string k = line.substr(0, eq), v = line.substr(eq + 3);
    try {
      if (k.rfind("meta.", 0) == 0) meta[k.substr(5)] = v;
      else if (k == "task") c.task = v == "node-regression" ? TaskKind::node_regression : TaskKind::graph_classification;
      else if (k == "family") c.family = v == "cognn" ? ModelFamily::cognn : ModelFamily::baseline;
      else if (k == "in_dim") c.in_dim = parse_number<std::size_t>(k, v);
      else if (k == "out_dim") c.out_dim = parse_number<std::size_t>(k, v);
      else if (k == "env_layers") c.env_layers = parse_number<std::size_t>(k, v);
      else if (k == "env_dim") c.env_dim = parse_number<std::size_t>(k, v);
      else if (k == "env_agg") c.env_agg = aggregation_from_string(v);
      else if (k == "action_layers") c.action_layers = parse_number<std::size_t>(k, v);
      else if (k == "action_dim") c.action_dim = parse_number<std::size_t>(k, v);
      else if (k == "action_agg") c.action_agg = aggregation_from_string(v);
      else if (k == "activation") c.act = activation_from_string(v);
      else if (k == "dropout") c.dropout = parse_number<double>(k, v);
      else if (k == "temperature") c.temperature = temperature_from_string(v);
      else if (k == "tau0") c.tau0 = parse_number<double>(k, v);
      else if (k == "tau") c.tau = parse_number<double>(k, v);
      else if (k == "pooling") c.pooling = pooling_from_string(v);
      else throw ParseError("checkpoint config: unknown key '" + k + "'", lineno);
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      throw ParseError(std::string("checkpoint config: ") + e.what(), lineno);
    }
  }
}

}  // namespace detail

inline std::string serialize_checkpoint(const CoGnnModel& model, const Metadata& metadata = {}) {
  std::string text = detail::model_config_text(model.config);
  for (const auto& [k, v] : metadata) {
    if (k.find_first_of("\n=") != std::string::npos || v.find('\n') != std::string::npos) {
      throw ValidationError("checkpoint metadata must be single-line and '='-free in keys: " + k);
    }
    text += "meta." + k + " = " + v + "\n";
  }
  std::string out(kCheckpointMagic, 4);
  out.push_back(static_cast<char>(kCheckpointVersion));
  detail::put_str(out, text);
  const auto params = model.named_parameters();
  detail::put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& np : params) {
    detail::put_str(out, np.name);
    detail::put_u32(out, static_cast<std::uint32_t>(np.tensor.rank()));
    for (auto d : np.tensor.shape()) detail::put_u64(out, d);
    for (double x : np.tensor.values()) detail::put_u64(out, std::bit_cast<std::uint64_t>(x));
  }
  return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& data) {
  detail::Reader r(data);
  if (r.raw(4) != std::string(kCheckpointMagic, 4)) throw ParseError("not a checkpoint (bad magic)");
  const auto version = r.u(1);
  if (version != kCheckpointVersion) throw ParseError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  ModelConfig cfg;
  detail::parse_model_config_text(r.str(), cfg, ck.metadata);
  Rng unused(0);
  try {
    ck.model = CoGnnModel::init(cfg, unused);
  } catch (const ConfigError& e) {
    throw ParseError(std::string("checkpoint config: ") + e.what());
  }
  auto params = ck.model.named_parameters();
  const auto count = r.u(4);
  if (count != params.size()) {
    throw ParseError("checkpoint holds " + std::to_string(count) + " tensors, architecture needs " +
                     std::to_string(params.size()));
  }
  for (auto& np : params) {
    const std::string name = r.str();
    if (name != np.name) throw ParseError("checkpoint tensor '" + name + "' where '" + np.name + "' was expected");
    const auto rank = r.u(4);
    Shape shape;
    for (std::uint64_t i = 0; i < rank; ++i) shape.push_back(static_cast<std::size_t>(r.u(8)));
    if (shape != np.tensor.shape()) {
      throw ParseError("checkpoint tensor '" + name + "' has shape " + shape_str(shape) + ", expected " +
                       shape_str(np.tensor.shape()));
    }
    auto w = np.tensor.mutable_values();
    for (auto& x : w) x = std::bit_cast<double>(r.u(8));
  }
  if (!r.done()) throw ParseError("trailing bytes after checkpoint records");
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const CoGnnModel& model, const Metadata& metadata = {}) {
  const std::string bytes = serialize_checkpoint(model, metadata);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace cognn
