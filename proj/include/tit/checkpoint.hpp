#pragma once

// Model checkpoints: a little-endian flat file of named float32 weight
// records behind a magic header and version byte, with the architecture
// config embedded as text. See docs/formats.md for the byte layout.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "tit/backbone.hpp"

namespace tit {

inline constexpr char kCheckpointMagic[4] = {'T', 'I', 'T', 'W'};
inline constexpr std::uint8_t kCheckpointVersion = 1;

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::string config_to_text(const TITConfig& c, bool dt_mode) {
  std::ostringstream os;
  os.precision(17);
  os << "obs_kind = " << (c.obs_kind == ObsKind::Image ? "image" : "array") << "\n";
  if (c.obs_kind == ObsKind::Image)
    os << "obs_h = " << c.obs_h << "\nobs_w = " << c.obs_w << "\nobs_c = " << c.obs_c << "\n";
  else
    os << "obs_dim = " << c.obs_dim << "\n";
  os << "patch_size = " << c.patch_size << "\n";
  os << "embed_dim = " << c.embed_dim << "\n";
  os << "num_blocks = " << c.num_blocks << "\n";
  os << "context_len = " << c.context_len << "\n";
  os << "inner_heads = " << c.inner_heads << "\n";
  os << "outer_heads = " << c.outer_heads << "\n";
  os << "inner_attn_dropout = " << c.inner_attn_dropout << "\n";
  os << "inner_ffn_dropout = " << c.inner_ffn_dropout << "\n";
  os << "outer_attn_dropout = " << c.outer_attn_dropout << "\n";
  os << "outer_ffn_dropout = " << c.outer_ffn_dropout << "\n";
  os << "activation = " << activation_to_string(c.activation) << "\n";
  os << "variant = " << variant_to_string(c.variant) << "\n";
  os << "outer_position_encoding = " << (c.outer_position_encoding ? 1 : 0) << "\n";
  os << "action_kind = " << (c.action.discrete ? "discrete" : "continuous") << "\n";
  os << "action_n = " << c.action.n << "\n";
  os << "mode = " << (dt_mode ? "dt" : "policy") << "\n";
  return os.str();
}

inline std::pair<TITConfig, bool> config_from_text(const std::string& text) {
  TITConfig c;
  bool dt_mode = false;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      auto b = s.find_first_not_of(" \t\r");
      auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (key == "obs_kind") c.obs_kind = val == "image" ? ObsKind::Image : ObsKind::Array;
    else if (key == "obs_h") c.obs_h = std::stoi(val);
    else if (key == "obs_w") c.obs_w = std::stoi(val);
    else if (key == "obs_c") c.obs_c = std::stoi(val);
    else if (key == "obs_dim") c.obs_dim = std::stoi(val);
    else if (key == "patch_size") c.patch_size = std::stoi(val);
    else if (key == "embed_dim") c.embed_dim = std::stoi(val);
    else if (key == "num_blocks") c.num_blocks = std::stoi(val);
    else if (key == "context_len") c.context_len = std::stoi(val);
    else if (key == "inner_heads") c.inner_heads = std::stoi(val);
    else if (key == "outer_heads") c.outer_heads = std::stoi(val);
    else if (key == "inner_attn_dropout") c.inner_attn_dropout = std::stod(val);
    else if (key == "inner_ffn_dropout") c.inner_ffn_dropout = std::stod(val);
    else if (key == "outer_attn_dropout") c.outer_attn_dropout = std::stod(val);
    else if (key == "outer_ffn_dropout") c.outer_ffn_dropout = std::stod(val);
    else if (key == "activation") c.activation = activation_from_string(val);
    else if (key == "variant") c.variant = variant_from_string(val);
    else if (key == "outer_position_encoding") c.outer_position_encoding = val != "0";
    else if (key == "action_kind") c.action.discrete = val == "discrete";
    else if (key == "action_n") c.action.n = std::stoi(val);
    else if (key == "mode") dt_mode = val == "dt";
    else throw IoError("checkpoint config: unknown key '" + key + "'");
  }
  return {c, dt_mode};
}

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  os.write(b, 4);
}
inline std::uint32_t read_u32(std::istream& is) {
  char b[4];
  is.read(b, 4);
  std::uint32_t v;
  std::memcpy(&v, b, 4);
  return v;
}

}  // namespace detail

template <class Real>
void save_checkpoint(const Model<Real>& m, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  os.write(kCheckpointMagic, 4);
  os.put(static_cast<char>(kCheckpointVersion));
  std::string cfg = config_to_text(m.cfg, m.dt_mode);
  detail::write_u32(os, static_cast<std::uint32_t>(cfg.size()));
  os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));

  auto params = m.named_params();
  detail::write_u32(os, static_cast<std::uint32_t>(params.size()));
  for (auto& [name, t] : params) {
    detail::write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    os.put(static_cast<char>(t.shape().size()));
    for (int d : t.shape()) detail::write_u32(os, static_cast<std::uint32_t>(d));
    std::vector<float> payload(t.numel());
    for (std::size_t i = 0; i < payload.size(); ++i) payload[i] = static_cast<float>(t.value()[i]);
    os.write(reinterpret_cast<const char*>(payload.data()),
             static_cast<std::streamsize>(payload.size() * sizeof(float)));
  }
  if (!os) throw IoError("write failure while saving checkpoint: " + path);
}

template <class Real>
Model<Real> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw IoError("not a checkpoint file (bad magic): " + path);
  int version = is.get();
  if (version != kCheckpointVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  std::uint32_t cfg_len = detail::read_u32(is);
  std::string cfg_text(cfg_len, '\0');
  is.read(cfg_text.data(), cfg_len);
  auto [cfg, dt_mode] = config_from_text(cfg_text);

  Model<Real> m = Model<Real>::init(cfg, 0, dt_mode);
  std::map<std::string, Tensor<Real>> by_name;
  for (auto& [name, t] : m.named_params()) by_name.emplace(name, t);

  std::uint32_t count = detail::read_u32(is);
  std::size_t applied = 0;
  for (std::uint32_t r = 0; r < count; ++r) {
    std::uint32_t name_len = detail::read_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    int ndim = is.get();
    Shape shape(static_cast<std::size_t>(ndim));
    for (int i = 0; i < ndim; ++i) shape[static_cast<std::size_t>(i)] = static_cast<int>(detail::read_u32(is));
    std::vector<float> payload(shape_numel(shape));
    is.read(reinterpret_cast<char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(float)));
    if (!is) throw IoError("truncated checkpoint: " + path);
    auto it = by_name.find(name);
    if (it == by_name.end()) throw IoError("checkpoint record '" + name + "' not in model");
    if (it->second.shape() != shape)
      throw IoError("checkpoint record '" + name + "' shape " + shape_str(shape) +
                    " does not match model " + shape_str(it->second.shape()));
    for (std::size_t i = 0; i < payload.size(); ++i)
      it->second.value()[i] = static_cast<Real>(payload[i]);
    ++applied;
  }
  if (applied != by_name.size())
    throw IoError("checkpoint is missing " + std::to_string(by_name.size() - applied) +
                  " parameter records");
  return m;
}

}  // namespace tit
