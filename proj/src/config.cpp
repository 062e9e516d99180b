#include "tit/config.hpp"

#include <fstream>
#include <sstream>

#include "tit/envs.hpp"

namespace tit {

namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

int parse_int(const std::string& key, const std::string& val) {
  try {
    std::size_t pos = 0;
    int v = std::stoi(val, &pos);
    if (pos != val.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': expected an integer, got '" + val + "'");
  }
}

long long parse_ll(const std::string& key, const std::string& val) {
  try {
    std::size_t pos = 0;
    long long v = std::stoll(val, &pos);
    if (pos != val.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': expected an integer, got '" + val + "'");
  }
}

double parse_double(const std::string& key, const std::string& val) {
  try {
    std::size_t pos = 0;
    double v = std::stod(val, &pos);
    if (pos != val.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': expected a number, got '" + val + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& val) {
  if (val == "true" || val == "1") return true;
  if (val == "false" || val == "0") return false;
  throw ConfigError("key '" + key + "': expected true|false, got '" + val + "'");
}

std::vector<int> parse_seed_list(const std::string& key, const std::string& val) {
  std::vector<int> out;
  std::string cur;
  std::istringstream is(val);
  while (std::getline(is, cur, ',')) {
    cur = trim(cur);
    if (cur.empty()) throw ConfigError("key '" + key + "': empty seed entry");
    out.push_back(parse_int(key, cur));
  }
  if (out.empty()) throw ConfigError("key '" + key + "': needs at least one seed");
  return out;
}

void apply_key(RunConfig& c, const std::string& key, const std::string& val) {
  if (key == "env") {
    if (val != "cartpole" && val != "dotcatcher")
      throw ConfigError("key 'env': unknown environment '" + val + "'");
    c.env_id = val;
  } else if (key == "variant") c.tit.variant = variant_from_string(val);
  else if (key == "patch_size") c.tit.patch_size = parse_int(key, val);
  else if (key == "embed_dim") c.tit.embed_dim = parse_int(key, val);
  else if (key == "num_blocks") c.tit.num_blocks = parse_int(key, val);
  else if (key == "context_len") c.tit.context_len = parse_int(key, val);
  else if (key == "inner_heads") c.tit.inner_heads = parse_int(key, val);
  else if (key == "outer_heads") c.tit.outer_heads = parse_int(key, val);
  else if (key == "inner_attn_dropout") c.tit.inner_attn_dropout = parse_double(key, val);
  else if (key == "inner_ffn_dropout") c.tit.inner_ffn_dropout = parse_double(key, val);
  else if (key == "outer_attn_dropout") c.tit.outer_attn_dropout = parse_double(key, val);
  else if (key == "outer_ffn_dropout") c.tit.outer_ffn_dropout = parse_double(key, val);
  else if (key == "activation") c.tit.activation = activation_from_string(val);
  else if (key == "outer_position_encoding") c.tit.outer_position_encoding = parse_bool(key, val);
  else if (key == "total_timesteps") c.train.total_timesteps = parse_ll(key, val);
  else if (key == "rollout_len") c.train.rollout_len = parse_int(key, val);
  else if (key == "minibatch_size") c.train.minibatch_size = parse_int(key, val);
  else if (key == "epochs") c.train.epochs = parse_int(key, val);
  else if (key == "gamma") c.train.gamma = parse_double(key, val);
  else if (key == "gae_lambda") c.train.gae_lambda = parse_double(key, val);
  else if (key == "clip_eps") c.train.clip_eps = parse_double(key, val);
  else if (key == "learning_rate") c.train.learning_rate = parse_double(key, val);
  else if (key == "ent_coef") c.train.ent_coef = parse_double(key, val);
  else if (key == "vf_coef") c.train.vf_coef = parse_double(key, val);
  else if (key == "out_dir") c.out_dir = val;
  else if (key == "seeds") c.seeds = parse_seed_list(key, val);
  else throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

TITConfig RunConfig::resolved_tit() const {
  TITConfig cfg = tit;
  auto env = make_env(env_id);
  env->describe_obs(cfg);
  cfg.action = ActionSpec{true, env->n_actions()};
  cfg.validate();
  return cfg;
}

std::string RunConfig::echo() const {
  std::ostringstream os;
  os.precision(17);
  os << "env = " << env_id << "\n";
  os << "variant = " << variant_to_string(tit.variant) << "\n";
  os << "patch_size = " << tit.patch_size << "\n";
  os << "embed_dim = " << tit.embed_dim << "\n";
  os << "num_blocks = " << tit.num_blocks << "\n";
  os << "context_len = " << tit.context_len << "\n";
  os << "inner_heads = " << tit.inner_heads << "\n";
  os << "outer_heads = " << tit.outer_heads << "\n";
  os << "inner_attn_dropout = " << tit.inner_attn_dropout << "\n";
  os << "inner_ffn_dropout = " << tit.inner_ffn_dropout << "\n";
  os << "outer_attn_dropout = " << tit.outer_attn_dropout << "\n";
  os << "outer_ffn_dropout = " << tit.outer_ffn_dropout << "\n";
  os << "activation = " << activation_to_string(tit.activation) << "\n";
  os << "outer_position_encoding = " << (tit.outer_position_encoding ? "true" : "false") << "\n";
  os << "total_timesteps = " << train.total_timesteps << "\n";
  os << "rollout_len = " << train.rollout_len << "\n";
  os << "minibatch_size = " << train.minibatch_size << "\n";
  os << "epochs = " << train.epochs << "\n";
  os << "gamma = " << train.gamma << "\n";
  os << "gae_lambda = " << train.gae_lambda << "\n";
  os << "clip_eps = " << train.clip_eps << "\n";
  os << "learning_rate = " << train.learning_rate << "\n";
  os << "ent_coef = " << train.ent_coef << "\n";
  os << "vf_coef = " << train.vf_coef << "\n";
  os << "out_dir = " << out_dir << "\n";
  os << "seeds = ";
  for (std::size_t i = 0; i < seeds.size(); ++i) os << (i ? "," : "") << seeds[i];
  os << "\n";
  // Derived values, for the reader; ignored on re-parse.
  TITConfig resolved = resolved_tit();
  os << "# num_patches = " << resolved.num_patches() << "\n";
  os << "# patch_dim = " << resolved.patch_dim() << "\n";
  return os.str();
}

RunConfig parse_config(const std::string& text, const std::vector<std::string>& overrides) {
  RunConfig c;
  auto apply_line = [&](const std::string& raw, bool from_file) {
    std::string line = raw;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) return;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(std::string(from_file ? "config line" : "override") +
                        " is not 'key = value': '" + trim(raw) + "'");
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("missing key in '" + trim(raw) + "'");
    apply_key(c, key, val);
  };

  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) apply_line(line, true);
  for (const auto& ov : overrides) apply_line(ov, false);

  c.train.validate();
  c.resolved_tit();  // constraint check (e.g. patch divisibility) up front
  return c;
}

RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  std::ifstream ifs(path);
  if (!ifs) throw ConfigError("cannot open config file: " + path);
  std::ostringstream ss;
  ss << ifs.rdbuf();
  return parse_config(ss.str(), overrides);
}

}  // namespace tit
