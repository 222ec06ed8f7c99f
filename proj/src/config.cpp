#include "tcsf/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace tcsf {

void TrainConfig::validate() const {
  if (lr <= 0) throw ConfigError("lr must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (lr_decay <= 0 || lr_decay > 1) throw ConfigError("lr_decay must be in (0,1]");
  if (lr_decay_every < 1) throw ConfigError("lr_decay_every must be >= 1");
  if (alpha < 0) throw ConfigError("alpha must be >= 0");
  if (window_k < 1) throw ConfigError("K must be >= 1");
  if (pseudo_n < 2) throw ConfigError("n must be >= 2");
  if (channels < 1 || model_dim < 1) throw ConfigError("C and d must be positive");
  if (sigma != 1 && sigma != 2 && sigma != 4) throw ConfigError("sigma must be 1, 2 or 4");
  if (ablate.beta_fixed() && (ablate.fixed_beta < 0 || ablate.fixed_beta > 1)) {
    throw ConfigError("fixed_beta must lie in [0,1]");
  }
  if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
}

ModelConfig TrainConfig::model_config(int vocab_size) const {
  ModelConfig mc;
  mc.vocab_size = vocab_size;
  mc.embed_dim = embed_dim;
  mc.gru_hidden = gru_hidden;
  mc.attn_heads = attn_heads;
  mc.attn_dim = attn_dim;
  mc.model_dim = model_dim;
  mc.channels = channels;
  mc.sigma = sigma;
  mc.pseudo_n = pseudo_n;
  mc.window_k = window_k;
  mc.sa_mid = sa_mid;
  mc.qe_hidden = qe_hidden;
  mc.beta_hidden = beta_hidden;
  mc.head_hidden = head_hidden;
  mc.iframe_mid = iframe_mid;
  mc.pframe_mid = pframe_mid;
  mc.sliding_windows = sliding_windows;
  mc.soft_labels = soft_labels;
  mc.ablate = ablate;
  return mc;
}

std::vector<std::pair<std::string, double>> TrainConfig::to_kv() const {
  return {
      {"lr", lr},
      {"batch_size", static_cast<double>(batch_size)},
      {"max_epochs", static_cast<double>(max_epochs)},
      {"paper_schedule", paper_schedule ? 1.0 : 0.0},
      {"lr_decay", lr_decay},
      {"lr_decay_every", static_cast<double>(lr_decay_every)},
      {"alpha", alpha},
      {"K", static_cast<double>(window_k)},
      {"n", static_cast<double>(pseudo_n)},
      {"C", static_cast<double>(channels)},
      {"sigma", static_cast<double>(sigma)},
      {"d", static_cast<double>(model_dim)},
      {"seed", static_cast<double>(seed)},
      {"embed_dim", static_cast<double>(embed_dim)},
      {"gru_hidden", static_cast<double>(gru_hidden)},
      {"attn_heads", static_cast<double>(attn_heads)},
      {"attn_dim", static_cast<double>(attn_dim)},
      {"sa_mid", static_cast<double>(sa_mid)},
      {"qe_hidden", static_cast<double>(qe_hidden)},
      {"beta_hidden", static_cast<double>(beta_hidden)},
      {"head_hidden", static_cast<double>(head_hidden)},
      {"iframe_mid", static_cast<double>(iframe_mid)},
      {"pframe_mid", static_cast<double>(pframe_mid)},
      {"sliding_windows", sliding_windows ? 1.0 : 0.0},
      {"soft_labels", soft_labels ? 1.0 : 0.0},
      {"eval_every", static_cast<double>(eval_every)},
      {"threads", static_cast<double>(threads)},
      {"no_pseudo", ablate.no_pseudo ? 1.0 : 0.0},
      {"no_spatial_attn", ablate.no_spatial_attn ? 1.0 : 0.0},
      {"no_temporal_attn", ablate.no_temporal_attn ? 1.0 : 0.0},
      {"no_query_enhance", ablate.no_query_enhance ? 1.0 : 0.0},
      {"no_noun", ablate.no_noun ? 1.0 : 0.0},
      {"fixed_beta", ablate.fixed_beta},
  };
}

void TrainConfig::set_kv(const std::string& key, double v) {
  auto as_int = [&]() {
    if (std::floor(v) != v) throw ConfigError("key '" + key + "' expects an integer");
    return static_cast<int>(v);
  };
  auto as_bool = [&]() {
    if (v != 0.0 && v != 1.0) throw ConfigError("key '" + key + "' expects 0 or 1");
    return v != 0.0;
  };
  if (key == "lr") lr = v;
  else if (key == "batch_size") batch_size = as_int();
  else if (key == "max_epochs") max_epochs = as_int();
  else if (key == "paper_schedule") paper_schedule = as_bool();
  else if (key == "lr_decay") lr_decay = v;
  else if (key == "lr_decay_every") lr_decay_every = as_int();
  else if (key == "alpha") alpha = v;
  else if (key == "K") window_k = as_int();
  else if (key == "n") pseudo_n = as_int();
  else if (key == "C") channels = as_int();
  else if (key == "sigma") sigma = as_int();
  else if (key == "d") model_dim = as_int();
  else if (key == "seed") seed = static_cast<uint64_t>(v);
  else if (key == "embed_dim") embed_dim = as_int();
  else if (key == "gru_hidden") gru_hidden = as_int();
  else if (key == "attn_heads") attn_heads = as_int();
  else if (key == "attn_dim") attn_dim = as_int();
  else if (key == "sa_mid") sa_mid = as_int();
  else if (key == "qe_hidden") qe_hidden = as_int();
  else if (key == "beta_hidden") beta_hidden = as_int();
  else if (key == "head_hidden") head_hidden = as_int();
  else if (key == "iframe_mid") iframe_mid = as_int();
  else if (key == "pframe_mid") pframe_mid = as_int();
  else if (key == "sliding_windows") sliding_windows = as_bool();
  else if (key == "soft_labels") soft_labels = as_bool();
  else if (key == "eval_every") eval_every = as_int();
  else if (key == "threads") threads = as_int();
  else if (key == "no_pseudo") ablate.no_pseudo = as_bool();
  else if (key == "no_spatial_attn") ablate.no_spatial_attn = as_bool();
  else if (key == "no_temporal_attn") ablate.no_temporal_attn = as_bool();
  else if (key == "no_query_enhance") ablate.no_query_enhance = as_bool();
  else if (key == "no_noun") ablate.no_noun = as_bool();
  else if (key == "fixed_beta") ablate.fixed_beta = v;
  else throw ConfigError("unknown config key: '" + key + "'");
}

TrainConfig parse_config_text(const std::string& text) {
  TrainConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    try {
      size_t used = 0;
      const double v = std::stod(val, &used);
      if (used != val.size()) throw std::invalid_argument(val);
      cfg.set_kv(key, v);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception&) {
      throw ConfigError("line " + std::to_string(lineno) + ": bad value '" + val + "'");
    }
  }
  cfg.validate();
  return cfg;
}

TrainConfig load_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str());
}

void save_config_file(const std::string& path, const TrainConfig& cfg) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write config: " + path);
  for (const auto& [k, v] : cfg.to_kv()) {
    std::ostringstream num;
    num.precision(17);
    num << v;
    f << k << " = " << num.str() << "\n";
  }
}

void apply_ablation(TrainConfig& cfg, const std::string& flag) {
  if (flag == "no_pseudo") cfg.ablate.no_pseudo = true;
  else if (flag == "no_spatial_attn") cfg.ablate.no_spatial_attn = true;
  else if (flag == "no_temporal_attn") cfg.ablate.no_temporal_attn = true;
  else if (flag == "no_query_enhance") cfg.ablate.no_query_enhance = true;
  else if (flag == "no_noun") cfg.ablate.no_noun = true;
  else if (flag.rfind("fixed_beta=", 0) == 0) {
    cfg.ablate.fixed_beta = std::stod(flag.substr(11));
    if (cfg.ablate.fixed_beta < 0 || cfg.ablate.fixed_beta > 1) {
      throw ConfigError("fixed_beta must lie in [0,1]");
    }
  } else {
    throw ConfigError("unknown ablation flag: '" + flag + "'");
  }
}

}  // namespace tcsf
