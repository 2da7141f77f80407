// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

namespace pts {

// Everything one run needs: model topology, optimizer schedule, decoding
// limits, and file paths. Defaults are the published base setting; the small
// configs shipped under configs/ override them for desk-scale runs.
struct RunConfig {
  // [model]
  int d_model = 512;
  int d_hidden = 2048;
  int n_heads = 8;
  int enc_layers = 6;
  int dec_layers = 6;
  int emb_token = 420;
  int emb_key = 80;
  int emb_pos = 50;
  int vocab_size = 30000;
  int key_vocab_size = 1000;
  int max_placeholders = 64;  // L; count head classifies 0..L
  int max_record_pos = 64;    // positions clamp here
  int max_seq = 256;
  int max_records = 128;
  bool rethinking = true;
  double dropout = 0.0;

  // [train]
  double lambda_plan = 0.05;
  double peak_lr = 5e-4;
  int warmup_steps = 10000;
  int max_steps = 300000;
  int batch_size = 32;
  uint64_t seed = 1;
  int eval_interval = 0;  // 0 disables validation/early stopping
  int patience = 5;
  int log_interval = 50;

  // [decode]
  int max_iter = 10;

  // [paths]
  std::string train_path;
  std::string valid_path;
  std::string test_path;
  std::string vocab_path;
  std::string checkpoint_path;
  std::string stopwords_path;
};

namespace detail {

inline std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::runtime_error("config: invalid boolean for " + key + ": " + v);
}

}  // namespace detail

// Flat key = value file with [section] headers and # comments.
inline RunConfig parse_config_text(std::istream& in, RunConfig cfg = RunConfig{}) {
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string s = detail::trim(line);
    if (s.empty() || s[0] == '#') continue;
    if (s.front() == '[' && s.back() == ']') {
      section = s.substr(1, s.size() - 2);
      continue;
    }
    size_t eq = s.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: malformed line " + std::to_string(lineno) + ": " + s);
    std::string key = detail::trim(s.substr(0, eq));
    std::string val = detail::trim(s.substr(eq + 1));
    const std::string full = section.empty() ? key : section + "." + key;
    try {
      if (full == "model.d_model") cfg.d_model = std::stoi(val);
      else if (full == "model.d_hidden") cfg.d_hidden = std::stoi(val);
      else if (full == "model.n_heads") cfg.n_heads = std::stoi(val);
      else if (full == "model.enc_layers") cfg.enc_layers = std::stoi(val);
      else if (full == "model.dec_layers") cfg.dec_layers = std::stoi(val);
      else if (full == "model.emb_token") cfg.emb_token = std::stoi(val);
      else if (full == "model.emb_key") cfg.emb_key = std::stoi(val);
      else if (full == "model.emb_pos") cfg.emb_pos = std::stoi(val);
      else if (full == "model.vocab_size") cfg.vocab_size = std::stoi(val);
      else if (full == "model.key_vocab_size") cfg.key_vocab_size = std::stoi(val);
      else if (full == "model.max_placeholders") cfg.max_placeholders = std::stoi(val);
      else if (full == "model.max_record_pos") cfg.max_record_pos = std::stoi(val);
      else if (full == "model.max_seq") cfg.max_seq = std::stoi(val);
      else if (full == "model.max_records") cfg.max_records = std::stoi(val);
      else if (full == "model.rethinking") cfg.rethinking = detail::parse_bool(val, full);
      else if (full == "model.dropout") cfg.dropout = std::stod(val);
      else if (full == "train.lambda_plan") cfg.lambda_plan = std::stod(val);
      else if (full == "train.peak_lr") cfg.peak_lr = std::stod(val);
      else if (full == "train.warmup_steps") cfg.warmup_steps = std::stoi(val);
      else if (full == "train.max_steps") cfg.max_steps = std::stoi(val);
      else if (full == "train.batch_size") cfg.batch_size = std::stoi(val);
      else if (full == "train.seed") cfg.seed = std::stoull(val);
      else if (full == "train.eval_interval") cfg.eval_interval = std::stoi(val);
      else if (full == "train.patience") cfg.patience = std::stoi(val);
      else if (full == "train.log_interval") cfg.log_interval = std::stoi(val);
      else if (full == "decode.max_iter") cfg.max_iter = std::stoi(val);
      else if (full == "paths.train") cfg.train_path = val;
      else if (full == "paths.valid") cfg.valid_path = val;
      else if (full == "paths.test") cfg.test_path = val;
      else if (full == "paths.vocab") cfg.vocab_path = val;
      else if (full == "paths.checkpoint") cfg.checkpoint_path = val;
      else if (full == "paths.stopwords") cfg.stopwords_path = val;
      else throw std::runtime_error("config: unknown key " + full);
    } catch (const std::invalid_argument&) {
      throw std::runtime_error("config: invalid value for " + full + ": " + val);
    }
  }
  return cfg;
}

inline RunConfig parse_config_file(const std::string& path, RunConfig base = RunConfig{}) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return parse_config_text(in, base);
}

// Path keys may be overridden from the environment (paths only, by contract).
inline void apply_env_path_overrides(RunConfig& cfg) {
  auto ovr = [](std::string& slot, const char* var) {
    if (const char* v = std::getenv(var); v && *v) slot = v;
  };
  ovr(cfg.train_path, "PTS_TRAIN");
  ovr(cfg.valid_path, "PTS_VALID");
  ovr(cfg.test_path, "PTS_TEST");
  ovr(cfg.vocab_path, "PTS_VOCAB");
  ovr(cfg.checkpoint_path, "PTS_CHECKPOINT");
  ovr(cfg.stopwords_path, "PTS_STOPWORDS");
}

inline void validate_model_config(const RunConfig& c) {
  auto fail = [](const std::string& m) { throw std::runtime_error("config: " + m); };
  if (c.d_model <= 0 || c.d_hidden <= 0) fail("d_model and d_hidden must be positive");
  if (c.n_heads <= 0 || c.d_model % c.n_heads != 0) fail("n_heads must divide d_model");
  if (c.enc_layers <= 0 || c.dec_layers <= 0) fail("layer counts must be positive");
  if (c.emb_token <= 0 || c.emb_key <= 0 || c.emb_pos <= 0) fail("embedding dims must be positive");
  if (c.vocab_size < 5 || c.key_vocab_size < 5) fail("vocab sizes must cover reserved symbols");
  if (c.max_placeholders < 1) fail("max_placeholders must be >= 1");
  if (c.max_record_pos < 1) fail("max_record_pos must be >= 1");
  if (c.max_seq < c.max_placeholders + 2) fail("max_seq must fit max_placeholders plus frame");
  if (c.max_records < 1) fail("max_records must be >= 1");
  if (c.dropout < 0.0 || c.dropout >= 1.0) fail("dropout must be in [0, 1)");
}

inline void validate_train_config(const RunConfig& c) {
  auto fail = [](const std::string& m) { throw std::runtime_error("config: " + m); };
  validate_model_config(c);
  if (c.lambda_plan < 0.0) fail("lambda_plan must be >= 0");
  if (c.peak_lr <= 0.0) fail("peak_lr must be positive");
  if (c.warmup_steps < 1) fail("warmup_steps must be >= 1");
  if (c.max_steps < 1) fail("max_steps must be >= 1");
  if (c.batch_size < 1) fail("batch_size must be >= 1");
  if (c.eval_interval < 0 || c.patience < 1) fail("eval_interval must be >= 0 and patience >= 1");
  if (c.max_iter < 1) fail("max_iter must be >= 1");
}

// Echo of the shape-relevant fields, embedded in checkpoints so inference can
// rebuild the network without the original config file.
inline std::map<std::string, std::string> model_config_echo(const RunConfig& c) {
  std::map<std::string, std::string> m;
  m["d_model"] = std::to_string(c.d_model);
  m["d_hidden"] = std::to_string(c.d_hidden);
  m["n_heads"] = std::to_string(c.n_heads);
  m["enc_layers"] = std::to_string(c.enc_layers);
  m["dec_layers"] = std::to_string(c.dec_layers);
  m["emb_token"] = std::to_string(c.emb_token);
  m["emb_key"] = std::to_string(c.emb_key);
  m["emb_pos"] = std::to_string(c.emb_pos);
  m["vocab_size"] = std::to_string(c.vocab_size);
  m["key_vocab_size"] = std::to_string(c.key_vocab_size);
  m["max_placeholders"] = std::to_string(c.max_placeholders);
  m["max_record_pos"] = std::to_string(c.max_record_pos);
  m["max_seq"] = std::to_string(c.max_seq);
  m["max_records"] = std::to_string(c.max_records);
  m["rethinking"] = c.rethinking ? "true" : "false";
  return m;
}

inline void apply_config_echo(RunConfig& c, const std::map<std::string, std::string>& m) {
  auto geti = [&](const char* k, int& slot) {
    auto it = m.find(k);
    if (it == m.end()) throw std::runtime_error("corrupt checkpoint: missing config key " + std::string(k));
    slot = std::stoi(it->second);
  };
  geti("d_model", c.d_model);
  geti("d_hidden", c.d_hidden);
  geti("n_heads", c.n_heads);
  geti("enc_layers", c.enc_layers);
  geti("dec_layers", c.dec_layers);
  geti("emb_token", c.emb_token);
  geti("emb_key", c.emb_key);
  geti("emb_pos", c.emb_pos);
  geti("vocab_size", c.vocab_size);
  geti("key_vocab_size", c.key_vocab_size);
  geti("max_placeholders", c.max_placeholders);
  geti("max_record_pos", c.max_record_pos);
  geti("max_seq", c.max_seq);
  geti("max_records", c.max_records);
  auto it = m.find("rethinking");
  if (it == m.end()) throw std::runtime_error("corrupt checkpoint: missing config key rethinking");
  c.rethinking = it->second == "true";
}

}  // namespace pts
