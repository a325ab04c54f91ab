// csiam/config.hpp
//
// Key/value config files with [section] headers, '#' or ';' comments.
// Unknown sections or keys are hard errors; every field has a default, so an
// empty file is a valid (toy) configuration.

#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>

#include "csiam/contrastive.hpp"
#include "csiam/losses.hpp"
#include "csiam/masking.hpp"
#include "csiam/model.hpp"
#include "csiam/optimizer.hpp"
#include "csiam/synthetic.hpp"

namespace csiam {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigReader {
 public:
  static ConfigReader from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ConfigReader(ss.str(), path);
  }

  static ConfigReader from_string(const std::string& text) { return ConfigReader(text, "<string>"); }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get_string(const std::string& key, const std::string& fallback) {
    consumed_.insert(key);
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  int64_t get_int(const std::string& key, int64_t fallback) {
    consumed_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      size_t pos = 0;
      const int64_t v = std::stoll(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("");
      return v;
    } catch (...) {
      throw ConfigError("config key '" + key + "' is not an integer: '" + it->second + "'");
    }
  }

  double get_double(const std::string& key, double fallback) {
    consumed_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      size_t pos = 0;
      const double v = std::stod(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("");
      return v;
    } catch (...) {
      throw ConfigError("config key '" + key + "' is not a number: '" + it->second + "'");
    }
  }

  bool get_bool(const std::string& key, bool fallback) {
    consumed_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::string v = it->second;
    std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("config key '" + key + "' is not a boolean: '" + it->second + "'");
  }

  // Every key present in the file must have been consumed by a getter.
  void reject_unknown() const {
    for (const auto& [key, value] : values_) {
      if (!consumed_.count(key)) {
        throw ConfigError("unknown config key '" + key + "' in " + source_);
      }
    }
  }

 private:
  ConfigReader(const std::string& text, std::string source) : source_(std::move(source)) {
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto cut = line.find_first_of("#;");
      if (cut != std::string::npos) line = line.substr(0, cut);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']') throw ConfigError(source_ + ":" + std::to_string(lineno) + ": unterminated section");
        section = trim(line.substr(1, line.size() - 2));
        if (section.empty()) throw ConfigError(source_ + ":" + std::to_string(lineno) + ": empty section name");
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw ConfigError(source_ + ":" + std::to_string(lineno) + ": expected key = value");
      }
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (key.empty()) throw ConfigError(source_ + ":" + std::to_string(lineno) + ": empty key");
      const std::string qualified = section.empty() ? key : section + "." + key;
      if (values_.count(qualified)) {
        throw ConfigError(source_ + ":" + std::to_string(lineno) + ": duplicate key '" + qualified + "'");
      }
      values_[qualified] = value;
    }
  }

  static std::string trim(const std::string& s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
  }

  std::string source_;
  std::map<std::string, std::string> values_;
  std::set<std::string> consumed_;
};

// ------------------------------------------------------------- run config
enum class TempoMode { kNone, kWarp, kUniform };

struct AugmentRecipe {
  TempoMode tempo_mode = TempoMode::kWarp;
  int warp_order = 5;
  double warp_sigma = 0.2;
  double mask_prob = 0.016;
  int mask_span = 28;
  bool use_specaugment = true;
  SpecAugmentConfig specaugment;
  double alpha_lo = 0.85;
  double alpha_hi = 1.15;

  void validate() const {
    if (warp_order < 0 || warp_sigma < 0.0) throw ConfigError("warp parameters must be non-negative");
    if (mask_prob < 0.0 || mask_prob > 1.0 || mask_span < 0) throw ConfigError("mask parameters out of range");
    if (!(alpha_lo > 0.0) || alpha_hi < alpha_lo) throw ConfigError("need 0 < alpha_lo <= alpha_hi");
    specaugment.validate();
  }
};

struct TrainRecipe {
  LrSchedule lr;
  double grad_norm_limit = 60.0;
  double variational_noise_std = 0.0;
  int64_t variational_noise_start_step = 4000;
  double l2_weight = 0.0;
  int batch_size_sup = 4;
  int batch_size_unsup = 4;
  int64_t total_steps = 3000;
  uint64_t seed = 7;

  void validate() const {
    lr.validate();
    if (!(grad_norm_limit > 0.0)) throw ConfigError("grad_norm_limit must be positive");
    if (variational_noise_std < 0.0) throw ConfigError("variational_noise_std must be >= 0");
    if (batch_size_sup < 0 || batch_size_unsup < 0) throw ConfigError("batch sizes must be >= 0");
    if (total_steps < 0) throw ConfigError("total_steps must be >= 0");
  }
};

struct RunConfig {
  SyntheticCorpusSpec data;
  int num_utterances = 64;
  EncoderConfig encoder;
  LabelEncoderConfig label_encoder;
  PredictionNetworkConfig predictor;
  JointConfig joint;
  ContrastiveConfig contrastive;
  LossWeights weights;
  TrainRecipe train;
  AugmentRecipe augment;

  static RunConfig load(ConfigReader& r) {
    RunConfig c;
    c.num_utterances = static_cast<int>(r.get_int("data.num_utterances", c.num_utterances));
    c.data.num_classes = static_cast<int>(r.get_int("data.num_classes", c.data.num_classes));
    c.data.feature_dim = static_cast<int>(r.get_int("data.feature_dim", c.data.feature_dim));
    c.data.min_symbols = static_cast<int>(r.get_int("data.min_symbols", c.data.min_symbols));
    c.data.max_symbols = static_cast<int>(r.get_int("data.max_symbols", c.data.max_symbols));
    c.data.min_frames_per_symbol =
        static_cast<int>(r.get_int("data.min_frames_per_symbol", c.data.min_frames_per_symbol));
    c.data.max_frames_per_symbol =
        static_cast<int>(r.get_int("data.max_frames_per_symbol", c.data.max_frames_per_symbol));
    c.data.noise_std = r.get_double("data.noise_std", c.data.noise_std);
    c.data.seed = static_cast<uint64_t>(r.get_int("data.seed", static_cast<int64_t>(c.data.seed)));

    c.encoder.input_dim = c.data.feature_dim;
    c.encoder.n_blocks = static_cast<int>(r.get_int("encoder.n_blocks", c.encoder.n_blocks));
    c.encoder.n_heads = static_cast<int>(r.get_int("encoder.n_heads", c.encoder.n_heads));
    c.encoder.d_model = static_cast<int>(r.get_int("encoder.d_model", c.encoder.d_model));
    c.encoder.d_ff = static_cast<int>(r.get_int("encoder.d_ff", c.encoder.d_ff));
    c.encoder.d_qk = static_cast<int>(r.get_int("encoder.d_qk", c.encoder.d_qk));
    c.encoder.d_value = static_cast<int>(r.get_int("encoder.d_value", c.encoder.d_value));
    c.encoder.dropout_p = r.get_double("encoder.dropout_p", c.encoder.dropout_p);
    c.encoder.rel_clip = static_cast<int>(r.get_int("encoder.rel_clip", c.encoder.rel_clip));

    c.label_encoder.n_blocks = static_cast<int>(r.get_int("label_encoder.n_blocks", c.label_encoder.n_blocks));
    c.label_encoder.vocab_size = c.data.num_classes + 1;
    c.label_encoder.blank_id = c.data.num_classes;

    c.predictor.n_blocks = static_cast<int>(r.get_int("predictor.n_blocks", c.predictor.n_blocks));

    c.joint.hidden_dim = static_cast<int>(r.get_int("loss.joint_dim", c.joint.hidden_dim));
    c.contrastive.tau = r.get_double("loss.tau", c.contrastive.tau);
    c.contrastive.negatives = static_cast<int>(r.get_int("loss.negatives", c.contrastive.negatives));
    c.weights.lambda_unsup = r.get_double("loss.lambda_unsup", c.weights.lambda_unsup);

    c.train.lr.peak_lr = r.get_double("train.peak_lr", c.train.lr.peak_lr);
    c.train.lr.final_lr = r.get_double("train.final_lr", c.train.lr.final_lr);
    c.train.lr.warmup_steps = r.get_int("train.warmup_steps", c.train.lr.warmup_steps);
    c.train.lr.decay_end_step = r.get_int("train.decay_end_step", c.train.lr.decay_end_step);
    c.train.grad_norm_limit = r.get_double("train.grad_norm_limit", c.train.grad_norm_limit);
    c.train.variational_noise_std = r.get_double("train.variational_noise_std", c.train.variational_noise_std);
    c.train.variational_noise_start_step =
        r.get_int("train.variational_noise_start_step", c.train.variational_noise_start_step);
    c.train.l2_weight = r.get_double("train.l2_weight", c.train.l2_weight);
    c.train.batch_size_sup = static_cast<int>(r.get_int("train.batch_size_sup", c.train.batch_size_sup));
    c.train.batch_size_unsup = static_cast<int>(r.get_int("train.batch_size_unsup", c.train.batch_size_unsup));
    c.train.total_steps = r.get_int("train.total_steps", c.train.total_steps);
    c.train.seed = static_cast<uint64_t>(r.get_int("train.seed", static_cast<int64_t>(c.train.seed)));

    const std::string mode = r.get_string("augment.tempo_mode", "warp");
    if (mode == "none") {
      c.augment.tempo_mode = TempoMode::kNone;
    } else if (mode == "warp") {
      c.augment.tempo_mode = TempoMode::kWarp;
    } else if (mode == "uniform") {
      c.augment.tempo_mode = TempoMode::kUniform;
    } else {
      throw ConfigError("augment.tempo_mode must be one of none|warp|uniform, got '" + mode + "'");
    }
    c.augment.warp_order = static_cast<int>(r.get_int("augment.warp_order", c.augment.warp_order));
    c.augment.warp_sigma = r.get_double("augment.warp_sigma", c.augment.warp_sigma);
    c.augment.mask_prob = r.get_double("augment.mask_prob", c.augment.mask_prob);
    c.augment.mask_span = static_cast<int>(r.get_int("augment.mask_span", c.augment.mask_span));
    c.augment.use_specaugment = r.get_bool("augment.specaugment", c.augment.use_specaugment);
    c.augment.specaugment.n_freq_masks =
        static_cast<int>(r.get_int("augment.sa_freq_masks", c.augment.specaugment.n_freq_masks));
    c.augment.specaugment.freq_mask_size =
        static_cast<int>(r.get_int("augment.sa_freq_size", c.augment.specaugment.freq_mask_size));
    c.augment.specaugment.n_time_masks =
        static_cast<int>(r.get_int("augment.sa_time_masks", c.augment.specaugment.n_time_masks));
    c.augment.specaugment.time_mask_max_ratio =
        r.get_double("augment.sa_time_ratio", c.augment.specaugment.time_mask_max_ratio);
    c.augment.alpha_lo = r.get_double("augment.alpha_lo", c.augment.alpha_lo);
    c.augment.alpha_hi = r.get_double("augment.alpha_hi", c.augment.alpha_hi);

    r.reject_unknown();
    c.validate();
    return c;
  }

  static RunConfig from_file(const std::string& path) {
    ConfigReader r = ConfigReader::from_file(path);
    return load(r);
  }

  static RunConfig from_string(const std::string& text) {
    ConfigReader r = ConfigReader::from_string(text);
    return load(r);
  }

  void validate() const {
    data.validate();
    if (num_utterances < 0) throw ConfigError("data.num_utterances must be >= 0");
    encoder.validate();
    label_encoder.validate();
    predictor.validate();
    joint.validate();
    contrastive.validate();
    weights.validate();
    train.validate();
    augment.validate();
    if (augment.tempo_mode == TempoMode::kUniform) {
      throw ConfigError(
          "augment.tempo_mode=uniform needs a waveform corpus; the synthetic training path is feature-level. "
          "Use tempo_mode=warp here and the `augment` subcommand for WSOLA on WAV input.");
    }
  }
};

}  // namespace csiam
