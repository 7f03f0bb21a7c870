#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "emglab/harness.hpp"

namespace emglab::harness {

namespace {

std::string trim(const std::string& s) {
  std::size_t lo = 0, hi = s.size();
  while (lo < hi && std::isspace(static_cast<unsigned char>(s[lo]))) ++lo;
  while (hi > lo && std::isspace(static_cast<unsigned char>(s[hi - 1]))) --hi;
  return s.substr(lo, hi - lo);
}

std::string strip_comment(const std::string& line) {
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') in_string = !in_string;
    if (line[i] == '#' && !in_string) return line.substr(0, i);
  }
  return line;
}

std::string unquote(const std::string& v) {
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') {
    return v.substr(1, v.size() - 2);
  }
  return v;
}

double to_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double d = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("setting '" + key + "' expects a number, got '" + value + "'");
  }
}

int to_int(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const long v = std::stol(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return static_cast<int>(v);
  } catch (const std::exception&) {
    throw ConfigError("setting '" + key + "' expects an integer, got '" + value + "'");
  }
}

std::uint64_t to_u64(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return static_cast<std::uint64_t>(v);
  } catch (const std::exception&) {
    throw ConfigError("setting '" + key + "' expects an unsigned integer, got '" + value + "'");
  }
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("setting '" + key + "' expects true/false, got '" + value + "'");
}

std::vector<int> to_int_array(const std::string& key, std::string value) {
  value = trim(value);
  if (value.size() < 2 || value.front() != '[' || value.back() != ']') {
    throw ConfigError("setting '" + key + "' expects an array like [1, 2, 3]");
  }
  std::vector<int> out;
  std::stringstream ss(value.substr(1, value.size() - 2));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(to_int(key, item));
  }
  return out;
}

}  // namespace

std::map<std::string, std::string> parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::map<std::string, std::string> out;
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError(path + ":" + std::to_string(line_no) + ": malformed section header");
      }
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": empty key or value");
    }
    out[section.empty() ? key : section + "." + key] = value;
  }
  return out;
}

void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& raw) {
  const std::string value = unquote(trim(raw));
  if (key == "run.experiment") {
    cfg.experiment = experiment_from_name(value);
  } else if (key == "run.model") {
    cfg.model = models::model_kind_from_name(value);
  } else if (key == "run.out_dir") {
    cfg.out_dir = value;
  } else if (key == "run.seed") {
    cfg.seed = to_u64(key, value);
    cfg.seed_set = true;
  } else if (key == "run.subjects") {
    cfg.subjects = to_int(key, value);
  } else if (key == "run.threads") {
    cfg.threads = to_int(key, value);
  } else if (key == "synth.num_classes") {
    cfg.synth.num_classes = to_int(key, value);
  } else if (key == "synth.trials_per_class") {
    cfg.synth.trials_per_class = to_int(key, value);
  } else if (key == "synth.trial_seconds") {
    cfg.synth.trial_seconds = to_double(key, value);
  } else if (key == "synth.sample_rate_hz") {
    cfg.synth.sample_rate_hz = to_double(key, value);
  } else if (key == "synth.grid_h") {
    cfg.synth.grid_h = to_int(key, value);
  } else if (key == "synth.grid_w") {
    cfg.synth.grid_w = to_int(key, value);
  } else if (key == "synth.noise_band_lo_hz") {
    cfg.synth.noise_band_lo_hz = to_double(key, value);
  } else if (key == "synth.noise_band_hi_hz") {
    cfg.synth.noise_band_hi_hz = to_double(key, value);
  } else if (key == "synth.snr_db") {
    cfg.synth.snr_db = to_double(key, value);
  } else if (key == "synth.jitter") {
    cfg.synth.inter_trial_amplitude_jitter = to_double(key, value);
  } else if (key == "synth.transition_ms") {
    cfg.synth.transition_ms = to_double(key, value);
  } else if (key == "synth.rest_class") {
    cfg.synth.rest_class = to_int(key, value);
  } else if (key == "synth.dynamic_order") {
    cfg.dynamic_order = to_int_array(key, value);
  } else if (key == "filter.hp_cutoff_hz") {
    cfg.filter.hp_cutoff_hz = to_double(key, value);
  } else if (key == "filter.hp_order") {
    cfg.filter.hp_order = to_int(key, value);
  } else if (key == "filter.lp_cutoff_hz") {
    cfg.filter.lp_cutoff_hz = to_double(key, value);
  } else if (key == "filter.lp_order") {
    cfg.filter.lp_order = to_int(key, value);
  } else if (key == "filter.notch_hz") {
    cfg.filter.notch_hz = to_double(key, value);
  } else if (key == "filter.notch_q") {
    cfg.filter.notch_q = to_double(key, value);
  } else if (key == "filter.dc_window_ms") {
    cfg.filter.dc_window_ms = to_double(key, value);
  } else if (key == "filter.mav_window_ms") {
    cfg.filter.mav_window_ms = to_double(key, value);
  } else if (key == "frames.static_increment_ms") {
    cfg.frames.static_increment_ms = to_double(key, value);
  } else if (key == "frames.dynamic_increment_ms") {
    cfg.frames.dynamic_increment_ms = to_double(key, value);
  } else if (key == "train.learning_rate") {
    cfg.train.learning_rate = to_double(key, value);
  } else if (key == "train.batch_size") {
    cfg.train.batch_size = to_int(key, value);
    cfg.triplet.batch_size = cfg.train.batch_size;
  } else if (key == "train.patience") {
    cfg.train.patience = to_int(key, value);
  } else if (key == "train.min_delta") {
    cfg.train.min_delta = to_double(key, value);
  } else if (key == "train.max_epochs") {
    cfg.train.max_epochs = to_int(key, value);
  } else if (key == "train.best_epoch_recall") {
    cfg.train.best_epoch_recall = to_bool(key, value);
  } else if (key == "triplet.margin_alpha") {
    cfg.triplet.margin_alpha = to_double(key, value);
  } else if (key == "triplet.batch_size") {
    cfg.triplet.batch_size = to_int(key, value);
  } else if (key == "center.tau") {
    cfg.center.tau = to_double(key, value);
  } else if (key == "center.center_lr") {
    cfg.center.center_lr = to_double(key, value);
  } else if (key == "ecnn.lambda_kl") {
    cfg.ecnn.lambda_kl = to_double(key, value);
  } else if (key == "ecnn.evidence_activation") {
    if (value == "relu") {
      cfg.ecnn.evidence_activation = models::EcnnConfig::Activation::relu;
    } else if (value == "softplus") {
      cfg.ecnn.evidence_activation = models::EcnnConfig::Activation::softplus;
    } else {
      throw ConfigError("ecnn.evidence_activation must be relu or softplus");
    }
  } else if (key == "eval.kl_bins") {
    cfg.eval.kl_bins = to_int(key, value);
  } else if (key == "eval.kl_eps") {
    cfg.eval.kl_eps = to_double(key, value);
  } else if (key == "eval.calibration_bins") {
    cfg.eval.calibration_bins = to_int(key, value);
  } else if (key == "eval.fpr_denominator") {
    if (value == "all_incorrect") {
      cfg.eval.fpr_denominator = eval::FprDenominator::all_incorrect;
    } else if (value == "accepted") {
      cfg.eval.fpr_denominator = eval::FprDenominator::accepted;
    } else {
      throw ConfigError("eval.fpr_denominator must be all_incorrect or accepted");
    }
  } else {
    throw ConfigError("unknown setting '" + key + "'");
  }
}

ExperimentConfig load_config(const std::string& path) {
  ExperimentConfig cfg;
  for (const auto& [key, value] : parse_config_file(path)) {
    apply_setting(cfg, key, value);
  }
  return cfg;
}

}  // namespace emglab::harness
