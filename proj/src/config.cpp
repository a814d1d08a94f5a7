#include "edgedistill/config.hpp"

#include "edgedistill/errors.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace edgedistill {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const char* first = v.data();
  const char* last = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc() || ptr != last) {
    throw ConfigError("config key '" + key + "': cannot parse '" + v + "' as a number");
  }
  return out;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  // Shortest representation that round-trips.
  for (int prec = 1; prec <= 17; ++prec) {
    char t[64];
    std::snprintf(t, sizeof t, "%.*g", prec, v);
    if (std::strtod(t, nullptr) == v) return t;
  }
  return buf;
}

std::vector<Index> parse_dims(const std::string& key, const std::string& v) {
  std::vector<Index> dims;
  if (trim(v).empty() || trim(v) == "none") return dims;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto d = parse_number<long long>(key, trim(item));
    if (d <= 0) throw ConfigError("config key '" + key + "': widths must be positive");
    dims.push_back(static_cast<Index>(d));
  }
  return dims;
}

}  // namespace

std::string to_string(ModalityMix m) {
  switch (m) {
    case ModalityMix::kDual: return "dual";
    case ModalityMix::kRgbOnly: return "rgb";
    case ModalityMix::kNonRgbOnly: return "nonrgb";
  }
  return "dual";
}
std::string to_string(QuantMode m) { return m == QuantMode::kStatic ? "static" : "dynamic"; }
std::string to_string(Sampling s) { return s == Sampling::kSemiHard ? "semi-hard" : "hard"; }

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "seed", "classes", "distractors", "latent_dim", "input_dim", "map_hidden", "n_per_class",
      "noise", "test_fraction", "corruption", "corruption_blend", "distractor_angle_deg",
      "student_hidden", "temperature", "tau_c", "stage1_epochs", "stage1_batch_size", "stage1_lr",
      "stage1_min_lr", "weight_decay", "modality", "calib_pairs", "calib_source", "bits",
      "quant_mode", "stage", "stage2_epochs", "stage2_batch_size", "stage2_lr", "margin",
      "neg_set_size", "neg_pool", "sampling", "positive_mode"};
  return keys;
}

void set_config_value(PipelineConfig& c, const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  auto& b = c.benchmark;
  auto i = [&] { return parse_number<int>(key, v); };
  auto d = [&] { return parse_number<double>(key, v); };
  auto bad = [&]() -> ConfigError { return ConfigError("config key '" + key + "': invalid value '" + v + "'"); };

  if (key == "seed") b.seed = parse_number<std::uint64_t>(key, v);
  else if (key == "classes") b.classes = i();
  else if (key == "distractors") b.distractors = i();
  else if (key == "latent_dim") b.latent_dim = i();
  else if (key == "input_dim") b.input_dim = i();
  else if (key == "map_hidden") b.map_hidden = i();
  else if (key == "n_per_class") b.n_per_class = i();
  else if (key == "noise") b.noise = d();
  else if (key == "test_fraction") b.test_fraction = d();
  else if (key == "corruption") b.corruption = d();
  else if (key == "corruption_blend") b.corruption_blend = i();
  else if (key == "distractor_angle_deg") b.distractor_angle_deg = d();
  else if (key == "student_hidden") c.student_hidden = parse_dims(key, v);
  else if (key == "temperature") c.temperature = d();
  else if (key == "tau_c") c.tau_c = d();
  else if (key == "stage1_epochs") c.stage1_epochs = i();
  else if (key == "stage1_batch_size") c.stage1_batch_size = i();
  else if (key == "stage1_lr") c.stage1_lr = d();
  else if (key == "stage1_min_lr") c.stage1_min_lr = d();
  else if (key == "weight_decay") c.weight_decay = d();
  else if (key == "modality") {
    if (v == "dual") c.modality = ModalityMix::kDual;
    else if (v == "rgb") c.modality = ModalityMix::kRgbOnly;
    else if (v == "nonrgb") c.modality = ModalityMix::kNonRgbOnly;
    else throw bad();
  } else if (key == "calib_pairs") c.calib_pairs = i();
  else if (key == "calib_source") {
    if (v == "curated") c.calib_source = CalibrationSource::kCurated;
    else if (v == "raw") c.calib_source = CalibrationSource::kRaw;
    else throw bad();
  } else if (key == "bits") c.bits = i();
  else if (key == "quant_mode") {
    if (v == "static") c.quant_mode = QuantMode::kStatic;
    else if (v == "dynamic") c.quant_mode = QuantMode::kDynamic;
    else throw bad();
  } else if (key == "stage") {
    if (v == "two") c.stages = PipelineStages::kTwo;
    else if (v == "one") c.stages = PipelineStages::kOne;
    else throw bad();
  } else if (key == "stage2_epochs") c.stage2_epochs = i();
  else if (key == "stage2_batch_size") c.stage2_batch_size = i();
  else if (key == "stage2_lr") c.stage2_lr = d();
  else if (key == "margin") c.margin = d();
  else if (key == "neg_set_size") c.neg_set_size = i();
  else if (key == "neg_pool") c.neg_pool = i();
  else if (key == "sampling") {
    if (v == "semi-hard") c.sampling = Sampling::kSemiHard;
    else if (v == "hard") c.sampling = Sampling::kHard;
    else throw bad();
  } else if (key == "positive_mode") {
    if (v == "cross-modal") c.positive_mode = PositiveMode::kCrossModal;
    else if (v == "any") c.positive_mode = PositiveMode::kAny;
    else throw bad();
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

std::string get_config_value(const PipelineConfig& c, const std::string& key) {
  const auto& b = c.benchmark;
  if (key == "seed") return std::to_string(b.seed);
  if (key == "classes") return std::to_string(b.classes);
  if (key == "distractors") return std::to_string(b.distractors);
  if (key == "latent_dim") return std::to_string(b.latent_dim);
  if (key == "input_dim") return std::to_string(b.input_dim);
  if (key == "map_hidden") return std::to_string(b.map_hidden);
  if (key == "n_per_class") return std::to_string(b.n_per_class);
  if (key == "noise") return fmt_double(b.noise);
  if (key == "test_fraction") return fmt_double(b.test_fraction);
  if (key == "corruption") return fmt_double(b.corruption);
  if (key == "corruption_blend") return std::to_string(b.corruption_blend);
  if (key == "distractor_angle_deg") return fmt_double(b.distractor_angle_deg);
  if (key == "student_hidden") {
    if (c.student_hidden.empty()) return "none";
    std::string s;
    for (std::size_t k = 0; k < c.student_hidden.size(); ++k) {
      if (k) s += ",";
      s += std::to_string(c.student_hidden[k]);
    }
    return s;
  }
  if (key == "temperature") return fmt_double(c.temperature);
  if (key == "tau_c") return fmt_double(c.tau_c);
  if (key == "stage1_epochs") return std::to_string(c.stage1_epochs);
  if (key == "stage1_batch_size") return std::to_string(c.stage1_batch_size);
  if (key == "stage1_lr") return fmt_double(c.stage1_lr);
  if (key == "stage1_min_lr") return fmt_double(c.stage1_min_lr);
  if (key == "weight_decay") return fmt_double(c.weight_decay);
  if (key == "modality") return to_string(c.modality);
  if (key == "calib_pairs") return std::to_string(c.calib_pairs);
  if (key == "calib_source") return c.calib_source == CalibrationSource::kCurated ? "curated" : "raw";
  if (key == "bits") return std::to_string(c.bits);
  if (key == "quant_mode") return to_string(c.quant_mode);
  if (key == "stage") return c.stages == PipelineStages::kTwo ? "two" : "one";
  if (key == "stage2_epochs") return std::to_string(c.stage2_epochs);
  if (key == "stage2_batch_size") return std::to_string(c.stage2_batch_size);
  if (key == "stage2_lr") return fmt_double(c.stage2_lr);
  if (key == "margin") return fmt_double(c.margin);
  if (key == "neg_set_size") return std::to_string(c.neg_set_size);
  if (key == "neg_pool") return std::to_string(c.neg_pool);
  if (key == "sampling") return to_string(c.sampling);
  if (key == "positive_mode") return c.positive_mode == PositiveMode::kCrossModal ? "cross-modal" : "any";
  throw ConfigError("unknown config key '" + key + "'");
}

void PipelineConfig::validate() const {
  benchmark.validate();
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (!(tau_c >= 0.0 && tau_c <= 1.0)) throw ConfigError("tau_c must lie in [0, 1]");
  if (stage1_epochs < 0 || stage2_epochs < 0) throw ConfigError("epoch counts must be non-negative");
  if (stage1_batch_size <= 0 || stage2_batch_size <= 0) throw ConfigError("batch sizes must be positive");
  if (!(stage1_lr > 0.0) || !(stage1_min_lr >= 0.0) || !(stage2_lr >= 0.0)) {
    throw ConfigError("learning rates must be positive");
  }
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be non-negative");
  if (calib_pairs <= 0) throw ConfigError("calib_pairs must be positive");
  if (bits < 2 || bits > 16) throw ConfigError("bits must lie in [2, 16]");
  if (!(margin > 0.0)) throw ConfigError("margin must be positive");
  if (neg_set_size < 1) throw ConfigError("neg_set_size must be at least 1");
  if (neg_pool < 1) throw ConfigError("neg_pool must be at least 1");
}

PipelineConfig parse_config(const std::string& text, PipelineConfig base) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    set_config_value(base, trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return base;
}

PipelineConfig load_config(const std::filesystem::path& path, PipelineConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

void apply_environment(PipelineConfig& config) {
  if (const char* seed = std::getenv("EDGEDISTILL_SEED"); seed && *seed) {
    set_config_value(config, "seed", seed);
  }
}

std::string snapshot(const PipelineConfig& config) {
  std::string out;
  for (const auto& k : config_keys()) out += k + " = " + get_config_value(config, k) + "\n";
  return out;
}

std::string config_hash(const PipelineConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : snapshot(config)) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace edgedistill
