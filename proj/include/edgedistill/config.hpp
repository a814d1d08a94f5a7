#pragma once

#include "edgedistill/benchmark.hpp"
#include "edgedistill/distill.hpp"
#include "edgedistill/qacl.hpp"
#include "edgedistill/quant.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace edgedistill {

enum class CalibrationSource : std::uint8_t { kCurated, kRaw };
enum class PipelineStages : std::uint8_t { kTwo, kOne };

/// Every tunable of a run. Defaults follow the reference training recipe
/// (AdamW 1e-4 / wd 0.05, cosine to 5e-6 over 120 epochs, stage-2 lr 1e-6,
/// m = 0.3, J = 3, tau_c = 0.25, int8, 64 calibration pairs).
struct PipelineConfig {
  BenchmarkConfig benchmark;
  std::vector<Index> student_hidden{512};

  double temperature = 100.0;
  double tau_c = 0.25;

  int stage1_epochs = 120;
  int stage1_batch_size = 32;
  double stage1_lr = 1e-4;
  double stage1_min_lr = 5e-6;
  double weight_decay = 0.05;
  ModalityMix modality = ModalityMix::kDual;

  int calib_pairs = 64;
  CalibrationSource calib_source = CalibrationSource::kCurated;

  int bits = 8;
  QuantMode quant_mode = QuantMode::kStatic;

  PipelineStages stages = PipelineStages::kTwo;
  int stage2_epochs = 10;
  int stage2_batch_size = 32;
  double stage2_lr = 1e-6;
  double margin = 0.3;
  int neg_set_size = 3;
  int neg_pool = 10;
  Sampling sampling = Sampling::kSemiHard;
  PositiveMode positive_mode = PositiveMode::kCrossModal;

  void validate() const;
  QuantScheme scheme() const { return {bits, quant_mode}; }
};

/// Ordered key list of the text format.
const std::vector<std::string>& config_keys();

/// Sets one key from its text value; throws ConfigError on unknown keys or
/// unparsable values.
void set_config_value(PipelineConfig& config, const std::string& key, const std::string& value);
std::string get_config_value(const PipelineConfig& config, const std::string& key);

/// `key = value` lines; `#` starts a comment; blank lines ignored.
PipelineConfig parse_config(const std::string& text, PipelineConfig base = {});
PipelineConfig load_config(const std::filesystem::path& path, PipelineConfig base = {});

/// Applies EDGEDISTILL_SEED when it is set.
void apply_environment(PipelineConfig& config);

/// Canonical `key = value` text of every key, in config_keys() order.
std::string snapshot(const PipelineConfig& config);
/// FNV-1a 64 of the snapshot, as 16 hex digits.
std::string config_hash(const PipelineConfig& config);

std::string to_string(ModalityMix m);
std::string to_string(QuantMode m);
std::string to_string(Sampling s);

}  // namespace edgedistill
