#pragma once

#include "edgedistill/benchmark.hpp"
#include "edgedistill/config.hpp"
#include "edgedistill/curation.hpp"
#include "edgedistill/distill.hpp"
#include "edgedistill/eval.hpp"
#include "edgedistill/qacl.hpp"
#include "edgedistill/quant.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace edgedistill {

/// splitmix64 of seed mixed with a per-stage tag; gives each stage its own stream.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stage_tag);

enum SeedTag : std::uint64_t {
  kSeedStage1Init = 1,
  kSeedStage1Shuffle = 2,
  kSeedCalibration = 3,
  kSeedStage2 = 4,
  kSeedOneStageInit = 5,
};

inline constexpr std::array<QuantMode, 2> kQuantModes{QuantMode::kStatic, QuantMode::kDynamic};
inline std::size_t mode_index(QuantMode m) { return m == QuantMode::kStatic ? 0 : 1; }

std::vector<Index> student_dims(const PipelineConfig& config);

CuratedDataset run_curation(const SyntheticBenchmark& bench, const PipelineConfig& config);
Stage1Result run_stage1(const SyntheticBenchmark& bench, const CuratedDataset& curated,
                        const PipelineConfig& config);

/// Training-set rows used to fit static activation scales: up to calib_pairs
/// pairs drawn without replacement from the curated set (or the raw set).
std::vector<std::size_t> calibration_indices(const CuratedDataset& curated, const PipelineConfig& config);

/// Static mode fits activation alphas on the calibration rows; dynamic mode
/// returns weight-only parameters.
std::vector<LayerQuantParams> calibrate(const DenseEncoder& encoder, const SyntheticBenchmark& bench,
                                        const std::vector<std::size_t>& calib_rows,
                                        const QuantScheme& scheme);

/// Stage 2 (or the one-stage variant from random init) in config.quant_mode.
/// The returned student is rounded to float32.
Stage2Result run_stage2(const DenseEncoder& stage1_student, const SyntheticBenchmark& bench,
                        const CuratedDataset& curated, const std::vector<std::size_t>& calib_rows,
                        const PipelineConfig& config, const TripletObserver& observer = {});

EvalReport evaluate_float(const DenseEncoder& encoder, const SyntheticBenchmark& bench);
EvalReport evaluate_quantized(const QuantizedEncoder& encoder, const SyntheticBenchmark& bench);

struct ExperimentResult {
  PipelineConfig config;
  CuratedDataset curated;
  DenseEncoder stage1;
  std::vector<double> stage1_trace;
  std::vector<std::size_t> calib_rows;
  DenseEncoder stage2;
  std::vector<Stage2Epoch> stage2_trace;
  std::array<QuantizedEncoder, 2> ptq_models;     // indexed by mode_index
  std::array<QuantizedEncoder, 2> stage2_models;
  EvalReport float_report;
  std::array<EvalReport, 2> ptq_reports;
  std::array<EvalReport, 2> stage2_reports;

  const EvalReport& ptq_report() const { return ptq_reports[mode_index(config.quant_mode)]; }
  const EvalReport& stage2_report() const { return stage2_reports[mode_index(config.quant_mode)]; }
};

ExperimentResult run_experiment(const SyntheticBenchmark& bench, const PipelineConfig& config,
                                const TripletObserver& observer = {});
ExperimentResult run_experiment(const PipelineConfig& config, const TripletObserver& observer = {});

/// Three-row comparison table: float stage-1, +PTQ, +stage-2 against
/// non-RGB, RGB and average accuracy (percent).
struct TableRow {
  std::string method;
  double nonrgb = 0.0;
  double rgb = 0.0;
  double avg = 0.0;
};
std::vector<TableRow> comparison_rows(const EvalReport& float_report, const EvalReport& ptq,
                                      const EvalReport& stage2);
std::string format_table(const std::vector<TableRow>& rows);

std::string report_json(const EvalReport& report, const ClassSet& classes);
EvalReport parse_report_json(const std::string& text);
std::string angles_csv(const AngleStats& stats);

}  // namespace edgedistill
