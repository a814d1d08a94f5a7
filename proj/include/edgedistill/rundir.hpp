#pragma once

#include "edgedistill/config.hpp"
#include "edgedistill/pipeline.hpp"

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace edgedistill {

enum class Stage { kGen, kCurate, kStage1, kCalibrate, kPtqEval, kStage2, kEval, kAngles, kReport };

const char* stage_name(Stage s);

/// A run directory holds every artifact of one pipeline run and a
/// manifest.json recording, per stage, the hash of the configuration slice
/// that produced it. A stage whose recorded hash matches and whose artifacts
/// exist is skipped unless forced.
///
///   config.cfg                  resolved configuration snapshot
///   data/                       benchmark (see write_benchmark)
///   curated.json                kept indices, confidences, pseudo-labels
///   stage1.evf                  float student after stage 1
///   calibration.json            calibration rows and static scales
///   ptq_{static,dynamic}.evq    PTQ of the stage-1 student
///   stage2.evf                  float student after stage 2
///   stage2_{static,dynamic}.evq stage-2 student, recalibrated and quantized
///   reports/*.json              eval reports (float, ptq_*, stage2_*)
///   angles/*.csv                true-class angle histograms
///   metrics/stage{1,2}.jsonl    per-epoch training log
///   report.txt, report.json     comparison table
class RunDirectory {
 public:
  RunDirectory(std::filesystem::path root, PipelineConfig config, std::ostream* log = nullptr);

  const std::filesystem::path& root() const { return root_; }
  const PipelineConfig& config() const { return config_; }

  /// Hash of the configuration keys `stage` depends on, chained with its
  /// upstream stage.
  std::string stage_hash(Stage stage) const;
  /// True when the stage ran, false when it was already up to date.
  bool run(Stage stage, bool force = false);
  /// Runs every stage in order.
  void run_all(bool force = false);
  bool up_to_date(Stage stage) const;

  /// Comparison table rebuilt from the stored reports.
  std::string table() const;

  /// Evaluates a float (.evf) or quantized (.evq) checkpoint on the stored test set.
  EvalReport evaluate_checkpoint(const std::filesystem::path& checkpoint) const;
  /// Benchmark as stored under data/.
  SyntheticBenchmark benchmark() const;

 private:
  std::filesystem::path path(const std::string& rel) const { return root_ / rel; }
  std::vector<std::string> artifacts(Stage stage) const;
  void require(Stage stage) const;
  void record(Stage stage);
  CuratedDataset curated() const;
  std::vector<std::size_t> calib_rows() const;

  void do_gen();
  void do_curate();
  void do_stage1();
  void do_calibrate();
  void do_ptq_eval();
  void do_stage2();
  void do_eval();
  void do_angles();
  void do_report();

  std::filesystem::path root_;
  PipelineConfig config_;
  std::ostream* log_;
};

}  // namespace edgedistill
