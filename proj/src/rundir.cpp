#include "edgedistill/rundir.hpp"

#include "edgedistill/errors.hpp"
#include "edgedistill/io.hpp"

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <sstream>

namespace edgedistill {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::array<Stage, 9> kStages{Stage::kGen,     Stage::kCurate, Stage::kStage1,
                                       Stage::kCalibrate, Stage::kPtqEval, Stage::kStage2,
                                       Stage::kEval,    Stage::kAngles, Stage::kReport};

const std::array<const char*, 5> kReportNames{"float", "ptq_static", "ptq_dynamic", "stage2_static",
                                              "stage2_dynamic"};

std::vector<std::string> stage_keys(Stage s) {
  switch (s) {
    case Stage::kGen:
      return {"seed", "classes", "distractors", "latent_dim", "input_dim", "map_hidden", "n_per_class",
              "noise", "test_fraction", "corruption", "corruption_blend", "distractor_angle_deg"};
    case Stage::kCurate: return {"temperature", "tau_c"};
    case Stage::kStage1:
      return {"student_hidden", "stage1_epochs", "stage1_batch_size", "stage1_lr", "stage1_min_lr",
              "weight_decay", "modality"};
    case Stage::kCalibrate: return {"calib_pairs", "calib_source", "bits"};
    case Stage::kStage2:
      return {"stage", "quant_mode", "stage2_epochs", "stage2_batch_size", "stage2_lr", "margin",
              "neg_set_size", "neg_pool", "sampling", "positive_mode"};
    default: return {};
  }
}

std::vector<Stage> upstream(Stage s) {
  switch (s) {
    case Stage::kGen: return {};
    case Stage::kCurate: return {Stage::kGen};
    case Stage::kStage1: return {Stage::kCurate};
    case Stage::kCalibrate: return {Stage::kStage1};
    case Stage::kPtqEval: return {Stage::kCalibrate};
    case Stage::kStage2: return {Stage::kCalibrate};
    case Stage::kEval: return {Stage::kStage2};
    case Stage::kAngles: return {Stage::kEval, Stage::kPtqEval};
    case Stage::kReport: return {Stage::kAngles};
  }
  return {};
}

std::string fnv_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  write_file(p, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

json parse_json_file(const fs::path& p) {
  try {
    return json::parse(read_text(p));
  } catch (const json::exception& e) {
    throw DataError("malformed " + p.string() + ": " + e.what());
  }
}

std::string mode_name(QuantMode m) { return to_string(m); }

}  // namespace

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::kGen: return "gen";
    case Stage::kCurate: return "curate";
    case Stage::kStage1: return "stage1";
    case Stage::kCalibrate: return "calibrate";
    case Stage::kPtqEval: return "ptq-eval";
    case Stage::kStage2: return "stage2";
    case Stage::kEval: return "eval";
    case Stage::kAngles: return "angles";
    case Stage::kReport: return "report";
  }
  return "?";
}

RunDirectory::RunDirectory(fs::path root, PipelineConfig config, std::ostream* log)
    : root_(std::move(root)), config_(std::move(config)), log_(log) {
  config_.validate();
}

std::string RunDirectory::stage_hash(Stage stage) const {
  std::string text;
  for (Stage up : upstream(stage)) text += std::string("upstream ") + stage_name(up) + " " + stage_hash(up) + "\n";
  text += std::string("stage ") + stage_name(stage) + "\n";
  for (const auto& k : stage_keys(stage)) text += k + " = " + get_config_value(config_, k) + "\n";
  return fnv_hex(text);
}

std::vector<std::string> RunDirectory::artifacts(Stage stage) const {
  switch (stage) {
    case Stage::kGen:
      return {"data/classes.txt", "data/classes.eve", "data/superset.txt", "data/superset.eve",
              "data/train.evd", "data/test.evd", "data/teacher_train.eve"};
    case Stage::kCurate: return {"curated.json"};
    case Stage::kStage1: return {"stage1.evf", "metrics/stage1.jsonl"};
    case Stage::kCalibrate: return {"calibration.json", "ptq_static.evq", "ptq_dynamic.evq"};
    case Stage::kPtqEval: return {"reports/float.json", "reports/ptq_static.json", "reports/ptq_dynamic.json"};
    case Stage::kStage2:
      return {"stage2.evf", "stage2_static.evq", "stage2_dynamic.evq", "metrics/stage2.jsonl"};
    case Stage::kEval: return {"reports/stage2_static.json", "reports/stage2_dynamic.json"};
    case Stage::kAngles: {
      std::vector<std::string> out;
      for (const char* r : kReportNames) {
        for (const char* m : {"nonrgb", "rgb", "all"}) out.push_back(std::string("angles/") + r + "_" + m + ".csv");
      }
      return out;
    }
    case Stage::kReport: return {"report.txt", "report.json"};
  }
  return {};
}

bool RunDirectory::up_to_date(Stage stage) const {
  const fs::path manifest = path("manifest.json");
  if (!fs::exists(manifest)) return false;
  const json m = parse_json_file(manifest);
  const auto it = m.find("stages");
  if (it == m.end() || !it->contains(stage_name(stage))) return false;
  if ((*it)[stage_name(stage)].value("config_hash", "") != stage_hash(stage)) return false;
  for (const auto& a : artifacts(stage)) {
    if (!fs::exists(path(a))) return false;
  }
  return true;
}

void RunDirectory::require(Stage stage) const {
  for (Stage up : upstream(stage)) {
    if (!up_to_date(up)) {
      throw DataError(std::string("stage '") + stage_name(stage) + "' needs the artifacts of stage '" +
                      stage_name(up) + "' in " + root_.string() +
                      " (missing or produced by a different config); run `edgedistill " + stage_name(up) +
                      "` first");
    }
  }
}

void RunDirectory::record(Stage stage) {
  const fs::path manifest = path("manifest.json");
  json m = fs::exists(manifest) ? parse_json_file(manifest) : json::object();
  m["stages"][stage_name(stage)] = {{"config_hash", stage_hash(stage)}, {"artifacts", artifacts(stage)}};
  write_text(manifest, m.dump(2) + "\n");
}

bool RunDirectory::run(Stage stage, bool force) {
  if (!force && up_to_date(stage)) {
    if (log_) *log_ << stage_name(stage) << ": up to date, skipped\n";
    return false;
  }
  require(stage);
  write_text(path("config.cfg"), snapshot(config_));
  switch (stage) {
    case Stage::kGen: do_gen(); break;
    case Stage::kCurate: do_curate(); break;
    case Stage::kStage1: do_stage1(); break;
    case Stage::kCalibrate: do_calibrate(); break;
    case Stage::kPtqEval: do_ptq_eval(); break;
    case Stage::kStage2: do_stage2(); break;
    case Stage::kEval: do_eval(); break;
    case Stage::kAngles: do_angles(); break;
    case Stage::kReport: do_report(); break;
  }
  record(stage);
  if (log_) *log_ << stage_name(stage) << ": done\n";
  return true;
}

void RunDirectory::run_all(bool force) {
  for (Stage s : kStages) run(s, force);
}

SyntheticBenchmark RunDirectory::benchmark() const {
  SyntheticBenchmark b = read_benchmark(path("data"));
  b.config = config_.benchmark;
  return b;
}

CuratedDataset RunDirectory::curated() const {
  const json j = parse_json_file(path("curated.json"));
  CuratedDataset c;
  c.indices = j.at("indices").get<std::vector<std::size_t>>();
  c.confidences = j.at("confidences").get<std::vector<double>>();
  c.pseudo_labels = j.at("pseudo_labels").get<std::vector<std::size_t>>();
  c.tau_c = j.at("tau_c").get<double>();
  c.raw_count = j.at("raw_count").get<std::size_t>();
  if (c.confidences.size() != c.indices.size() || c.pseudo_labels.size() != c.indices.size()) {
    throw DataError("curated.json: index, confidence and pseudo-label lists differ in length");
  }
  return c;
}

std::vector<std::size_t> RunDirectory::calib_rows() const {
  return parse_json_file(path("calibration.json")).at("rows").get<std::vector<std::size_t>>();
}

void RunDirectory::do_gen() {
  write_benchmark(generate_benchmark(config_.benchmark), path("data"));
}

void RunDirectory::do_curate() {
  const SyntheticBenchmark b = benchmark();
  const CuratedDataset c = run_curation(b, config_);
  std::vector<std::string> names;
  for (std::size_t p : c.pseudo_labels) names.push_back(b.superset.labels[p]);
  json j;
  j["config_hash"] = stage_hash(Stage::kCurate);
  j["tau_c"] = c.tau_c;
  j["temperature"] = config_.temperature;
  j["raw_count"] = c.raw_count;
  j["kept"] = c.size();
  j["indices"] = c.indices;
  j["confidences"] = c.confidences;
  j["pseudo_labels"] = c.pseudo_labels;
  j["pseudo_label_names"] = names;
  write_text(path("curated.json"), j.dump(2) + "\n");
}

void RunDirectory::do_stage1() {
  const Stage1Result r = run_stage1(benchmark(), curated(), config_);
  write_float_checkpoint(path("stage1.evf"), r.student);
  const LrSchedule sched = LrSchedule::cosine(config_.stage1_lr, config_.stage1_min_lr, config_.stage1_epochs);
  std::string log;
  for (std::size_t e = 0; e < r.loss_trace.size(); ++e) {
    json j;
    j["stage"] = "stage1";
    j["epoch"] = e;
    j["loss"] = r.loss_trace[e];
    j["lr"] = sched.at(static_cast<int>(e));
    log += j.dump() + "\n";
  }
  write_text(path("metrics/stage1.jsonl"), log);
}

void RunDirectory::do_calibrate() {
  const SyntheticBenchmark b = benchmark();
  const DenseEncoder student = read_float_checkpoint(path("stage1.evf"));
  const auto rows = calibration_indices(curated(), config_);
  json j;
  j["config_hash"] = stage_hash(Stage::kCalibrate);
  j["bits"] = config_.bits;
  j["source"] = get_config_value(config_, "calib_source");
  j["rows"] = rows;
  for (QuantMode mode : kQuantModes) {
    const QuantScheme scheme{config_.bits, mode};
    const auto params = calibrate(student, b, rows, scheme);
    write_quantized_checkpoint(path("ptq_" + mode_name(mode) + ".evq"), ptq(student, params, scheme));
    if (mode == QuantMode::kStatic) {
      json layers = json::array();
      for (const auto& p : params) {
        layers.push_back({{"activation_alpha", p.activation->alpha[0]}, {"weight_alpha", p.weight.alpha}});
      }
      j["static_layers"] = layers;
    }
  }
  write_text(path("calibration.json"), j.dump(2) + "\n");
}

void RunDirectory::do_ptq_eval() {
  const SyntheticBenchmark b = benchmark();
  write_text(path("reports/float.json"),
             report_json(evaluate_float(read_float_checkpoint(path("stage1.evf")), b), b.classes));
  for (QuantMode mode : kQuantModes) {
    const std::string name = "ptq_" + mode_name(mode);
    write_text(path("reports/" + name + ".json"),
               report_json(evaluate_quantized(read_quantized_checkpoint(path(name + ".evq")), b), b.classes));
  }
}

void RunDirectory::do_stage2() {
  const SyntheticBenchmark b = benchmark();
  const DenseEncoder stage1 = read_float_checkpoint(path("stage1.evf"));
  const auto rows = calib_rows();
  const Stage2Result r = run_stage2(stage1, b, curated(), rows, config_);
  write_float_checkpoint(path("stage2.evf"), r.student);
  for (QuantMode mode : kQuantModes) {
    const QuantScheme scheme{config_.bits, mode};
    write_quantized_checkpoint(path("stage2_" + mode_name(mode) + ".evq"),
                               ptq(r.student, calibrate(r.student, b, rows, scheme), scheme));
  }
  std::string log;
  for (const auto& e : r.trace) {
    json j;
    j["stage"] = "stage2";
    j["epoch"] = e.epoch;
    j["loss"] = e.loss;
    j["triplets"] = e.triplets;
    j["lr"] = e.lr;
    log += j.dump() + "\n";
  }
  write_text(path("metrics/stage2.jsonl"), log);
}

void RunDirectory::do_eval() {
  const SyntheticBenchmark b = benchmark();
  for (QuantMode mode : kQuantModes) {
    const std::string name = "stage2_" + mode_name(mode);
    write_text(path("reports/" + name + ".json"),
               report_json(evaluate_quantized(read_quantized_checkpoint(path(name + ".evq")), b), b.classes));
  }
}

void RunDirectory::do_angles() {
  for (const char* name : kReportNames) {
    const EvalReport e = parse_report_json(read_text(path(std::string("reports/") + name + ".json")));
    const std::string base = std::string("angles/") + name;
    write_text(path(base + "_nonrgb.csv"), angles_csv(e.angles_nonrgb));
    write_text(path(base + "_rgb.csv"), angles_csv(e.angles_rgb));
    write_text(path(base + "_all.csv"), angles_csv(e.angles_all));
  }
}

std::string RunDirectory::table() const {
  auto load = [&](const std::string& name) { return parse_report_json(read_text(path("reports/" + name + ".json"))); };
  const std::string m = mode_name(config_.quant_mode);
  return format_table(comparison_rows(load("float"), load("ptq_" + m), load("stage2_" + m)));
}

void RunDirectory::do_report() {
  auto load = [&](const std::string& name) { return parse_report_json(read_text(path("reports/" + name + ".json"))); };
  const EvalReport fl = load("float");
  const DenseEncoder student = read_float_checkpoint(path("stage2.evf"));
  const auto float_bytes = fs::file_size(path("stage2.evf"));

  json j;
  j["config_hash"] = stage_hash(Stage::kReport);
  j["bits"] = config_.bits;
  j["quant_mode"] = mode_name(config_.quant_mode);
  j["stage"] = get_config_value(config_, "stage");

  std::string text = "bits = " + std::to_string(config_.bits) + ", stages = " + get_config_value(config_, "stage") + "\n";
  for (QuantMode mode : kQuantModes) {
    const std::string m = mode_name(mode);
    const EvalReport pq = load("ptq_" + m);
    const EvalReport s2 = load("stage2_" + m);
    const auto rows = comparison_rows(fl, pq, s2);
    text += "\n[" + m + (mode == config_.quant_mode ? ", primary" : "") + "]\n" + format_table(rows);
    char buf[160];
    std::snprintf(buf, sizeof buf, "mean true-class angle (deg): float %.2f, +PTQ %.2f, +stage-2 %.2f\n",
                  fl.angles_all.mean_deg, pq.angles_all.mean_deg, s2.angles_all.mean_deg);
    text += buf;
    json jm;
    for (const auto& r : rows) {
      jm["rows"].push_back({{"method", r.method}, {"nonrgb", r.nonrgb}, {"rgb", r.rgb}, {"avg", r.avg}});
    }
    jm["mean_angle_deg"] = {{"float", fl.angles_all.mean_deg},
                            {"ptq", pq.angles_all.mean_deg},
                            {"stage2", s2.angles_all.mean_deg}};
    const auto quant_bytes = fs::file_size(path("stage2_" + m + ".evq"));
    jm["model_bytes"] = {{"float32", float_bytes}, {"quantized", quant_bytes}};
    j["modes"][m] = jm;
  }
  const auto q = fs::file_size(path("stage2_" + mode_name(config_.quant_mode) + ".evq"));
  char buf[160];
  std::snprintf(buf, sizeof buf, "\nmodel size: float32 %llu bytes, int%d %llu bytes (%.3fx smaller, %lld parameters)\n",
                static_cast<unsigned long long>(float_bytes), config_.bits, static_cast<unsigned long long>(q),
                static_cast<double>(float_bytes) / static_cast<double>(q),
                static_cast<long long>(student.parameter_count()));
  text += buf;
  j["size_ratio"] = static_cast<double>(float_bytes) / static_cast<double>(q);
  write_text(path("report.txt"), text);
  write_text(path("report.json"), j.dump(2) + "\n");
}

EvalReport RunDirectory::evaluate_checkpoint(const fs::path& checkpoint) const {
  if (!up_to_date(Stage::kGen)) {
    throw DataError("evaluating a checkpoint needs the benchmark of stage 'gen' in " + root_.string());
  }
  const Bytes bytes = read_file(checkpoint);
  const SyntheticBenchmark b = benchmark();
  if (bytes.size() >= 4 && std::equal(bytes.begin(), bytes.begin() + 4, "EVQ1")) {
    return evaluate_quantized(read_quantized_checkpoint(checkpoint), b);
  }
  return evaluate_float(read_float_checkpoint(checkpoint), b);
}

}  // namespace edgedistill
