#include "edgedistill/pipeline.hpp"

#include "edgedistill/errors.hpp"
#include "edgedistill/random.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <numeric>

namespace edgedistill {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stage_tag) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stage_tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

std::vector<Index> student_dims(const PipelineConfig& config) {
  std::vector<Index> dims{config.benchmark.input_dim};
  dims.insert(dims.end(), config.student_hidden.begin(), config.student_hidden.end());
  dims.push_back(config.benchmark.latent_dim);
  return dims;
}

CuratedDataset run_curation(const SyntheticBenchmark& bench, const PipelineConfig& config) {
  return curate(bench.train_teacher, bench.superset, config.tau_c, config.temperature);
}

Stage1Result run_stage1(const SyntheticBenchmark& bench, const CuratedDataset& curated,
                        const PipelineConfig& config) {
  Rng init(derive_seed(config.benchmark.seed, kSeedStage1Init));
  const auto dims = student_dims(config);
  DenseEncoder student = DenseEncoder::random(dims, init);
  Stage1Config s1;
  s1.epochs = config.stage1_epochs;
  s1.batch_size = config.stage1_batch_size;
  s1.base_lr = config.stage1_lr;
  s1.min_lr = config.stage1_min_lr;
  s1.weight_decay = config.weight_decay;
  s1.seed = derive_seed(config.benchmark.seed, kSeedStage1Shuffle);
  s1.mix = config.modality;
  Stage1Result result = stage1_train(std::move(student), select_rows(bench.train.rgb, curated.indices),
                                     select_rows(bench.train.nonrgb, curated.indices),
                                     select_rows(bench.train_teacher, curated.indices), s1);
  round_to_float(result.student);
  return result;
}

std::vector<std::size_t> calibration_indices(const CuratedDataset& curated, const PipelineConfig& config) {
  std::vector<std::size_t> pool;
  if (config.calib_source == CalibrationSource::kCurated) {
    pool = curated.indices;
  } else {
    pool.resize(curated.raw_count);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
  }
  if (pool.empty()) throw DataError("calibration pool is empty");
  Rng rng(derive_seed(config.benchmark.seed, kSeedCalibration));
  rng.shuffle(pool);
  pool.resize(std::min(pool.size(), static_cast<std::size_t>(config.calib_pairs)));
  std::sort(pool.begin(), pool.end());
  return pool;
}

std::vector<LayerQuantParams> calibrate(const DenseEncoder& encoder, const SyntheticBenchmark& bench,
                                        const std::vector<std::size_t>& calib_rows,
                                        const QuantScheme& scheme) {
  if (scheme.mode == QuantMode::kDynamic) return weight_params(encoder, scheme);
  return calibrate_static(encoder, select_rows(bench.train.rgb, calib_rows),
                          select_rows(bench.train.nonrgb, calib_rows), scheme);
}

Stage2Result run_stage2(const DenseEncoder& stage1_student, const SyntheticBenchmark& bench,
                        const CuratedDataset& curated, const std::vector<std::size_t>& calib_rows,
                        const PipelineConfig& config, const TripletObserver& observer) {
  Stage2Config s2;
  s2.margin = config.margin;
  s2.neg_set_size = static_cast<std::size_t>(config.neg_set_size);
  s2.neg_pool = static_cast<std::size_t>(config.neg_pool);
  s2.weight_decay = config.weight_decay;
  s2.batch_size = config.stage2_batch_size;
  s2.sampling = config.sampling;
  s2.positive_mode = config.positive_mode;
  s2.seed = derive_seed(config.benchmark.seed, kSeedStage2);

  DenseEncoder start;
  if (config.stages == PipelineStages::kTwo) {
    start = stage1_student;
    s2.epochs = config.stage2_epochs;
    s2.schedule = LrSchedule::constant(config.stage2_lr);
  } else {
    // Contrastive QAT from scratch, given the combined epoch budget and the
    // stage-1 optimizer schedule.
    Rng init(derive_seed(config.benchmark.seed, kSeedOneStageInit));
    const auto dims = student_dims(config);
    start = DenseEncoder::random(dims, init);
    round_to_float(start);
    s2.epochs = config.stage1_epochs + config.stage2_epochs;
    s2.schedule = LrSchedule::cosine(config.stage1_lr, config.stage1_min_lr, s2.epochs);
  }
  const QuantScheme scheme = config.scheme();
  const auto calibration = calibrate(start, bench, calib_rows, scheme);
  Stage2Result result =
      stage2_train(std::move(start), select_rows(bench.train.rgb, curated.indices),
                   select_rows(bench.train.nonrgb, curated.indices), curated.pseudo_labels, scheme,
                   calibration, s2, observer);
  round_to_float(result.student);
  return result;
}

EvalReport evaluate_float(const DenseEncoder& encoder, const SyntheticBenchmark& bench) {
  return evaluate([&](const Matrix& x) { return forward(encoder, x); }, bench.test.rgb, bench.test.nonrgb,
                  bench.test.labels, bench.classes);
}

EvalReport evaluate_quantized(const QuantizedEncoder& encoder, const SyntheticBenchmark& bench) {
  return evaluate([&](const Matrix& x) { return encoder.forward(x); }, bench.test.rgb, bench.test.nonrgb,
                  bench.test.labels, bench.classes);
}

ExperimentResult run_experiment(const SyntheticBenchmark& bench, const PipelineConfig& config,
                                const TripletObserver& observer) {
  config.validate();
  ExperimentResult r;
  r.config = config;
  r.curated = run_curation(bench, config);
  Stage1Result s1 = run_stage1(bench, r.curated, config);
  r.stage1 = std::move(s1.student);
  r.stage1_trace = std::move(s1.loss_trace);
  r.float_report = evaluate_float(r.stage1, bench);
  r.calib_rows = calibration_indices(r.curated, config);

  for (QuantMode mode : kQuantModes) {
    const QuantScheme scheme{config.bits, mode};
    const auto params = calibrate(r.stage1, bench, r.calib_rows, scheme);
    r.ptq_models[mode_index(mode)] = ptq(r.stage1, params, scheme);
    r.ptq_reports[mode_index(mode)] = evaluate_quantized(r.ptq_models[mode_index(mode)], bench);
  }

  Stage2Result s2 = run_stage2(r.stage1, bench, r.curated, r.calib_rows, config, observer);
  r.stage2 = std::move(s2.student);
  r.stage2_trace = std::move(s2.trace);
  for (QuantMode mode : kQuantModes) {
    const QuantScheme scheme{config.bits, mode};
    const auto params = calibrate(r.stage2, bench, r.calib_rows, scheme);
    r.stage2_models[mode_index(mode)] = ptq(r.stage2, params, scheme);
    r.stage2_reports[mode_index(mode)] = evaluate_quantized(r.stage2_models[mode_index(mode)], bench);
  }
  return r;
}

ExperimentResult run_experiment(const PipelineConfig& config, const TripletObserver& observer) {
  const SyntheticBenchmark bench = generate_benchmark(config.benchmark);
  return run_experiment(bench, config, observer);
}

std::vector<TableRow> comparison_rows(const EvalReport& float_report, const EvalReport& ptq_report,
                                      const EvalReport& stage2) {
  auto row = [](std::string name, const EvalReport& e) {
    return TableRow{std::move(name), 100.0 * e.acc_nonrgb, 100.0 * e.acc_rgb, 100.0 * e.acc_avg};
  };
  return {row("float stage-1", float_report), row("+PTQ", ptq_report), row("+stage-2", stage2)};
}

std::string format_table(const std::vector<TableRow>& rows) {
  std::string out;
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-16s %8s %8s %8s\n", "Method", "non-RGB", "RGB", "Avg");
  out += buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-16s %8.2f %8.2f %8.2f\n", r.method.c_str(), r.nonrgb, r.rgb, r.avg);
    out += buf;
  }
  return out;
}

namespace {

nlohmann::ordered_json angles_json(const AngleStats& a) {
  nlohmann::ordered_json j;
  j["mean_deg"] = a.mean_deg;
  j["count"] = a.count;
  j["histogram"] = a.histogram;
  return j;
}

AngleStats angles_from(const nlohmann::json& j) {
  AngleStats a;
  a.mean_deg = j.at("mean_deg").get<double>();
  a.count = j.at("count").get<std::uint64_t>();
  const auto h = j.at("histogram").get<std::vector<std::uint64_t>>();
  if (h.size() != a.histogram.size()) throw DataError("report histogram has the wrong number of bins");
  std::copy(h.begin(), h.end(), a.histogram.begin());
  return a;
}

}  // namespace

std::string report_json(const EvalReport& e, const ClassSet& classes) {
  nlohmann::ordered_json j;
  j["acc_nonrgb"] = e.acc_nonrgb;
  j["acc_rgb"] = e.acc_rgb;
  j["acc_avg"] = e.acc_avg;
  j["classes"] = classes.names;
  j["confusion_nonrgb"] = e.confusion_nonrgb;
  j["confusion_rgb"] = e.confusion_rgb;
  j["angles_nonrgb"] = angles_json(e.angles_nonrgb);
  j["angles_rgb"] = angles_json(e.angles_rgb);
  j["angles_all"] = angles_json(e.angles_all);
  return j.dump(2) + "\n";
}

EvalReport parse_report_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    EvalReport e;
    e.acc_nonrgb = j.at("acc_nonrgb").get<double>();
    e.acc_rgb = j.at("acc_rgb").get<double>();
    e.acc_avg = j.at("acc_avg").get<double>();
    e.confusion_nonrgb = j.at("confusion_nonrgb").get<Confusion>();
    e.confusion_rgb = j.at("confusion_rgb").get<Confusion>();
    e.angles_nonrgb = angles_from(j.at("angles_nonrgb"));
    e.angles_rgb = angles_from(j.at("angles_rgb"));
    e.angles_all = angles_from(j.at("angles_all"));
    return e;
  } catch (const nlohmann::json::exception& ex) {
    throw DataError(std::string("malformed eval report: ") + ex.what());
  }
}

std::string angles_csv(const AngleStats& stats) {
  std::string out = "bin_start_deg,count\n";
  const double width = 180.0 / kAngleBins;
  for (int b = 0; b < kAngleBins; ++b) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%g,%llu\n", b * width, static_cast<unsigned long long>(stats.histogram[b]));
    out += buf;
  }
  return out;
}

}  // namespace edgedistill
