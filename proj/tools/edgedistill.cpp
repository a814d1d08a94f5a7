// edgedistill command-line driver.

#include "edgedistill/config.hpp"
#include "edgedistill/errors.hpp"
#include "edgedistill/io.hpp"
#include "edgedistill/pipeline.hpp"
#include "edgedistill/random.hpp"
#include "edgedistill/rundir.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace edgedistill;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitDivergence = 4;

struct Flags {
  std::string config_path;
  std::string run_dir = "run";
  std::optional<std::uint64_t> seed;
  std::optional<int> bits;
  std::optional<double> tau_c;
  std::optional<double> margin;
  std::optional<int> neg_set_size;
  std::optional<std::string> sampling;
  std::optional<std::string> quant_mode;
  std::optional<std::string> stage;
  std::vector<std::string> sets;
  bool force = false;
  std::string checkpoint;
  bool random_init = false;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config_path, "key = value config file");
  cmd->add_option("--run-dir", f.run_dir, "run directory")->capture_default_str();
  cmd->add_option("--seed", f.seed, "benchmark and training seed");
  cmd->add_option("--bits", f.bits, "quantization bit-width");
  cmd->add_option("--tau-c", f.tau_c, "curation confidence threshold");
  cmd->add_option("--margin", f.margin, "triplet margin");
  cmd->add_option("--neg-set-size", f.neg_set_size, "negatives kept per triplet");
  cmd->add_option("--sampling", f.sampling, "negative sampling")->check(CLI::IsMember({"semi-hard", "hard"}));
  cmd->add_option("--quant-mode", f.quant_mode, "activation quantization")
      ->check(CLI::IsMember({"static", "dynamic"}));
  cmd->add_option("--stage", f.stage, "two-stage or one-stage training")->check(CLI::IsMember({"one", "two"}));
  cmd->add_option("--set", f.sets, "override any config key (key=value), repeatable");
  cmd->add_flag("--force", f.force, "re-run stages that are up to date");
}

// Priority: defaults < config file (or the run directory's snapshot) < EDGEDISTILL_SEED < flags.
PipelineConfig resolve(const Flags& f) {
  PipelineConfig c;
  if (!f.config_path.empty()) {
    c = load_config(f.config_path);
  } else if (fs::exists(fs::path(f.run_dir) / "config.cfg")) {
    c = load_config(fs::path(f.run_dir) / "config.cfg");
  }
  apply_environment(c);
  for (const auto& kv : f.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_config_value(c, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (f.seed) c.benchmark.seed = *f.seed;
  if (f.bits) c.bits = *f.bits;
  if (f.tau_c) c.tau_c = *f.tau_c;
  if (f.margin) c.margin = *f.margin;
  if (f.neg_set_size) c.neg_set_size = *f.neg_set_size;
  if (f.sampling) set_config_value(c, "sampling", *f.sampling);
  if (f.quant_mode) set_config_value(c, "quant_mode", *f.quant_mode);
  if (f.stage) set_config_value(c, "stage", *f.stage);
  c.validate();
  return c;
}

void print_report(const EvalReport& e) {
  std::printf("non-RGB %.2f  RGB %.2f  Avg %.2f  (mean true-class angle %.2f deg)\n", 100 * e.acc_nonrgb,
              100 * e.acc_rgb, 100 * e.acc_avg, e.angles_all.mean_deg);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-modality distillation and quantization-aware contrastive fine-tuning"};
  app.require_subcommand(1);
  Flags flags;

  struct Cmd {
    const char* name;
    const char* help;
    std::optional<Stage> stage;
  };
  const std::vector<Cmd> cmds = {
      {"gen", "generate the synthetic benchmark", Stage::kGen},
      {"curate", "score the teacher features and keep confident samples", Stage::kCurate},
      {"stage1", "dual-modality feature distillation", Stage::kStage1},
      {"calibrate", "fit quantization scales and write PTQ checkpoints", Stage::kCalibrate},
      {"ptq-eval", "evaluate the float and PTQ students", Stage::kPtqEval},
      {"stage2", "quantization-aware contrastive fine-tuning", Stage::kStage2},
      {"eval", "evaluate the stage-2 students, or --checkpoint", Stage::kEval},
      {"angles", "write true-class angle histograms", Stage::kAngles},
      {"pipeline", "run every stage and print the comparison table", std::nullopt},
      {"report", "write and print the comparison report", Stage::kReport},
  };
  std::vector<CLI::App*> subs;
  for (const auto& c : cmds) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    add_common(sub, flags);
    subs.push_back(sub);
  }
  subs[6]->add_option("--checkpoint", flags.checkpoint, "evaluate this .evf or .evq file instead");
  subs[6]->add_flag("--random-init", flags.random_init, "evaluate an untrained student");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    const PipelineConfig config = resolve(flags);
    RunDirectory run(flags.run_dir, config, &std::cerr);
    for (std::size_t k = 0; k < cmds.size(); ++k) {
      if (!subs[k]->parsed()) continue;
      const std::string name = cmds[k].name;
      if (name == "pipeline") {
        run.run_all(flags.force);
        std::cout << run.table();
      } else if (name == "eval" && (flags.random_init || !flags.checkpoint.empty())) {
        if (flags.random_init) {
          Rng rng(derive_seed(config.benchmark.seed, kSeedStage1Init));
          const auto dims = student_dims(config);
          if (!run.up_to_date(Stage::kGen)) run.run(Stage::kGen);
          print_report(evaluate_float(DenseEncoder::random(dims, rng), run.benchmark()));
        } else {
          print_report(run.evaluate_checkpoint(flags.checkpoint));
        }
      } else {
        run.run(*cmds[k].stage, flags.force);
        if (name == "report") {
          const Bytes text = read_file(run.root() / "report.txt");
          std::cout.write(reinterpret_cast<const char*>(text.data()), static_cast<std::streamsize>(text.size()));
        }
      }
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DivergenceError& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
