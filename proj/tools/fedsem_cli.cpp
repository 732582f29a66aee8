// Command-line front end: dataset generation, the CL/FL experiment matrix,
// gradient-inversion attacks on saved snapshots, standalone metric
// evaluation and report/figure emission.
//
// Exit codes: 0 success, 2 configuration error, 3 missing input,
// 4 runtime failure, 5 report completed with skipped rows.

#include <CLI11.hpp>

#include <iostream>

#include "fedsem/experiment.hpp"

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  uint64_t seed = 0;
  bool seed_set = false;
  bool desk_scale = false;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_path, "experiment config (JSON)")->required();
  cmd->add_option("--out", o.out_dir, "override the config's output directory");
  cmd->add_option("--seed", o.seed, "override the config's global seed")
      ->each([&o](const std::string&) { o.seed_set = true; });
  cmd->add_flag("--desk-scale", o.desk_scale,
                "apply 64x64 desk-scale defaults (dataset dims, depth-2 model)");
}

fedsem::ExperimentConfig load_config(const CommonOpts& o) {
  fedsem::ExperimentConfig cfg = fedsem::ExperimentConfig::load(o.config_path);
  if (o.seed_set) cfg.seed = o.seed;
  if (!o.out_dir.empty()) cfg.output_dir = o.out_dir;
  if (o.desk_scale) cfg.apply_desk_scale();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"federated SEM segmentation workbench"};
  app.require_subcommand(1);

  CommonOpts gen_o, train_o, attack_o;
  bool approximate = false;
  std::string pred_path, ref_path, ref_mask_path, eval_context = "reconstruction", eval_out;
  std::string report_dir = "runs";
  std::string report_config;

  auto* gen = app.add_subcommand("generate", "synthesize the dataset and write it to disk");
  add_common(gen, gen_o);

  auto* train = app.add_subcommand("train", "run a centralized or federated training experiment");
  add_common(train, train_o);

  auto* attack = app.add_subcommand("attack", "reconstruct a client image from saved snapshots");
  add_common(attack, attack_o);
  attack->add_flag("--approximate", approximate,
                   "attack a run whose updates only approximate gradients");

  auto* evaluate = app.add_subcommand("evaluate", "compare two image files");
  evaluate->add_option("--pred", pred_path, "prediction / reconstruction PNG")->required();
  evaluate->add_option("--ref", ref_path, "reference PNG")->required();
  evaluate->add_option("--context", eval_context, "segmentation | reconstruction");
  evaluate->add_option("--ref-mask", ref_mask_path, "ground-truth mask PNG (reconstruction)");
  evaluate->add_option("--json-out", eval_out, "write the metrics JSON to a file");

  auto* report = app.add_subcommand("report", "emit tables and plots for completed runs");
  report->add_option("--out", report_dir, "experiment output directory (default: runs)");
  report->add_option("--config", report_config, "read the output directory from a config");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) {
      const std::string dir = fedsem::cmd_generate(load_config(gen_o));
      std::cout << "dataset written to " << dir << "\n";
    } else if (train->parsed()) {
      const auto outcome = fedsem::cmd_train(load_config(train_o));
      std::cout << "run written to " << outcome.run_dir << "\n"
                << outcome.summary.dump(2) << "\n";
    } else if (attack->parsed()) {
      fedsem::ExperimentConfig cfg = load_config(attack_o);
      if (approximate) cfg.attack.approximate = true;
      const auto outcome = fedsem::cmd_attack(cfg);
      std::cout << "attack artifacts written to " << outcome.attack_dir << "\n";
      for (const auto& r : outcome.runs) {
        std::cout << "  alpha " << r.alpha << ": final loss " << r.final_loss;
        if (r.metrics)
          std::cout << ", mse " << r.metrics->mse << ", psnr "
                    << (std::isinf(r.metrics->psnr_db) ? std::string("inf")
                                                       : std::to_string(r.metrics->psnr_db))
                    << " dB, ssim " << r.metrics->ssim;
        if (r.diverged) std::cout << " [diverged]";
        std::cout << "\n";
      }
    } else if (evaluate->parsed()) {
      const auto metrics = fedsem::cmd_evaluate(pred_path, ref_path, eval_context, ref_mask_path);
      std::cout << metrics.dump(2) << "\n";
      if (!eval_out.empty()) {
        std::ofstream out(eval_out);
        out << metrics.dump(2) << "\n";
      }
    } else if (report->parsed()) {
      std::string dir = report_dir;
      if (!report_config.empty())
        dir = fedsem::ExperimentConfig::load(report_config).output_dir;
      const bool complete = fedsem::cmd_report(dir);
      std::cout << "report written to " << dir << "/report\n";
      if (!complete) {
        std::cerr << "report is partial: some rows were skipped\n";
        return 5;
      }
    }
  } catch (const fedsem::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const fedsem::MissingInputError& e) {
    std::cerr << "missing input: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
