#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hylite/experiment.hpp"
#include "hylite/gradcheck_suite.hpp"

namespace fs = std::filesystem;
using namespace hylite;

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out;
  std::int64_t seed = -1;
  std::size_t jobs = 1;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool with_jobs) {
  cmd->add_option("--config", args.config_path, "experiment config file (key = value lines)");
  cmd->add_option("--set", args.overrides, "override a config key, e.g. --set epochs=50")
      ->take_all();
  cmd->add_option("--out", args.out, "output root directory (env HYLITE_OUT wins)");
  cmd->add_option("--seed", args.seed, "override the config seed");
  if (with_jobs) cmd->add_option("--jobs", args.jobs, "parallel training runs");
}

ExperimentConfig resolve_config(const CommonArgs& args) {
  ExperimentConfig cfg;
  if (!args.config_path.empty()) cfg = ExperimentConfig::from_file(args.config_path);
  for (const std::string& kv : args.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      fail(Err::InvalidConfig, "--set expects key=value, got \"" + kv + "\"");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!args.out.empty()) cfg.out = args.out;
  if (const char* env = std::getenv("HYLITE_OUT"); env && *env) cfg.out = env;
  if (args.seed >= 0) cfg.seed = static_cast<std::uint64_t>(args.seed);
  return cfg;
}

std::string run_dir(const ExperimentConfig& cfg, const std::string& name) {
  return (fs::path(cfg.out) / name).string();
}

void echo_report(const EvalReport& r) {
  std::printf("OA=%.4f AA=%.4f Kappa=%.4f (n=%zu)\n", r.oa, r.aa, r.kappa, r.total);
}

std::vector<double> parse_grid(const std::string& csv) {
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos < csv.size()) {
    const auto comma = csv.find(',', pos);
    const std::string tok = csv.substr(pos, comma == std::string::npos ? csv.npos : comma - pos);
    try {
      out.push_back(std::stod(tok));
    } catch (const std::exception&) {
      fail(Err::InvalidConfig, "bad number \"" + tok + "\" in grid");
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HyLITE hyperspectral transformer: training, evaluation and ablations"};
  app.require_subcommand(1);

  CommonArgs train_args, eval_args, ablate_args, sweep_args, curve_args, synth_args,
      gradcheck_args;

  auto* cmd_train = app.add_subcommand("train", "train a model and report OA/AA/Kappa");
  add_common(cmd_train, train_args, false);

  auto* cmd_eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  std::string checkpoint_path;
  add_common(cmd_eval, eval_args, false);
  cmd_eval->add_option("--checkpoint", checkpoint_path, "HYCK checkpoint file")->required();

  auto* cmd_ablate = app.add_subcommand("ablate", "run one ablation axis with a shared seed");
  std::string axis;
  add_common(cmd_ablate, ablate_args, true);
  cmd_ablate->add_option("--axis", axis, "pos | order | token_axis | fusion | components")
      ->required();

  auto* cmd_sweep = app.add_subcommand("sweep-lambda", "train across regularizer strengths");
  std::string lambda_values;
  add_common(cmd_sweep, sweep_args, true);
  cmd_sweep->add_option("--values", lambda_values, "comma grid (default 0.1,0.5,1,2,5,10)");

  auto* cmd_curve = app.add_subcommand("subsample-curve",
                                       "sample-efficiency curve over training-set fractions");
  std::string fraction_values;
  std::size_t repeats = 4;
  add_common(cmd_curve, curve_args, true);
  cmd_curve->add_option("--fractions", fraction_values, "comma grid (default 0.1..1.0)");
  cmd_curve->add_option("--repeats", repeats, "independent repeats per fraction (default 4)");

  auto* cmd_gradcheck =
      app.add_subcommand("gradcheck", "finite-difference audit of every backward rule");
  bool inject_fault = false;
  add_common(cmd_gradcheck, gradcheck_args, false);
  cmd_gradcheck->add_flag("--inject-fault", inject_fault,
                          "add a deliberately broken backward (self-test of the harness)");

  auto* cmd_synth = app.add_subcommand("synth", "write the synthetic fixture dataset");
  add_common(cmd_synth, synth_args, false);

  CLI11_PARSE(app, argc, argv);

  try {
    if (cmd_train->parsed()) {
      const auto cfg = resolve_config(train_args);
      echo_report(run_train(cfg, run_dir(cfg, "train")));
    } else if (cmd_eval->parsed()) {
      const auto cfg = resolve_config(eval_args);
      echo_report(run_eval(cfg, checkpoint_path, run_dir(cfg, "eval")));
    } else if (cmd_ablate->parsed()) {
      const auto cfg = resolve_config(ablate_args);
      const auto rows = run_ablate(cfg, axis, run_dir(cfg, "ablate_" + axis), ablate_args.jobs);
      for (const auto& r : rows) {
        std::printf("%-34s ", r.variant.c_str());
        echo_report(r.report);
      }
    } else if (cmd_sweep->parsed()) {
      const auto cfg = resolve_config(sweep_args);
      const auto grid =
          lambda_values.empty() ? default_lambda_grid() : parse_grid(lambda_values);
      const auto rows =
          run_sweep_lambda(cfg, grid, run_dir(cfg, "sweep_lambda"), sweep_args.jobs);
      for (const auto& r : rows) {
        std::printf("lambda=%-8s ", r.variant.c_str());
        echo_report(r.report);
      }
    } else if (cmd_curve->parsed()) {
      const auto cfg = resolve_config(curve_args);
      std::vector<double> fractions;
      if (fraction_values.empty())
        for (int i = 1; i <= 10; ++i) fractions.push_back(i / 10.0);
      else
        fractions = parse_grid(fraction_values);
      const auto points = run_subsample_curve(cfg, fractions, repeats,
                                              run_dir(cfg, "subsample_curve"), curve_args.jobs);
      for (const auto& p : points)
        std::printf("fraction=%.2f mean_oa=%.4f std_oa=%.4f\n", p.fraction, p.mean_oa, p.std_oa);
    } else if (cmd_gradcheck->parsed()) {
      const auto cfg = resolve_config(gradcheck_args);
      const auto dir = run_dir(cfg, "gradcheck");
      fs::create_directories(dir);
      {
        std::ofstream f(fs::path(dir) / "resolved_config.txt", std::ios::trunc);
        f << cfg.emit();
      }
      const auto t0 = std::chrono::steady_clock::now();
      const auto suite = run_gradcheck_suite(inject_fault);
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      for (const auto& e : suite.entries)
        std::printf("%-34s max rel err %.3e  %s\n", e.name.c_str(), e.max_rel_err,
                    e.max_rel_err <= suite.tol ? "ok" : "FAIL");
      std::printf("gradcheck: %zu checks in %.1fs, tolerance %.0e -> %s\n",
                  suite.entries.size(), secs, suite.tol, suite.pass() ? "pass" : "FAIL");
      if (!suite.pass()) return 1;
    } else if (cmd_synth->parsed()) {
      const auto cfg = resolve_config(synth_args);
      const auto dir = run_dir(cfg, "synth");
      run_synth(cfg, dir);
      const auto train = load_split((fs::path(dir) / "train.split").string());
      const auto test = load_split((fs::path(dir) / "test.split").string());
      std::vector<std::size_t> counts(cfg.synth_classes, 0);
      for (const auto& e : train) ++counts[e.cls - 1];
      std::printf("synthetic fixture in %s: %zux%zux%zu cube, %zu classes\n", dir.c_str(),
                  cfg.synth_h, cfg.synth_w, cfg.synth_bands, cfg.synth_classes);
      std::printf("train split:");
      for (std::size_t k = 0; k < counts.size(); ++k)
        std::printf(" class %zu: %zu", k + 1, counts[k]);
      std::printf(" (requested %zu/class); test split: %zu\n", cfg.synth_train_per_class,
                  test.size());
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "unexpected error: %s\n", e.what());
    return 2;
  }
  return 0;
}
