#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "hylite/dataset.hpp"
#include "hylite/metrics.hpp"
#include "hylite/model.hpp"
#include "hylite/trainer.hpp"

namespace hylite {

/// Flat key=value experiment description. Unknown keys are rejected; emit()
/// prints every key in a fixed order with round-trip-exact number formatting,
/// so parse(emit(parse(text))) == parse(text).
struct ExperimentConfig {
  // data
  std::string cube, labels, train_split, test_split, class_names;
  std::string normalize = "minmax";
  // model
  std::size_t patch = 7, dim = 64, blocks = 5, heads = 4, heads_local = 1, ff_hidden = 4;
  std::string pos_mode = "learned";
  std::string attn_order = "spectral_first";
  std::string token_axis = "spectral";
  std::string fusion = "feature_level";
  bool caf = true, local_att = true, post_norm = false;
  // training
  std::size_t epochs = 300, batch = 32, lr_step = 30, eval_every = 10;
  double lr = 5e-4, weight_decay = 5e-3, lr_gamma = 0.9, lambda = 1.0;
  std::string reg_mode = "centroid";
  bool decoupled_wd = false;
  std::uint64_t seed = 0;
  std::string out = "out";
  // synthetic fixture
  std::size_t synth_h = 32, synth_w = 32, synth_bands = 24, synth_classes = 4,
              synth_train_per_class = 50;
  double synth_noise = 0.05, synth_texture_amp = 0.2;

  bool operator==(const ExperimentConfig&) const = default;

  static ExperimentConfig from_file(const std::string& path);
  static ExperimentConfig from_text(const std::string& text);
  void set(const std::string& key, const std::string& value);
  std::string emit() const;

  ModelConfig model_config(std::size_t bands, std::size_t classes) const;
  TrainOptions train_options() const;
  Normalize normalize_mode() const;
};

struct LoadedData {
  HsiCube cube;  // normalized
  SplitList train, test;
  std::vector<std::string> class_names;
};

/// Loads cube + splits named by the config, validates them, and applies the
/// configured normalization.
LoadedData load_data(const ExperimentConfig& cfg);

struct RunResult {
  std::string variant;
  EvalReport report;
};

/// Trains per the config and writes train_log.csv, checkpoints, metrics CSVs,
/// predictions.csv and resolved_config.txt under run_dir.
EvalReport run_train(const ExperimentConfig& cfg, const std::string& run_dir);

/// Evaluates a checkpoint on the test split; writes the metric CSVs.
EvalReport run_eval(const ExperimentConfig& cfg, const std::string& checkpoint_path,
                    const std::string& run_dir);

/// Runs the 2-4 variants of one ablation axis (pos | order | token_axis |
/// fusion | components) with a shared seed; writes ablation_<axis>.csv.
std::vector<RunResult> run_ablate(const ExperimentConfig& cfg, const std::string& axis,
                                  const std::string& run_dir, std::size_t jobs = 1);

std::vector<RunResult> run_sweep_lambda(const ExperimentConfig& cfg,
                                        const std::vector<double>& values,
                                        const std::string& run_dir, std::size_t jobs = 1);

struct CurvePoint {
  double fraction = 0.0;
  double mean_oa = 0.0;
  double std_oa = 0.0;
};

std::vector<CurvePoint> run_subsample_curve(const ExperimentConfig& cfg,
                                            const std::vector<double>& fractions,
                                            std::size_t repeats, const std::string& run_dir,
                                            std::size_t jobs = 1);

/// Writes the synthetic fixture files (HSIB/HSIL/splits) plus a ready-to-train
/// resolved_config.txt pointing at them.
void run_synth(const ExperimentConfig& cfg, const std::string& run_dir);

/// The default lambda grid from the sweep protocol.
std::vector<double> default_lambda_grid();

/// Round-trip-exact decimal formatting (shortest representation).
std::string format_exact(double v);

}  // namespace hylite
