#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hylite/dataset.hpp"
#include "hylite/losses.hpp"
#include "hylite/metrics.hpp"
#include "hylite/model.hpp"

namespace hylite {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 5e-3;
  bool decoupled = false;  // default couples L2 into the gradient
};

/// Adam over a fixed set of named parameter tensors. Moments live here; the
/// tensors' grads are read and their values updated in place.
class Adam {
 public:
  Adam(std::vector<std::pair<std::string, Tensor>> params, AdamConfig cfg);

  /// One update with the given learning rate. Aborts with NonFinite naming
  /// the offending tensor if an update would produce NaN/Inf.
  void step(double lr);

  std::size_t steps() const { return t_; }

 private:
  std::vector<std::pair<std::string, Tensor>> params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

/// base_lr * gamma^floor(epoch / step_size); epoch counts from 0.
double step_lr(std::size_t epoch, double base_lr, double gamma, std::size_t step_size);

struct TrainOptions {
  std::size_t epochs = 300;
  std::size_t batch_size = 32;
  double lr = 5e-4;
  double lr_gamma = 0.9;
  std::size_t lr_step = 30;
  AdamConfig adam;
  double lambda = 1.0;
  RegMode reg_mode = RegMode::centroid;
  std::uint64_t seed = 0;
  std::size_t eval_every = 10;  // test-split evaluation cadence; 0 = final only
  std::string out_dir;          // when set: checkpoints + train_log.csv land here
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based, contiguous
  double lr = 0.0;
  double loss = 0.0, ce = 0.0, reg = 0.0;  // means over training instances
  std::optional<EvalReport> eval;
};

struct TrainResult {
  std::vector<EpochLog> log;
  EvalReport final_report;
  std::vector<int> final_predictions;  // over the test split, 0-based
  double best_oa = 0.0;
};

/// Epochs of shuffled batches: forward, objective, backward, Adam. Fully
/// deterministic for a fixed seed. The regularizer value is logged every
/// epoch even when lambda is 0 (it is kept out of the objective graph then).
TrainResult train(Model& model, const HsiCube& cube, const SplitList& train_split,
                  const SplitList& test_split, const TrainOptions& options);

/// Argmax predictions over a split, ties broken toward the lowest class id.
std::vector<int> predict(Model& model, const HsiCube& cube, const SplitList& split,
                         std::size_t batch_size = 32);

EvalReport evaluate_model(Model& model, const HsiCube& cube, const SplitList& split,
                          std::size_t batch_size = 32);

void write_train_log_csv(const std::vector<EpochLog>& log, const std::string& path);

/// predictions.csv rows: row,col,true,pred (1-based class ids).
void write_predictions_csv(const SplitList& split, const std::vector<int>& predictions,
                           const std::string& path);

}  // namespace hylite
