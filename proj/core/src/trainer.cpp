#include "hylite/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "hylite/rng.hpp"

namespace hylite {

Adam::Adam(std::vector<std::pair<std::string, Tensor>> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& [name, t] : params_) {
    m_.emplace_back(t.numel(), 0.0);
    v_.emplace_back(t.numel(), 0.0);
  }
}

void Adam::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    Tensor& t = params_[pi].second;
    const auto grad = t.grad();
    auto theta = t.value_mut();
    auto& m = m_[pi];
    auto& v = v_[pi];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double g =
          cfg_.decoupled ? grad[i] : grad[i] + cfg_.weight_decay * theta[i];
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      double next = theta[i] - lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      if (cfg_.decoupled) next -= lr * cfg_.weight_decay * theta[i];
      if (!std::isfinite(next))
        fail(Err::NonFinite, "adam update produced NaN/Inf in " + params_[pi].first);
      theta[i] = next;
    }
  }
}

double step_lr(std::size_t epoch, double base_lr, double gamma, std::size_t step_size) {
  if (step_size == 0) return base_lr;
  return base_lr * std::pow(gamma, static_cast<double>(epoch / step_size));
}

namespace {

std::vector<std::pair<std::string, Tensor>> named_trainable(ModelParams& params) {
  std::vector<std::pair<std::string, Tensor>> out;
  params.for_each([&out](const std::string& name, Tensor& t) {
    if (t.requires_grad()) out.emplace_back(name, t);
  });
  return out;
}

int argmax_row(const double* row, std::size_t c) {
  int best = 0;
  for (std::size_t j = 1; j < c; ++j)
    if (row[j] > row[best]) best = static_cast<int>(j);
  return best;
}

}  // namespace

std::vector<int> predict(Model& model, const HsiCube& cube, const SplitList& split,
                         std::size_t batch_size) {
  BatchStream stream(cube, split, model.config.p, batch_size, 0, false);
  std::vector<int> preds;
  preds.reserve(split.size());
  PatchBatch batch;
  while (stream.next(batch)) {
    const auto out = forward_batch(model, batch);
    for (std::size_t i = 0; i < out.size(); ++i)
      preds.push_back(argmax_row(out.logits.data() + i * out.classes, out.classes));
  }
  return preds;
}

EvalReport evaluate_model(Model& model, const HsiCube& cube, const SplitList& split,
                          std::size_t batch_size) {
  const auto preds = predict(model, cube, split, batch_size);
  std::vector<int> truths;
  truths.reserve(split.size());
  for (const SplitEntry& e : split) truths.push_back(static_cast<int>(e.cls) - 1);
  return evaluate(preds, truths, model.config.classes);
}

TrainResult train(Model& model, const HsiCube& cube, const SplitList& train_split,
                  const SplitList& test_split, const TrainOptions& options) {
  if (train_split.empty()) fail(Err::EmptySplit, "training split is empty");
  namespace fs = std::filesystem;
  const bool persist = !options.out_dir.empty();
  if (persist) fs::create_directories(options.out_dir);

  Graph& g = *model.graph;
  Adam adam(named_trainable(model.params), options.adam);
  TrainResult result;
  double best_oa = -1.0;

  std::vector<int> test_truths;
  test_truths.reserve(test_split.size());
  for (const SplitEntry& e : test_split) test_truths.push_back(static_cast<int>(e.cls) - 1);
  const auto eval_now = [&]() {
    result.final_predictions = predict(model, cube, test_split, options.batch_size);
    return evaluate(result.final_predictions, test_truths, model.config.classes);
  };
  const auto checkpoint = [&](const std::string& name) {
    if (persist) save_checkpoint(model.params, (fs::path(options.out_dir) / name).string());
  };

  for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
    const double lr = step_lr(epoch - 1, options.lr, options.lr_gamma, options.lr_step);
    BatchStream stream(cube, train_split, model.config.p, options.batch_size,
                       Rng::mix(options.seed, epoch), true);
    double sum_obj = 0.0, sum_ce = 0.0, sum_reg = 0.0;
    std::size_t n_seen = 0, batch_index = 0;

    PatchBatch batch;
    while (stream.next(batch)) {
      ++batch_index;
      g.truncate(model.base_size);
      g.zero_grad();
      const double inv_batch = 1.0 / static_cast<double>(batch.size());
      try {
        for (std::size_t i = 0; i < batch.size(); ++i) {
          const auto inst = batch.instance(i);
          Tensor leaf = g.leaf({batch.m, batch.p * batch.p},
                               std::vector<double>(inst.begin(), inst.end()), false);
          InstanceOutput io = forward_instance(leaf, model.params, model.config);
          const int target = batch.targets[i];
          std::vector<Tensor> xf = {io.x_final};
          Tensor obj = objective(io.logits, std::span<const int>(&target, 1), xf,
                                 options.lambda, options.reg_mode);
          g.backward(mul_scalar(obj, inv_batch));
          sum_obj += obj.item();
          sum_ce += cross_entropy(io.logits, std::span<const int>(&target, 1)).item();
          sum_reg += reg_loss(io.x_final, options.reg_mode).item();
          ++n_seen;
          g.truncate(model.base_size);
        }
        adam.step(lr);
      } catch (const Error& e) {
        if (e.kind() != Err::NonFinite) throw;
        fail(Err::NonFinite, "epoch " + std::to_string(epoch) + " batch " +
                                 std::to_string(batch_index) + ": " + e.what());
      }
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.lr = lr;
    entry.loss = sum_obj / static_cast<double>(n_seen);
    entry.ce = sum_ce / static_cast<double>(n_seen);
    entry.reg = sum_reg / static_cast<double>(n_seen);
    const bool eval_epoch =
        options.eval_every > 0 && (epoch % options.eval_every == 0 || epoch == options.epochs);
    if (eval_epoch) {
      g.truncate(model.base_size);
      entry.eval = eval_now();
      if (entry.eval->oa > best_oa) {
        best_oa = entry.eval->oa;
        checkpoint("checkpoint_best.hyck");
      }
    }
    result.log.push_back(std::move(entry));
  }

  g.truncate(model.base_size);
  if (!result.log.empty() && result.log.back().eval) {
    result.final_report = *result.log.back().eval;
  } else {
    result.final_report = eval_now();
  }
  if (result.final_report.oa > best_oa) {
    best_oa = result.final_report.oa;
    checkpoint("checkpoint_best.hyck");
  }
  result.best_oa = best_oa;
  checkpoint("checkpoint_last.hyck");
  if (persist)
    write_train_log_csv(result.log, (fs::path(options.out_dir) / "train_log.csv").string());
  return result;
}

void write_train_log_csv(const std::vector<EpochLog>& log, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) fail(Err::Io, "cannot open " + path + " for writing");
  f << "epoch,lr,loss,ce,reg,oa,aa,kappa\n";
  for (const EpochLog& e : log) {
    f << e.epoch << "," << format_double(e.lr) << "," << format_double(e.loss) << ","
      << format_double(e.ce) << "," << format_double(e.reg) << ",";
    if (e.eval)
      f << format_double(e.eval->oa) << "," << format_double(e.eval->aa) << ","
        << format_double(e.eval->kappa);
    else
      f << ",,";
    f << "\n";
  }
}

void write_predictions_csv(const SplitList& split, const std::vector<int>& predictions,
                           const std::string& path) {
  if (split.size() != predictions.size())
    fail(Err::LengthMismatch, "predictions do not cover the split");
  std::ofstream f(path, std::ios::trunc);
  if (!f) fail(Err::Io, "cannot open " + path + " for writing");
  f << "row,col,true,pred\n";
  for (std::size_t i = 0; i < split.size(); ++i)
    f << split[i].row << "," << split[i].col << "," << split[i].cls << ","
      << (predictions[i] + 1) << "\n";
}

}  // namespace hylite
