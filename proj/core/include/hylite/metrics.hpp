#pragma once

#include <span>
#include <string>
#include <vector>

#include "hylite/error.hpp"

namespace hylite {

/// Confusion-matrix report. Rows index the true class, columns the predicted
/// one (0-based internally; CSVs print 1-based ids). Classes absent from the
/// truths are excluded from AA and listed in `excluded`.
struct EvalReport {
  std::size_t classes = 0;
  std::size_t total = 0;
  std::vector<std::size_t> confusion;     // classes x classes
  std::vector<std::size_t> class_counts;  // row sums
  std::vector<double> per_class;          // recall; NaN for excluded classes
  std::vector<std::size_t> excluded;      // 0-based ids with no truth samples
  double oa = 0.0, aa = 0.0, kappa = 0.0;
};

EvalReport report_from_confusion(std::vector<std::size_t> confusion, std::size_t classes);

/// Builds the confusion matrix from 0-based prediction/truth ids.
EvalReport evaluate(std::span<const int> predictions, std::span<const int> truths,
                    std::size_t classes);

void write_metrics_csv(const EvalReport& report, const std::string& path);
void write_per_class_csv(const EvalReport& report, const std::string& path,
                         const std::vector<std::string>& class_names = {});
void write_confusion_csv(const EvalReport& report, const std::string& path);

/// Fixed shortest-round-trip style formatting shared by all CSV writers.
std::string format_double(double v);

}  // namespace hylite
