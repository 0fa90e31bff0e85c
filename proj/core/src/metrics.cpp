#include "hylite/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

namespace hylite {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

EvalReport report_from_confusion(std::vector<std::size_t> confusion, std::size_t classes) {
  if (confusion.size() != classes * classes)
    fail(Err::LengthMismatch, "confusion matrix must be classes^2");
  EvalReport rep;
  rep.classes = classes;
  rep.confusion = std::move(confusion);
  rep.class_counts.assign(classes, 0);
  rep.per_class.assign(classes, std::numeric_limits<double>::quiet_NaN());

  std::vector<std::size_t> col_sums(classes, 0);
  std::size_t diag = 0;
  for (std::size_t t = 0; t < classes; ++t)
    for (std::size_t p = 0; p < classes; ++p) {
      const std::size_t n = rep.confusion[t * classes + p];
      rep.class_counts[t] += n;
      col_sums[p] += n;
      rep.total += n;
      if (t == p) diag += n;
    }
  if (rep.total == 0) fail(Err::EmptySplit, "no samples to evaluate");

  double aa_sum = 0.0;
  std::size_t aa_n = 0;
  for (std::size_t t = 0; t < classes; ++t) {
    if (rep.class_counts[t] == 0) {
      rep.excluded.push_back(t);
      continue;
    }
    rep.per_class[t] = static_cast<double>(rep.confusion[t * classes + t]) /
                       static_cast<double>(rep.class_counts[t]);
    aa_sum += rep.per_class[t];
    ++aa_n;
  }
  rep.oa = static_cast<double>(diag) / static_cast<double>(rep.total);
  rep.aa = aa_n > 0 ? aa_sum / static_cast<double>(aa_n) : 0.0;

  const double n2 = static_cast<double>(rep.total) * static_cast<double>(rep.total);
  double pe = 0.0;
  for (std::size_t k = 0; k < classes; ++k)
    pe += static_cast<double>(rep.class_counts[k]) * static_cast<double>(col_sums[k]) / n2;
  if (pe >= 1.0 - 1e-15) {
    rep.kappa = rep.oa >= 1.0 - 1e-15 ? 1.0 : 0.0;
  } else {
    rep.kappa = (rep.oa - pe) / (1.0 - pe);
  }
  return rep;
}

EvalReport evaluate(std::span<const int> predictions, std::span<const int> truths,
                    std::size_t classes) {
  if (predictions.size() != truths.size())
    fail(Err::LengthMismatch, std::to_string(predictions.size()) + " predictions vs " +
                                  std::to_string(truths.size()) + " truths");
  std::vector<std::size_t> confusion(classes * classes, 0);
  for (std::size_t i = 0; i < truths.size(); ++i) {
    const int t = truths[i], p = predictions[i];
    if (t < 0 || static_cast<std::size_t>(t) >= classes || p < 0 ||
        static_cast<std::size_t>(p) >= classes)
      fail(Err::TargetOutOfRange, "class id outside [0," + std::to_string(classes) + ")");
    ++confusion[static_cast<std::size_t>(t) * classes + static_cast<std::size_t>(p)];
  }
  return report_from_confusion(std::move(confusion), classes);
}

namespace {

std::ofstream open_csv(const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) fail(Err::Io, "cannot open " + path + " for writing");
  return f;
}

}  // namespace

void write_metrics_csv(const EvalReport& report, const std::string& path) {
  auto f = open_csv(path);
  f << "oa,aa,kappa\n"
    << format_double(report.oa) << "," << format_double(report.aa) << ","
    << format_double(report.kappa) << "\n";
}

void write_per_class_csv(const EvalReport& report, const std::string& path,
                         const std::vector<std::string>& class_names) {
  auto f = open_csv(path);
  f << "class,n,recall\n";
  for (std::size_t k = 0; k < report.classes; ++k) {
    if (k < class_names.size() && !class_names[k].empty())
      f << class_names[k];
    else
      f << (k + 1);
    f << "," << report.class_counts[k] << ",";
    if (report.class_counts[k] > 0) f << format_double(report.per_class[k]);
    f << "\n";
  }
}

void write_confusion_csv(const EvalReport& report, const std::string& path) {
  auto f = open_csv(path);
  for (std::size_t t = 0; t < report.classes; ++t) {
    for (std::size_t p = 0; p < report.classes; ++p) {
      if (p) f << ",";
      f << report.confusion[t * report.classes + p];
    }
    f << "\n";
  }
}

}  // namespace hylite
