#include "mmfuse/metrics.hpp"

#include <json.hpp>

#include "mmfuse/error.hpp"

namespace mmfuse {

namespace {
double ratio(std::size_t num, std::size_t den) { return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den); }
}  // namespace

double harmonic_f1(double sensitivity, double specificity) {
  const double s = sensitivity + specificity;
  return s == 0.0 ? 0.0 : 2.0 * sensitivity * specificity / s;
}

MetricsReport metrics_from_confusion(const ConfusionMatrix& cm) {
  MetricsReport r;
  std::size_t total = 0, correct = 0;
  for (std::size_t t = 0; t < kNumClasses; ++t) {
    for (std::size_t p = 0; p < kNumClasses; ++p) total += cm[t][p];
    correct += cm[t][t];
  }
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    std::size_t tp = cm[c][c], fn = 0, fp = 0;
    for (std::size_t k = 0; k < kNumClasses; ++k) {
      if (k == c) continue;
      fn += cm[c][k];
      fp += cm[k][c];
    }
    const std::size_t tn = total - tp - fn - fp;
    auto& m = r.per_class[c];
    m.sensitivity = ratio(tp, tp + fn);
    m.specificity = ratio(tn, tn + fp);
    m.f1 = harmonic_f1(m.sensitivity, m.specificity);
    r.macro_f1 += m.f1 / static_cast<double>(kNumClasses);
  }
  r.accuracy = ratio(correct, total);
  r.instances = total;
  return r;
}

ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> predicted) {
  expects(truth.size() == predicted.size(), "confusion: truth and prediction lengths differ");
  ConfusionMatrix cm{};
  for (std::size_t i = 0; i < truth.size(); ++i) {
    expects(truth[i] >= 0 && truth[i] < static_cast<int>(kNumClasses) && predicted[i] >= 0 &&
                predicted[i] < static_cast<int>(kNumClasses),
            "confusion: label out of range at index " + std::to_string(i));
    ++cm[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(predicted[i])];
  }
  return cm;
}

MetricsReport evaluate_predictions(std::span<const int> truth, std::span<const int> predicted) {
  if (truth.empty()) throw Error("evaluation on an empty test set");
  return metrics_from_confusion(confusion(truth, predicted));
}

MetricsReport average_reports(std::span<const MetricsReport> runs) {
  expects(!runs.empty(), "average_reports: at least one run is required");
  MetricsReport avg;
  avg.per_class = {};
  const double n = static_cast<double>(runs.size());
  for (const auto& r : runs) {
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      avg.per_class[c].sensitivity += r.per_class[c].sensitivity / n;
      avg.per_class[c].specificity += r.per_class[c].specificity / n;
      avg.per_class[c].f1 += r.per_class[c].f1 / n;
    }
    avg.macro_f1 += r.macro_f1 / n;
    avg.accuracy += r.accuracy / n;
  }
  avg.instances = runs.front().instances;
  avg.runs = runs.size();
  return avg;
}

std::string report_to_json(const MetricsReport& report) {
  nlohmann::ordered_json j;
  auto& classes = j["per_class"];
  for (auto c : kAllClasses) {
    const auto& m = report.per_class[static_cast<std::size_t>(c)];
    classes[std::string(class_name(c))] = {{"sensitivity", m.sensitivity}, {"specificity", m.specificity}, {"f1", m.f1}};
  }
  j["macro_f1"] = report.macro_f1;
  j["accuracy"] = report.accuracy;
  j["instances"] = report.instances;
  j["runs"] = report.runs;
  return j.dump(2) + "\n";
}

}  // namespace mmfuse
