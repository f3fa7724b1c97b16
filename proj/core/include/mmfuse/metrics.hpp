#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mmfuse/types.hpp"

namespace mmfuse {

/// counts[truth][predicted]
using ConfusionMatrix = std::array<std::array<std::size_t, kNumClasses>, kNumClasses>;

struct ClassMetrics {
  double sensitivity = 0.0;
  double specificity = 0.0;
  double f1 = 0.0;  // harmonic mean of sensitivity and specificity
};

struct MetricsReport {
  std::array<ClassMetrics, kNumClasses> per_class{};
  double macro_f1 = 0.0;
  double accuracy = 0.0;
  std::size_t instances = 0;
  std::size_t runs = 1;
};

/// 2 se sp / (se + sp), 0 when se + sp == 0.
double harmonic_f1(double sensitivity, double specificity);

/// A ratio with an empty denominator is reported as 0.
MetricsReport metrics_from_confusion(const ConfusionMatrix& cm);

ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> predicted);

/// Throws Error on an empty test set.
MetricsReport evaluate_predictions(std::span<const int> truth, std::span<const int> predicted);

/// Arithmetic mean of every field across runs. The averaged f1 is therefore
/// not the harmonic mean of the averaged sensitivity and specificity.
MetricsReport average_reports(std::span<const MetricsReport> runs);

std::string report_to_json(const MetricsReport& report);

}  // namespace mmfuse
