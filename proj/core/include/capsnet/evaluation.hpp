#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "capsnet/dataset.hpp"
#include "capsnet/model.hpp"

namespace capsnet {

/// Correct classification rates published for GTSRB, kept verbatim for the
/// comparison table. Never recomputed.
struct ReferenceRow {
  double ccr_percent;
  const char* method;
};
inline constexpr std::array<ReferenceRow, 5> kPublishedCcr{{
    {97.62, "using Capsule networks"},
    {96.14, "Random Forests"},
    {95.68, "LDA(HOG 2)"},
    {93.18, "LDA(HOG 1)"},
    {92.34, "LDA(HOG 3)"},
}};
inline constexpr std::size_t kPublishedTestImages = 12630;

struct EvalReport {
  std::size_t num_classes = 0;
  std::size_t total = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;
  double ccr_percent = 0.0;
  std::size_t misclassification_count = 0;
  std::vector<std::size_t> class_counts;
  /// Empty for classes without test samples.
  std::vector<std::optional<double>> per_class_accuracy;
  /// confusion[true][predicted]
  std::vector<std::vector<std::size_t>> confusion;
};

EvalReport make_report(std::span<const int> predictions, std::span<const int> labels, std::size_t num_classes);

struct Prediction {
  int label = 0;
  double length = 0.0;
};

/// Inference-mode class predictions (longest capsule, lowest index on ties).
std::vector<Prediction> predict(const CapsNetModel& model, const Dataset& dataset, std::size_t batch_size = 50);

EvalReport evaluate(const CapsNetModel& model, const Dataset& dataset, std::size_t batch_size = 50);

/// Comparison table with the measured run first, then the published rows.
std::string render_report(const EvalReport& report);
/// Header row `pred_0,...`, then row t holds the counts for true class t.
std::string render_confusion_csv(const EvalReport& report);

}  // namespace capsnet
