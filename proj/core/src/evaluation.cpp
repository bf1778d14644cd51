#include "capsnet/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace capsnet {
namespace {
std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}
}  // namespace

EvalReport make_report(std::span<const int> predictions, std::span<const int> labels, std::size_t num_classes) {
  if (labels.empty()) throw std::invalid_argument("evaluate: empty dataset");
  if (predictions.size() != labels.size()) throw std::invalid_argument("evaluate: prediction/label count mismatch");
  EvalReport r;
  r.num_classes = num_classes;
  r.total = labels.size();
  r.class_counts.assign(num_classes, 0);
  r.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int t = labels[i], p = predictions[i];
    if (t < 0 || p < 0 || static_cast<std::size_t>(t) >= num_classes || static_cast<std::size_t>(p) >= num_classes) {
      throw std::invalid_argument("evaluate: class index outside [0," + std::to_string(num_classes) + ")");
    }
    ++r.confusion[t][p];
    ++r.class_counts[t];
  }
  for (std::size_t k = 0; k < num_classes; ++k) r.correct += r.confusion[k][k];
  r.misclassification_count = r.total - r.correct;
  r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.total);
  r.ccr_percent = 100.0 * r.accuracy;
  r.per_class_accuracy.resize(num_classes);
  for (std::size_t k = 0; k < num_classes; ++k) {
    if (r.class_counts[k] > 0) {
      r.per_class_accuracy[k] = static_cast<double>(r.confusion[k][k]) / static_cast<double>(r.class_counts[k]);
    }
  }
  return r;
}

std::vector<Prediction> predict(const CapsNetModel& model, const Dataset& dataset, std::size_t batch_size) {
  if (dataset.size() == 0) throw std::invalid_argument("predict: empty dataset");
  if (dataset.channels() != model.config().channels) {
    throw std::invalid_argument("predict: dataset has " + std::to_string(dataset.channels()) +
                                " channels but the model expects " + std::to_string(model.config().channels));
  }
  std::vector<Prediction> out;
  out.reserve(dataset.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < dataset.size(); start += batch_size) {
    idx.resize(std::min(batch_size, dataset.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const CapsForward f = model.forward(dataset.batch(idx), false);
    const auto best = argmax_lengths(f.lengths);
    const std::size_t j = f.lengths.dim(1);
    for (std::size_t s = 0; s < best.size(); ++s) {
      out.push_back({best[s], f.lengths[s * j + static_cast<std::size_t>(best[s])]});
    }
  }
  return out;
}

EvalReport evaluate(const CapsNetModel& model, const Dataset& dataset, std::size_t batch_size) {
  if (dataset.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
  const auto preds = predict(model, dataset, batch_size);
  std::vector<int> labels(preds.size());
  std::transform(preds.begin(), preds.end(), labels.begin(), [](const Prediction& p) { return p.label; });
  return make_report(labels, dataset.labels, model.config().num_classes);
}

std::string render_report(const EvalReport& report) {
  std::ostringstream os;
  os << "COMPARISON OF CORRECT CLASSIFICATION RATE FOR DIFFERENT METHODS\n";
  os << "CCR (%) | Method\n";
  os << fixed2(report.ccr_percent) << " | using Capsule networks\n";
  os << "-- published GTSRB reference values (" << kPublishedTestImages << " test images), not recomputed --\n";
  for (const auto& row : kPublishedCcr) os << fixed2(row.ccr_percent) << " | " << row.method << "\n";
  os << "\n";
  os << "images=" << report.total << "\n";
  os << "correct=" << report.correct << "\n";
  os << "misclassifications=" << report.misclassification_count << "\n";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", report.accuracy);
  os << "accuracy=" << buf << "\n";
  os << "per_class_accuracy:\n";
  for (std::size_t k = 0; k < report.num_classes; ++k) {
    os << "  " << k << " ";
    if (report.per_class_accuracy[k]) {
      std::snprintf(buf, sizeof buf, "%.4f", *report.per_class_accuracy[k]);
      os << buf << " (" << report.class_counts[k] << " images)\n";
    } else {
      os << "absent\n";
    }
  }
  return os.str();
}

std::string render_confusion_csv(const EvalReport& report) {
  std::ostringstream os;
  for (std::size_t k = 0; k < report.num_classes; ++k) os << (k ? "," : "") << "pred_" << k;
  os << "\n";
  for (std::size_t t = 0; t < report.num_classes; ++t) {
    for (std::size_t p = 0; p < report.num_classes; ++p) os << (p ? "," : "") << report.confusion[t][p];
    os << "\n";
  }
  return os.str();
}

}  // namespace capsnet
