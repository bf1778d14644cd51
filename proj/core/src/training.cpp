#include "capsnet/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "capsnet/random.hpp"

namespace capsnet {
namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void accumulate(Tensor& dst, const Tensor& src) {
  if (dst.empty()) {
    dst = src;
    return;
  }
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

constexpr std::uint64_t kShuffleStream = 0x73687566666c65ULL;
constexpr std::uint64_t kDropoutStream = 0x64726f706f7574ULL;

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
  if (!(learning_rate >= 0.0)) throw std::invalid_argument("train config: learning_rate must be >= 0");
  if (micro_batch < 1) throw std::invalid_argument("train config: micro_batch must be >= 1");
  if (clip_norm < 0.0) throw std::invalid_argument("train config: clip_norm must be >= 0");
  loss.validate();
  if (augment) augment_config.validate();
}

MetricsCsv::MetricsCsv(const std::filesystem::path& path) {
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  out_.open(path, std::ios::app);
  if (!out_) throw std::runtime_error("cannot open metrics file " + path.string());
  if (fresh) out_ << "step,margin_loss,recon_loss,final_loss\n";
}

void MetricsCsv::write_step(const StepMetrics& m) {
  out_ << m.step << "," << fmt_double(m.margin_loss) << "," << fmt_double(m.recon_loss) << ","
       << fmt_double(m.final_loss) << "\n";
  out_.flush();
}

void MetricsCsv::write_epoch(const EpochMetrics& m) {
  out_ << "epoch," << m.epoch << ",train_accuracy," << fmt_double(m.train_accuracy) << "\n";
  out_.flush();
}

std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(seed ^ kShuffleStream, epoch);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = rng.below(i);
    std::swap(perm[i - 1], perm[j]);
  }
  return perm;
}

Trainer::Trainer(CapsNetModel& model, Decoder& decoder, TrainConfig config)
    : model_(model), decoder_(decoder), config_(std::move(config)), optimizer_(config_.optimizer) {
  config_.validate();
  const auto& mc = model_.config();
  const auto& dc = decoder_.config();
  if (dc.num_classes != mc.num_classes || dc.class_dim != mc.class_dim || dc.image_size != mc.input_size ||
      dc.channels != mc.channels) {
    throw std::invalid_argument("trainer: decoder does not match the model's capsules and images");
  }
}

void Trainer::resume(const Checkpoint& checkpoint) {
  step_ = checkpoint.progress.step;
  if (checkpoint.optimizer) {
    if (checkpoint.optimizer->kind() != config_.optimizer) {
      throw std::invalid_argument("resume: checkpoint optimizer is " + to_string(checkpoint.optimizer->kind()));
    }
    optimizer_ = *checkpoint.optimizer;
  }
}

void Trainer::save(const std::filesystem::path& path) const {
  save_checkpoint(path, model_, decoder_, &optimizer_, {step_, config_.seed});
}

StepMetrics Trainer::step(const Tensor& batch, std::span<const int> labels, std::vector<int>* predictions) {
  const std::size_t n = batch.dim(0);
  if (labels.size() != n) throw ShapeError("train step: label count does not match batch");
  const std::size_t per = shape_product(Shape(batch.shape().begin() + 1, batch.shape().end()));
  const auto& mc = model_.config();
  const LossConfig& lc = config_.loss;

  ModelGradients mg = model_.zero_gradients();
  DecoderGradients dg = decoder_.zero_gradients();
  StepMetrics out;
  out.step = step_;

  const std::uint64_t dropout_seed = Rng::mix(config_.seed ^ kDropoutStream) ^ Rng::mix(step_);
  for (std::size_t start = 0; start < n; start += config_.micro_batch) {
    const std::size_t m = std::min(config_.micro_batch, n - start);
    const double weight = static_cast<double>(m) / static_cast<double>(n);
    Tensor x({m, batch.dim(1), batch.dim(2), batch.dim(3)});
    std::copy(batch.raw() + start * per, batch.raw() + (start + m) * per, x.raw());
    const std::span<const int> y = labels.subspan(start, m);

    CapsForward fwd = model_.forward(x, true, dropout_seed, start);
    LossValue margin = margin_loss(fwd.lengths, y, lc);
    MaskResult masked = mask(fwd.v, y);
    DecoderForward dec = decoder_.forward(masked.masked);
    LossValue recon = reconstruction_loss(x, dec.image);

    out.margin_loss += weight * margin.value;
    out.recon_loss += weight * recon.value;
    if (predictions != nullptr) {
      for (int p : argmax_lengths(fwd.lengths)) predictions->push_back(p);
    }

    Tensor grad_image = ops::scale(recon.grad, lc.recon_sign * lc.lambda_recon * weight);
    DecoderGradients dgm = decoder_.backward(dec, grad_image);
    Tensor grad_v = mask_backward(dgm.input, masked.kept, mc.num_classes, mc.class_dim);
    Tensor grad_len = ops::scale(margin.grad, weight);
    ModelGradients mgm = model_.backward(fwd, grad_v, grad_len, false);

    auto dst_m = mg.params();
    auto src_m = mgm.params();
    for (std::size_t i = 0; i < dst_m.size(); ++i) accumulate(*dst_m[i].value, *src_m[i].value);
    auto dst_d = dg.params();
    auto src_d = dgm.params();
    for (std::size_t i = 0; i < dst_d.size(); ++i) accumulate(*dst_d[i].value, *src_d[i].value);
  }
  out.final_loss = final_loss(out.margin_loss, out.recon_loss, lc);
  if (!std::isfinite(out.final_loss)) {
    throw TrainingError("non-finite loss at step " + std::to_string(step_) + ": margin=" +
                        fmt_double(out.margin_loss) + " recon=" + fmt_double(out.recon_loss) +
                        " final=" + fmt_double(out.final_loss));
  }

  std::vector<ParamRef> params = model_.params();
  for (auto& p : decoder_.params()) params.push_back(p);
  std::vector<ConstParamRef> grads;
  for (auto& g : std::as_const(mg).params()) grads.push_back(g);
  for (auto& g : std::as_const(dg).params()) grads.push_back(g);

  if (config_.clip_norm > 0.0) {
    double sq = 0.0;
    for (const auto& g : grads) {
      for (double v : g.value->data()) sq += v * v;
    }
    const double norm = std::sqrt(sq);
    if (norm > config_.clip_norm) {
      const double s = config_.clip_norm / norm;
      for (auto& g : mg.params()) *g.value = ops::scale(*g.value, s);
      for (auto& g : dg.params()) *g.value = ops::scale(*g.value, s);
    }
  }
  optimizer_.step(params, grads, config_.learning_rate);
  ++step_;
  return out;
}

TrainMetrics Trainer::train(const Dataset& dataset, const StepCallback& on_step, const EpochCallback& on_epoch) {
  dataset.validate();
  if (dataset.split != Split::kTrain) throw std::invalid_argument("train: dataset is not a training split");
  const auto& mc = model_.config();
  if (dataset.channels() != mc.channels) {
    throw std::invalid_argument("train: dataset has " + std::to_string(dataset.channels()) +
                                " channels but the model expects " + std::to_string(mc.channels));
  }
  if (mc.input_size != kImageSize) {
    throw std::invalid_argument("train: model input_size must be 32 to train on 32x32 datasets");
  }
  for (int l : dataset.labels) {
    if (static_cast<std::size_t>(l) >= mc.num_classes) {
      throw std::invalid_argument("train: label " + std::to_string(l) + " exceeds the model's " +
                                  std::to_string(mc.num_classes) + " classes");
    }
  }

  std::optional<Dataset> augmented;
  if (config_.augment) {
    AugmentConfig ac = config_.augment_config;
    ac.seed = Rng::mix(config_.seed ^ 0x617567ULL);
    augmented = augment_dataset(dataset, ac);
  }
  const Dataset& data = augmented ? *augmented : dataset;

  const std::size_t n = data.size();
  const std::size_t steps_per_epoch = (n + config_.batch_size - 1) / config_.batch_size;
  const std::uint64_t total_steps = steps_per_epoch * config_.epochs;
  const std::uint64_t stop = config_.max_steps ? std::min<std::uint64_t>(total_steps, config_.max_steps) : total_steps;

  TrainMetrics metrics;
  while (step_ < stop) {
    const std::size_t epoch = step_ / steps_per_epoch;
    const auto perm = epoch_permutation(n, config_.seed, epoch);
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<int> predictions;
    std::vector<int> seen_labels;
    for (std::size_t b = step_ % steps_per_epoch; b < steps_per_epoch && step_ < stop; ++b) {
      const std::size_t lo = b * config_.batch_size;
      const std::size_t hi = std::min(n, lo + config_.batch_size);
      const std::span<const std::size_t> idx(perm.data() + lo, hi - lo);
      const std::vector<int> labels = data.batch_labels(idx);
      const StepMetrics sm = step(data.batch(idx), labels, &predictions);
      seen_labels.insert(seen_labels.end(), labels.begin(), labels.end());
      metrics.steps.push_back(sm);
      if (on_step) on_step(sm);
      if (config_.checkpoint_every && !config_.checkpoint_dir.empty() && step_ % config_.checkpoint_every == 0) {
        save(config_.checkpoint_dir / ("step_" + std::to_string(step_) + ".ckpt"));
      }
    }
    EpochMetrics em;
    em.epoch = epoch + 1;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) correct += predictions[i] == seen_labels[i];
    em.train_accuracy = predictions.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(predictions.size());
    em.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    metrics.epochs.push_back(em);
    if (on_epoch) on_epoch(em);
  }
  if (!config_.checkpoint_dir.empty()) save(config_.checkpoint_dir / "final.ckpt");
  return metrics;
}

TrainMetrics train(CapsNetModel& model, Decoder& decoder, const Dataset& dataset, const TrainConfig& config) {
  Trainer trainer(model, decoder, config);
  return trainer.train(dataset);
}

}  // namespace capsnet
