#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "capsnet/augment.hpp"
#include "capsnet/checkpoint.hpp"
#include "capsnet/dataset.hpp"
#include "capsnet/evaluation.hpp"
#include "capsnet/gradcheck.hpp"
#include "capsnet/image_io.hpp"
#include "capsnet/parallel.hpp"
#include "capsnet/random.hpp"
#include "capsnet/training.hpp"

namespace capsnet::cli {
namespace fs = std::filesystem;

namespace {

// Raised by a subcommand for a bad flag combination CLI11 cannot see.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string quote(const std::string& s) {
  std::string q = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') {
      q += '\\';
      q += c;
    } else if (c == '\n') {
      q += "\\n";
    } else {
      q += c;
    }
  }
  return q + "\"";
}

void report_error(std::ostream& err, const std::string& kind, const std::string& command, const std::string& message,
                  const std::string& hint) {
  err << "error: kind=" << kind << " command=" << (command.empty() ? "-" : command) << " message=" << quote(message)
      << "\n";
  if (!hint.empty()) err << "  " << hint << "\n";
}

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& seed, std::ostream& err) {
  if (seed) return *seed;
  std::random_device rd;
  const std::uint64_t drawn = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
  err << "seed=" << drawn << "\n";
  return drawn;
}

std::string fmt(double v, const char* pattern = "%.6f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

Split parse_split_flag(const std::string& s) {
  try {
    return parse_split(s);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

// ---- convert / synth / augment -------------------------------------------

struct ConvertArgs {
  std::string in, out, split = "train", resize = "none";
  std::size_t channels = 3;
};

int do_convert(const ConvertArgs& a, std::ostream& out) {
  if (a.resize != "none" && a.resize != "bilinear") throw UsageError("--resize must be none or bilinear");
  LoadOptions opt;
  opt.split = parse_split_flag(a.split);
  opt.resize_bilinear = a.resize == "bilinear";
  opt.channels = a.channels;
  const Dataset ds = load_image_directory(a.in, opt);
  save_binary(ds, a.out);
  out << make_manifest(ds, a.in).render();
  return kOk;
}

struct SynthArgs {
  std::string out, split = "train";
  std::size_t classes = 10, per_class = 100, channels = 3;
  std::optional<std::uint64_t> seed;
};

int do_synth(const SynthArgs& a, std::ostream& out, std::ostream& err) {
  const Split split = parse_split_flag(a.split);
  const Dataset ds = synthesize_toy_dataset(a.classes, a.per_class, resolve_seed(a.seed, err), split, a.channels);
  save_binary(ds, a.out);
  out << make_manifest(ds, "synth").render();
  return kOk;
}

struct AugmentArgs {
  std::string in, out;
  AugmentConfig cfg;
  bool no_flip = false;
  std::optional<std::uint64_t> seed;
};

int do_augment(AugmentArgs a, std::ostream& out, std::ostream& err) {
  a.cfg.horizontal_flip = !a.no_flip;
  a.cfg.seed = resolve_seed(a.seed, err);
  const Dataset ds = load_binary(a.in, Split::kTrain);
  const Dataset aug = augment_dataset(ds, a.cfg);
  save_binary(aug, a.out);
  out << make_manifest(aug, a.in).render();
  return kOk;
}

// ---- train ----------------------------------------------------------------

struct TrainArgs {
  std::string data, metrics, resume, checkpoint_dir = "checkpoints", optimizer = "adam", decoder = "deep";
  TrainConfig cfg;
  ModelConfig model;
  std::optional<std::uint64_t> seed;
  std::size_t log_every = 10;
};

int do_train(TrainArgs a, std::ostream& out, std::ostream& err) {
  if (a.decoder != "deep" && a.decoder != "shallow") throw UsageError("--decoder must be deep or shallow");
  try {
    a.cfg.optimizer = parse_optimizer(a.optimizer);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  a.cfg.checkpoint_dir = a.checkpoint_dir;
  if (!a.checkpoint_dir.empty()) fs::create_directories(a.checkpoint_dir);
  const Dataset ds = load_binary(a.data, Split::kTrain);

  std::optional<Checkpoint> ckpt;
  if (!a.resume.empty()) {
    ckpt = load_checkpoint(a.resume);
    // a resumed run keeps its original seed unless one is given explicitly
    a.cfg.seed = a.seed ? *a.seed : ckpt->progress.seed;
  } else {
    a.cfg.seed = resolve_seed(a.seed, err);
  }
  a.cfg.validate();

  ModelConfig mc = a.model;
  mc.channels = ds.channels();
  CapsNetModel model = ckpt ? ckpt->model : CapsNetModel(mc, a.cfg.seed);
  DecoderConfig dc = DecoderConfig::for_model(model.config());
  dc.shallow = a.decoder == "shallow";
  Decoder decoder = ckpt ? ckpt->decoder : Decoder(dc, Rng::mix(a.cfg.seed ^ 0x646563ULL));

  Trainer trainer(model, decoder, a.cfg);
  if (ckpt) trainer.resume(*ckpt);
  std::optional<MetricsCsv> csv;
  if (!a.metrics.empty()) csv.emplace(a.metrics);

  const auto t0 = std::chrono::steady_clock::now();
  trainer.train(
      ds,
      [&](const StepMetrics& m) {
        if (csv) csv->write_step(m);
        if (a.log_every && (m.step + 1) % a.log_every == 0) {
          out << "step=" << m.step << " margin_loss=" << fmt(m.margin_loss) << " recon_loss=" << fmt(m.recon_loss)
              << " final_loss=" << fmt(m.final_loss) << "\n";
          out.flush();
        }
      },
      [&](const EpochMetrics& m) {
        if (csv) csv->write_epoch(m);
        out << "epoch=" << m.epoch << " train_accuracy=" << fmt(m.train_accuracy)
            << " seconds=" << fmt(m.wall_seconds, "%.1f") << "\n";
        out.flush();
      });
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out << "done steps=" << trainer.global_step() << " seconds=" << fmt(secs, "%.1f");
  if (!a.checkpoint_dir.empty()) out << " checkpoint=" << (fs::path(a.checkpoint_dir) / "final.ckpt").string();
  out << "\n";
  return kOk;
}

// ---- eval / predict -------------------------------------------------------

struct EvalArgs {
  std::string data, checkpoint, out, confusion, split = "test";
  std::size_t batch_size = 50;
};

int do_eval(const EvalArgs& a, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  const Dataset ds = load_binary(a.data, parse_split_flag(a.split));
  const EvalReport report = evaluate(ckpt.model, ds, a.batch_size);
  const std::string text = render_report(report);
  if (a.out.empty()) {
    out << text;
  } else {
    write_text(a.out, text);
    out << "ccr=" << fmt(report.ccr_percent, "%.2f") << " report=" << a.out << "\n";
  }
  if (!a.confusion.empty()) write_text(a.confusion, render_confusion_csv(report));
  return kOk;
}

struct PredictArgs {
  std::string checkpoint, image, dir, reconstruct, resize = "none";
};

Image to_image(const Tensor& batch, std::size_t index) {
  const std::size_t h = batch.dim(1), w = batch.dim(2), c = batch.dim(3);
  Image img{w, h, c, std::vector<float>(h * w * c)};
  const double* src = batch.raw() + index * h * w * c;
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<float>(src[i]);
  return img;
}

int do_predict(const PredictArgs& a, std::ostream& out) {
  if (a.resize != "none" && a.resize != "bilinear") throw UsageError("--resize must be none or bilinear");
  if (a.image.empty() == a.dir.empty()) throw UsageError("exactly one of --image or --dir is required");
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  const ModelConfig& mc = ckpt.model.config();

  std::vector<fs::path> files;
  if (!a.image.empty()) {
    files.push_back(a.image);
  } else {
    if (!fs::is_directory(a.dir)) throw std::runtime_error("not a directory: " + a.dir);
    for (const auto& e : fs::directory_iterator(a.dir)) {
      const std::string ext = e.path().extension().string();
      if (e.is_regular_file() && (ext == ".ppm" || ext == ".pgm")) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw std::runtime_error("no .ppm/.pgm images in " + a.dir);
    if (!a.reconstruct.empty()) fs::create_directories(a.reconstruct);
  }

  LoadOptions lo;
  lo.resize_bilinear = a.resize == "bilinear";
  lo.channels = mc.channels;
  const auto& names = gtsrb_class_names();
  for (const auto& file : files) {
    const FloatTensor img = load_sample_image(file, lo);
    const Tensor batch = to_double(img).reshaped({1, kImageSize, kImageSize, mc.channels});
    const CapsForward f = ckpt.model.forward(batch, false);
    const int k = argmax_lengths(f.lengths)[0];
    if (!a.dir.empty()) out << "file=" << file.filename().string() << " ";
    out << "class=" << k << " name=" << quote(static_cast<std::size_t>(k) < names.size() ? names[k] : "unknown")
        << " length=" << fmt(f.lengths.at(std::size_t{0}, static_cast<std::size_t>(k))) << "\n";
    if (!a.reconstruct.empty()) {
      const DecoderForward d = ckpt.decoder.forward(mask(f.v, std::nullopt).masked);
      const fs::path target =
          a.dir.empty() ? fs::path(a.reconstruct) : fs::path(a.reconstruct) / (file.stem().string() + "_recon.ppm");
      write_ppm(target, to_image(d.image, 0));
    }
  }
  return kOk;
}

// ---- gradcheck ------------------------------------------------------------

struct GradcheckArgs {
  bool full = false;
  std::optional<std::uint64_t> seed;
  double step = 1e-3, tolerance = 1e-4;
};

int do_gradcheck(const GradcheckArgs& a, std::ostream& out, std::ostream& err) {
  gradcheck::Options opt;
  opt.seed = resolve_seed(a.seed, err);
  opt.step = a.step;
  opt.tolerance = a.tolerance;
  const auto t0 = std::chrono::steady_clock::now();
  const gradcheck::Result r =
      a.full ? gradcheck::check_full_graph(opt.seed, opt) : gradcheck::check_components(opt.seed, opt);
  out << r.render();
  out << "max_rel_error=" << fmt(r.max_rel_error(), "%.3e") << " step=" << fmt(a.step, "%g")
      << " tolerance=" << fmt(a.tolerance, "%g") << " seconds="
      << fmt(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), "%.2f")
      << " result=" << (r.passed ? "pass" : "fail") << "\n";
  if (!r.passed) {
    report_error(err, "gradcheck_failed", "gradcheck",
                 "max relative error " + fmt(r.max_rel_error(), "%.3e") + " exceeds " + fmt(a.tolerance, "%g"), "");
    return kRuntime;
  }
  return kOk;
}

std::string classify(const std::exception& e) {
  if (dynamic_cast<const FormatError*>(&e)) return "format";
  if (dynamic_cast<const ShapeError*>(&e)) return "shape";
  if (dynamic_cast<const TrainingError*>(&e)) return "training";
  if (dynamic_cast<const fs::filesystem_error*>(&e)) return "io";
  if (dynamic_cast<const std::invalid_argument*>(&e)) return "invalid_argument";
  return "runtime";
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Capsule-network traffic-sign classifier", "capsnet"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML/INI file whose keys mirror the flags (command line wins)");
  std::size_t threads = 0;
  app.add_option("--threads", threads, "Worker threads; 0 uses every core, 1 is bitwise reproducible");

  ConvertArgs conv;
  auto* c_convert = app.add_subcommand("convert", "Image tree <root>/<label>/*.ppm to a binary dataset");
  c_convert->add_option("--in", conv.in, "Root directory")->required();
  c_convert->add_option("--out", conv.out, "Output dataset file")->required();
  c_convert->add_option("--split", conv.split, "train or test");
  c_convert->add_option("--resize", conv.resize, "none rejects non-32x32 images; bilinear resamples them");
  c_convert->add_option("--channels", conv.channels, "3 for color, 1 for luminance")->check(CLI::IsMember({1, 3}));

  SynthArgs syn;
  auto* c_synth = app.add_subcommand("synth", "Write a procedurally drawn toy dataset");
  c_synth->add_option("--out", syn.out, "Output dataset file")->required();
  c_synth->add_option("--classes", syn.classes, "Number of classes")->check(CLI::Range(2, 43));
  c_synth->add_option("--per-class", syn.per_class, "Images per class")->check(CLI::PositiveNumber);
  c_synth->add_option("--split", syn.split, "train or test");
  c_synth->add_option("--channels", syn.channels, "3 or 1")->check(CLI::IsMember({1, 3}));
  c_synth->add_option("--seed", syn.seed, "RNG seed (drawn and printed when omitted)");

  AugmentArgs aug;
  auto* c_aug = app.add_subcommand("augment", "Replicate a training set with jitter and affine copies");
  c_aug->add_option("--in", aug.in, "Input dataset file")->required();
  c_aug->add_option("--out", aug.out, "Output dataset file")->required();
  c_aug->add_option("--factor", aug.cfg.replication_factor, "Copies per image, including the jitter-only one")
      ->check(CLI::PositiveNumber);
  c_aug->add_option("--seed", aug.seed, "RNG seed (drawn and printed when omitted)");
  c_aug->add_flag("--no-flip", aug.no_flip, "Disable horizontal flips");
  c_aug->add_option("--rotation", aug.cfg.rotation_deg, "Max rotation, degrees");
  c_aug->add_option("--shear", aug.cfg.shear, "Max shear");
  c_aug->add_option("--width-shift", aug.cfg.width_shift, "Max horizontal shift, fraction of width");
  c_aug->add_option("--height-shift", aug.cfg.height_shift, "Max vertical shift, fraction of height");
  c_aug->add_option("--brightness-min", aug.cfg.brightness_min, "Brightness factor lower bound");
  c_aug->add_option("--brightness-max", aug.cfg.brightness_max, "Brightness factor upper bound");
  c_aug->add_option("--contrast-min", aug.cfg.contrast_min, "Contrast factor lower bound");
  c_aug->add_option("--contrast-max", aug.cfg.contrast_max, "Contrast factor upper bound");

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Train model and decoder on a binary dataset");
  c_train->add_option("--data", tr.data, "Training dataset file")->required();
  c_train->add_option("--epochs", tr.cfg.epochs, "Passes over the data")->check(CLI::PositiveNumber);
  c_train->add_option("--batch-size", tr.cfg.batch_size, "Images per optimizer step")->check(CLI::PositiveNumber);
  c_train->add_option("--micro-batch", tr.cfg.micro_batch, "Images per forward/backward chunk (memory bound)")
      ->check(CLI::PositiveNumber);
  c_train->add_option("--max-steps", tr.cfg.max_steps, "Stop after this many steps; 0 for no limit");
  c_train->add_option("--lr", tr.cfg.learning_rate, "Learning rate")->check(CLI::NonNegativeNumber);
  c_train->add_option("--optimizer", tr.optimizer, "adam or sgd");
  c_train->add_option("--clip-norm", tr.cfg.clip_norm, "Global gradient norm clip; 0 disables");
  c_train->add_option("--seed", tr.seed, "RNG seed (drawn and printed when omitted)");
  c_train->add_option("--checkpoint-dir", tr.checkpoint_dir, "Where step_N.ckpt and final.ckpt are written");
  c_train->add_option("--checkpoint-every", tr.cfg.checkpoint_every, "Steps between checkpoints; 0 for final only");
  c_train->add_option("--resume", tr.resume, "Continue from a checkpoint (architecture flags are ignored)");
  c_train->add_option("--metrics", tr.metrics, "Per-step metrics CSV");
  c_train->add_option("--log-every", tr.log_every, "Print a loss line every N steps; 0 is quiet");
  c_train->add_flag("--augment", tr.cfg.augment, "Augment the training set in memory before training");
  c_train->add_option("--m-plus", tr.cfg.loss.m_plus, "Margin for the present class");
  c_train->add_option("--m-minus", tr.cfg.loss.m_minus, "Margin for absent classes");
  c_train->add_option("--lambda-margin", tr.cfg.loss.lambda_margin, "Down-weighting of absent classes");
  c_train->add_option("--lambda-recon", tr.cfg.loss.lambda_recon, "Reconstruction loss weight");
  c_train->add_option("--recon-sign", tr.cfg.loss.recon_sign, "+1 adds the reconstruction term, -1 subtracts it")
      ->check(CLI::IsMember({-1.0, 1.0}));
  c_train->add_option("--routing-iters", tr.model.routing_iters, "Routing iterations")->check(CLI::Range(1, 10));
  c_train->add_option("--dropout", tr.model.dropout_rate, "Drop probability after conv1");
  c_train->add_option("--conv1-filters", tr.model.conv1_filters, "First convolution width");
  c_train->add_option("--conv1-kernel", tr.model.conv1_kernel, "First convolution kernel size");
  c_train->add_option("--conv2-filters", tr.model.conv2_filters, "Primary capsule convolution width");
  c_train->add_option("--conv2-kernel", tr.model.conv2_kernel, "Primary capsule kernel size");
  c_train->add_option("--primary-dim", tr.model.primary_dim, "Primary capsule dimension");
  c_train->add_option("--classes", tr.model.num_classes, "Class capsules")->check(CLI::Range(2, 43));
  c_train->add_option("--class-dim", tr.model.class_dim, "Class capsule dimension");
  c_train->add_option("--decoder", tr.decoder, "deep (two hidden layers) or shallow (one)");

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "Report CCR, per-class accuracy and confusion counts");
  c_eval->add_option("--data", ev.data, "Dataset file")->required();
  c_eval->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  c_eval->add_option("--split", ev.split, "train or test");
  c_eval->add_option("--out", ev.out, "Write the report here instead of stdout");
  c_eval->add_option("--confusion", ev.confusion, "Write the confusion matrix CSV here");
  c_eval->add_option("--batch-size", ev.batch_size, "Images per forward pass")->check(CLI::PositiveNumber);

  PredictArgs pr;
  auto* c_pred = app.add_subcommand("predict", "Classify one image or a directory of images");
  c_pred->add_option("--checkpoint", pr.checkpoint, "Checkpoint file")->required();
  auto* o_image = c_pred->add_option("--image", pr.image, "A single .ppm/.pgm image");
  auto* o_dir = c_pred->add_option("--dir", pr.dir, "A directory of .ppm/.pgm images");
  o_image->excludes(o_dir);
  c_pred->add_option("--reconstruct", pr.reconstruct,
                     "Write the decoder reconstruction (a file for --image, a directory for --dir)");
  c_pred->add_option("--resize", pr.resize, "none or bilinear");

  GradcheckArgs gc;
  auto* c_gc = app.add_subcommand("gradcheck", "Compare analytic gradients with central differences");
  c_gc->add_flag("--full", gc.full, "Whole desk-scale graph instead of per-component checks");
  c_gc->add_option("--seed", gc.seed, "RNG seed (drawn and printed when omitted)");
  c_gc->add_option("--step", gc.step, "Finite difference step h")->check(CLI::PositiveNumber);
  c_gc->add_option("--tolerance", gc.tolerance, "Maximum relative error")->check(CLI::PositiveNumber);

  std::string command;
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    const CLI::App* target = &app;
    for (const auto* sub : app.get_subcommands()) target = sub;
    out << target->help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    const auto subs = app.get_subcommands();
    const std::string sub = subs.empty() ? "" : subs.front()->get_name();
    report_error(err, "usage", sub, e.what(),
                 "run 'capsnet " + (sub.empty() ? std::string() : sub + " ") + "--help' for the flag list");
    return kUsage;
  }

  command = app.get_subcommands().front()->get_name();
  try {
    set_num_threads(threads ? threads : std::max(1u, std::thread::hardware_concurrency()));
    if (command == "convert") return do_convert(conv, out);
    if (command == "synth") return do_synth(syn, out, err);
    if (command == "augment") return do_augment(aug, out, err);
    if (command == "train") return do_train(tr, out, err);
    if (command == "eval") return do_eval(ev, out);
    if (command == "predict") return do_predict(pr, out);
    if (command == "gradcheck") return do_gradcheck(gc, out, err);
    report_error(err, "usage", command, "unknown subcommand", "");
    return kUsage;
  } catch (const UsageError& e) {
    report_error(err, "usage", command, e.what(), "run 'capsnet " + command + " --help' for the flag list");
    return kUsage;
  } catch (const std::bad_alloc&) {
    report_error(err, "out_of_memory", command, "allocation failed", "try a smaller --micro-batch or dataset");
    return kRuntime;
  } catch (const std::exception& e) {
    report_error(err, classify(e), command, e.what(), "");
    return kRuntime;
  }
}

}  // namespace capsnet::cli
