#include "capsnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "capsnet/dataset.hpp"

namespace capsnet {
namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_name(std::ostream& out, const std::string& name) {
  put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
}

class Reader {
 public:
  Reader(std::istream& in, const fs::path& path) : in_(in), path_(path) {}

  template <typename T>
  T get(const char* what) {
    T v{};
    in_.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (in_.gcount() != sizeof(T)) fail(std::string("truncated while reading ") + what);
    return v;
  }

  std::string name() {
    const auto len = get<std::uint16_t>("name length");
    std::string s(len, '\0');
    in_.read(s.data(), len);
    if (in_.gcount() != len) fail("truncated name");
    return s;
  }

  void bytes(void* dst, std::size_t n) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) fail("truncated block data");
  }

  [[noreturn]] void fail(const std::string& why) const {
    throw FormatError("checkpoint " + path_.string() + ": " + why);
  }

 private:
  std::istream& in_;
  const fs::path& path_;
};

using Meta = std::vector<std::pair<std::string, double>>;

Meta describe(const CapsNetModel& model, const Decoder& decoder, const Optimizer* opt,
              const TrainProgress& progress) {
  const ModelConfig& m = model.config();
  const DecoderConfig& d = decoder.config();
  auto u = [](auto v) { return static_cast<double>(v); };
  Meta meta{
      {"input_size", u(m.input_size)},         {"channels", u(m.channels)},
      {"conv1_filters", u(m.conv1_filters)},   {"conv1_kernel", u(m.conv1_kernel)},
      {"conv2_filters", u(m.conv2_filters)},   {"conv2_kernel", u(m.conv2_kernel)},
      {"conv2_stride", u(m.conv2_stride)},     {"primary_dim", u(m.primary_dim)},
      {"num_classes", u(m.num_classes)},       {"class_dim", u(m.class_dim)},
      {"routing_iters", u(m.routing_iters)},   {"dropout_rate", m.dropout_rate},
      {"conv_init_gain", m.conv_init_gain},    {"transform_init_std", m.transform_init_std},
      {"decoder_hidden1", u(d.hidden1)},       {"decoder_hidden2", u(d.hidden2)},
      {"decoder_shallow", d.shallow ? 1.0 : 0.0}, {"decoder_init_gain", d.init_gain},
      {"train_step", u(progress.step)},
      // seeds can exceed 2^53, so store the two 32-bit halves
      {"train_seed_hi", u(progress.seed >> 32)}, {"train_seed_lo", u(progress.seed & 0xffffffffULL)},
      {"optimizer", opt == nullptr ? -1.0 : (opt->kind() == OptimizerKind::kAdam ? 0.0 : 1.0)},
  };
  if (opt != nullptr && opt->kind() == OptimizerKind::kAdam) {
    meta.emplace_back("adam_step", u(opt->adam_state().step));
  }
  return meta;
}

void write_block(std::ostream& out, const std::string& name, const Tensor& t, BlockPrecision precision) {
  put_name(out, name);
  put<std::uint8_t>(out, static_cast<std::uint8_t>(precision));
  put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
  for (std::size_t d : t.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  if (precision == BlockPrecision::kFloat64) {
    out.write(reinterpret_cast<const char*>(t.raw()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  } else {
    const FloatTensor f = to_float(t);
    out.write(reinterpret_cast<const char*>(f.raw()), static_cast<std::streamsize>(f.size() * sizeof(float)));
  }
}

}  // namespace

void save_checkpoint(const fs::path& path, const CapsNetModel& model, const Decoder& decoder,
                     const Optimizer* optimizer, const TrainProgress& progress, BlockPrecision precision) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out.write("CPKT", 4);
  put<std::uint16_t>(out, kCheckpointVersion);
  const Meta meta = describe(model, decoder, optimizer, progress);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(meta.size()));
  for (const auto& [k, v] : meta) {
    put_name(out, k);
    put<double>(out, v);
  }

  std::vector<ConstParamRef> blocks = model.params();
  for (auto& p : decoder.params()) blocks.push_back(p);
  const std::size_t param_count = blocks.size();
  std::vector<std::pair<std::string, const Tensor*>> all;
  for (auto& b : blocks) all.emplace_back(b.name, b.value);
  if (optimizer != nullptr && optimizer->kind() == OptimizerKind::kAdam && !optimizer->adam_state().m.empty()) {
    const AdamState& st = optimizer->adam_state();
    for (std::size_t i = 0; i < param_count; ++i) all.emplace_back("adam/m/" + blocks[i].name, &st.m.at(i));
    for (std::size_t i = 0; i < param_count; ++i) all.emplace_back("adam/v/" + blocks[i].name, &st.v.at(i));
  }
  put<std::uint32_t>(out, static_cast<std::uint32_t>(all.size()));
  for (const auto& [name, t] : all) write_block(out, name, *t, precision);
  if (!out) throw std::runtime_error("write failed for checkpoint " + path.string());
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  Reader r(in, path);
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, "CPKT", 4) != 0) r.fail("bad magic (expected CPKT)");
  const auto version = r.get<std::uint16_t>("version");
  if (version != kCheckpointVersion) r.fail("unsupported version " + std::to_string(version));

  std::map<std::string, double> meta;
  const auto meta_count = r.get<std::uint32_t>("meta count");
  for (std::uint32_t i = 0; i < meta_count; ++i) {
    std::string key = r.name();
    meta[key] = r.get<double>("meta value");
  }
  auto need = [&](const char* key) {
    auto it = meta.find(key);
    if (it == meta.end()) r.fail(std::string("missing hyperparameter ") + key);
    return it->second;
  };
  auto size = [&](const char* key) { return static_cast<std::size_t>(need(key)); };

  ModelConfig mc;
  mc.input_size = size("input_size");
  mc.channels = size("channels");
  mc.conv1_filters = size("conv1_filters");
  mc.conv1_kernel = size("conv1_kernel");
  mc.conv2_filters = size("conv2_filters");
  mc.conv2_kernel = size("conv2_kernel");
  mc.conv2_stride = size("conv2_stride");
  mc.primary_dim = size("primary_dim");
  mc.num_classes = size("num_classes");
  mc.class_dim = size("class_dim");
  mc.routing_iters = size("routing_iters");
  mc.dropout_rate = need("dropout_rate");
  mc.conv_init_gain = need("conv_init_gain");
  mc.transform_init_std = need("transform_init_std");
  DecoderConfig dc = DecoderConfig::for_model(mc);
  dc.hidden1 = size("decoder_hidden1");
  dc.hidden2 = size("decoder_hidden2");
  dc.shallow = need("decoder_shallow") != 0.0;
  dc.init_gain = need("decoder_init_gain");

  Checkpoint ck;
  try {
    ck.model = CapsNetModel(mc, 0);
    ck.decoder = Decoder(dc, 0);
  } catch (const std::invalid_argument& e) {
    r.fail(std::string("invalid architecture: ") + e.what());
  }
  ck.progress.step = static_cast<std::uint64_t>(need("train_step"));
  ck.progress.seed = (static_cast<std::uint64_t>(need("train_seed_hi")) << 32) |
                     static_cast<std::uint64_t>(need("train_seed_lo"));
  const double opt_code = need("optimizer");

  std::map<std::string, Tensor> blocks;
  const auto block_count = r.get<std::uint32_t>("block count");
  for (std::uint32_t b = 0; b < block_count; ++b) {
    std::string name = r.name();
    const auto precision = r.get<std::uint8_t>("precision");
    const auto rank = r.get<std::uint8_t>("rank");
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint32_t>("dim");
    if (rank == 0 || shape_product(shape) == 0) r.fail("block " + name + " has an empty shape");
    Tensor t(shape);
    if (precision == static_cast<std::uint8_t>(BlockPrecision::kFloat64)) {
      r.bytes(t.raw(), t.size() * sizeof(double));
    } else if (precision == static_cast<std::uint8_t>(BlockPrecision::kFloat32)) {
      std::vector<float> f(t.size());
      r.bytes(f.data(), f.size() * sizeof(float));
      for (std::size_t i = 0; i < f.size(); ++i) t[i] = f[i];
    } else {
      r.fail("block " + name + " has unknown precision " + std::to_string(precision));
    }
    blocks.emplace(std::move(name), std::move(t));
  }

  auto take = [&](const std::string& name, Tensor& dst) {
    auto it = blocks.find(name);
    if (it == blocks.end()) r.fail("missing block " + name);
    if (it->second.shape() != dst.shape()) {
      r.fail("block " + name + " has shape " + shape_string(it->second.shape()) + ", expected " +
             shape_string(dst.shape()));
    }
    dst = std::move(it->second);
  };
  std::vector<ParamRef> params = ck.model.params();
  for (auto& p : ck.decoder.params()) params.push_back(p);
  for (auto& p : params) take(p.name, *p.value);

  if (opt_code >= 0.0) {
    ck.optimizer.emplace(opt_code == 0.0 ? OptimizerKind::kAdam : OptimizerKind::kSgd);
    if (opt_code == 0.0 && blocks.count("adam/m/" + params.front().name)) {
      AdamState& st = ck.optimizer->adam_state();
      st.step = static_cast<std::uint64_t>(need("adam_step"));
      for (auto& p : params) {
        Tensor m(p.value->shape()), v(p.value->shape());
        take("adam/m/" + p.name, m);
        take("adam/v/" + p.name, v);
        st.m.push_back(std::move(m));
        st.v.push_back(std::move(v));
      }
    }
  }
  return ck;
}

}  // namespace capsnet
