#include "capsnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "capsnet/capsule.hpp"
#include "capsnet/losses.hpp"
#include "capsnet/ops.hpp"
#include "capsnet/random.hpp"

namespace capsnet::gradcheck {

double Result::max_rel_error() const {
  double m = 0.0;
  for (const auto& b : blocks) m = std::max(m, b.max_rel_error);
  return m;
}

void Result::merge(const Result& other, const std::string& prefix) {
  for (auto b : other.blocks) {
    b.name = prefix + b.name;
    blocks.push_back(std::move(b));
  }
  passed = passed && other.passed;
}

std::string Result::render() const {
  std::ostringstream os;
  char buf[256];
  for (const auto& b : blocks) {
    std::snprintf(buf, sizeof buf, "%-28s %s rel=%.3e abs=%.3e worst=%zu checked=%zu\n", b.name.c_str(),
                  b.passed ? "ok  " : "FAIL", b.max_rel_error, b.max_abs_error, b.worst_index, b.checked);
    os << buf;
  }
  return os.str();
}

Result check(const std::function<double()>& loss, std::span<const Block> blocks, const Options& options) {
  const double base = loss();
  if (loss() != base) throw std::runtime_error("gradcheck: loss function is not deterministic");
  Rng rng(options.seed, 0x67726164ULL);
  Result result;
  for (const auto& block : blocks) {
    require_same_shape(*block.value, *block.analytic, "gradcheck block");
    std::vector<std::size_t> coords;
    const std::size_t n = block.value->size();
    if (n < options.full_block_limit) {
      coords.resize(n);
      std::iota(coords.begin(), coords.end(), std::size_t{0});
    } else {
      for (std::size_t k = 0; k < options.sampled_coords; ++k) coords.push_back(rng.below(n));
    }
    BlockResult br;
    br.name = block.name;
    for (std::size_t i : coords) {
      double& x = (*block.value)[i];
      const double orig = x;
      x = orig + options.step;
      const double up = loss();
      x = orig - options.step;
      const double down = loss();
      x = orig;
      const double numeric = (up - down) / (2.0 * options.step);
      const double analytic = (*block.analytic)[i];
      const double abs_err = std::abs(analytic - numeric);
      const double denom = std::max({std::abs(analytic), std::abs(numeric), options.denominator_floor});
      const double rel = std::isnan(abs_err / denom) ? INFINITY : abs_err / denom;
      if (br.checked == 0 || rel > br.max_rel_error) {
        br.max_rel_error = rel;
        br.worst_index = i;
      }
      br.max_abs_error = std::max(br.max_abs_error, abs_err);
      ++br.checked;
    }
    br.passed = br.max_rel_error <= options.tolerance;
    result.passed = result.passed && br.passed;
    result.blocks.push_back(std::move(br));
  }
  return result;
}

ModelConfig desk_model_config() {
  ModelConfig c;
  c.input_size = 8;
  c.channels = 3;
  c.conv1_filters = 4;
  c.conv1_kernel = 3;
  c.conv2_filters = 2;
  c.conv2_kernel = 3;
  c.conv2_stride = 2;
  c.primary_dim = 2;
  c.num_classes = 3;
  c.class_dim = 4;
  c.routing_iters = 2;
  c.dropout_rate = 0.3;
  return c;
}

DecoderConfig desk_decoder_config() {
  DecoderConfig d = DecoderConfig::for_model(desk_model_config());
  d.hidden1 = 8;
  d.hidden2 = 12;
  return d;
}

namespace {

void randomize(Tensor& t, double stddev, Rng& rng) {
  for (auto& x : t.data()) x = stddev * rng.normal();
}

Tensor random_tensor(Shape shape, double lo, double hi, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& x : t.data()) x = rng.uniform(lo, hi);
  return t;
}

double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

struct DeskGraph {
  CapsNetModel model;
  Decoder decoder;
  Tensor input;
  std::vector<int> labels;
  std::uint64_t dropout_seed = 0;
  LossConfig loss_cfg;

  double loss() const {
    const CapsForward f = model.forward(input, true, dropout_seed);
    const double margin = margin_loss(f.lengths, labels, loss_cfg).value;
    const MaskResult m = mask(f.v, std::span<const int>(labels));
    const DecoderForward d = decoder.forward(m.masked);
    return final_loss(margin, reconstruction_loss(input, d.image).value, loss_cfg);
  }
};

// Init scales chosen so capsule norms land in the gently curved part of
// squash; with 0.1 everywhere the class capsules come out near 1e-3 and a
// 1e-3 step can no longer resolve the curvature.
double desk_stddev(const std::string& name) {
  if (name == "conv1/w" || name == "conv2/w") return 0.3;
  if (name == "caps/w") return 0.5;
  if (name.starts_with("decoder/")) return 0.3;
  return 0.1;
}

DeskGraph make_desk_graph(std::uint64_t seed) {
  Rng rng(seed, 0x6465736bULL);
  DeskGraph g{CapsNetModel(desk_model_config(), seed), Decoder(desk_decoder_config(), seed), Tensor(), {0, 2},
              Rng::mix(seed + 17), LossConfig{}};
  for (auto& p : g.model.params()) randomize(*p.value, desk_stddev(p.name), rng);
  for (auto& p : g.decoder.params()) randomize(*p.value, desk_stddev(p.name), rng);
  g.input = random_tensor({2, 8, 8, 3}, 0.0, 1.0, rng);
  return g;
}

// A central difference straddling a ReLU kink or a margin hinge measures
// neither side. Reject draws where a live unit or a capsule length sits
// closer than `margin` to one.
bool away_from_kinks(const DeskGraph& g, double margin) {
  const CapsForward f = g.model.forward(g.input, true, g.dropout_seed);
  std::size_t dead = 0;
  for (std::size_t i = 0; i < f.conv1_pre.size(); ++i) {
    const double v = f.conv1_pre[i];
    dead += v <= 0.0;
    if (f.dropout_mask[i] != 0.0 && std::abs(v) < margin) return false;
  }
  if (static_cast<double>(dead) > 0.2 * static_cast<double>(f.conv1_pre.size())) return false;
  for (double len : f.lengths.data()) {
    if (std::abs(len - g.loss_cfg.m_plus) < margin || std::abs(len - g.loss_cfg.m_minus) < margin) return false;
  }
  const DecoderForward d = g.decoder.forward(mask(f.v, std::span<const int>(g.labels)).masked);
  for (std::size_t l = 0; l + 1 < d.pre.size(); ++l) {
    for (double v : d.pre[l].data()) {
      if (std::abs(v) < margin) return false;
    }
  }
  return true;
}

DeskGraph well_posed_desk_graph(std::uint64_t seed, double step) {
  const double margin = 2.0 * step;
  std::uint64_t s = seed;
  for (int attempt = 0; attempt < 256; ++attempt) {
    DeskGraph g = make_desk_graph(s);
    if (away_from_kinks(g, margin)) return g;
    s = Rng::mix(s + 1);
  }
  throw std::runtime_error("gradcheck: no kink-free desk graph within 256 draws");
}

}  // namespace

Result check_full_graph(std::uint64_t seed, Options options) {
  DeskGraph g = well_posed_desk_graph(seed, options.step);

  const CapsForward f = g.model.forward(g.input, true, g.dropout_seed);
  const LossValue margin = margin_loss(f.lengths, g.labels, g.loss_cfg);
  const MaskResult m = mask(f.v, std::span<const int>(g.labels));
  const DecoderForward d = g.decoder.forward(m.masked);
  const LossValue recon = reconstruction_loss(g.input, d.image);
  const DecoderGradients dg =
      g.decoder.backward(d, ops::scale(recon.grad, g.loss_cfg.recon_sign * g.loss_cfg.lambda_recon));
  const Tensor grad_v = mask_backward(dg.input, m.kept, g.model.config().num_classes, g.model.config().class_dim);
  const ModelGradients mg = g.model.backward(f, grad_v, margin.grad);
  // the reconstruction term also depends on the input directly
  Tensor input_grad = mg.input;
  const Tensor direct = ops::scale(recon.grad, -g.loss_cfg.recon_sign * g.loss_cfg.lambda_recon);
  for (std::size_t i = 0; i < input_grad.size(); ++i) input_grad[i] += direct[i];

  std::vector<Block> blocks;
  auto mp = g.model.params();
  auto mgp = mg.params();
  for (std::size_t i = 0; i < mp.size(); ++i) blocks.push_back({mp[i].name, mp[i].value, mgp[i].value});
  auto dp = g.decoder.params();
  auto dgp = dg.params();
  for (std::size_t i = 0; i < dp.size(); ++i) blocks.push_back({dp[i].name, dp[i].value, dgp[i].value});
  blocks.push_back({"input", &g.input, &input_grad});
  return check([&] { return g.loss(); }, blocks, options);
}

Result check_components(std::uint64_t seed, const Options& options) {
  Rng rng(seed, 0x636f6d70ULL);
  Result all;

  {  // conv2d, stride 2 with padding to cover both paths
    Tensor x = random_tensor({2, 6, 6, 2}, -1, 1, rng);
    Tensor w = random_tensor({3, 3, 2, 4}, -0.5, 0.5, rng);
    Tensor b = random_tensor({4}, -0.5, 0.5, rng);
    const ops::Conv2dOptions co{2, 1};
    const Tensor r = random_tensor(ops::conv2d_forward(x, w, b, co).shape(), -1, 1, rng);
    const auto g = ops::conv2d_backward(r, x, w, co);
    const Block blocks[] = {{"input", &x, &g.input}, {"filters", &w, &g.filters}, {"bias", &b, &g.bias}};
    all.merge(check([&] { return dot(ops::conv2d_forward(x, w, b, co), r); }, blocks, options), "conv2d/");
  }
  {  // linear + relu + sigmoid
    Tensor x = random_tensor({3, 5}, -1, 1, rng);
    Tensor w = random_tensor({5, 4}, -1, 1, rng);
    Tensor b = random_tensor({4}, -1, 1, rng);
    const Tensor r = random_tensor({3, 4}, -1, 1, rng);
    auto f = [&] { return dot(ops::sigmoid_forward(ops::linear_forward(x, w, b)), r); };
    const Tensor pre = ops::linear_forward(x, w, b);
    const auto g = ops::linear_backward(ops::sigmoid_backward(r, ops::sigmoid_forward(pre)), x, w);
    const Block blocks[] = {{"input", &x, &g.input}, {"weight", &w, &g.weight}, {"bias", &b, &g.bias}};
    all.merge(check(f, blocks, options), "linear_sigmoid/");

    Tensor y = random_tensor({4, 6}, -1, 1, rng);
    for (auto& v : y.data()) {
      if (std::abs(v) < 0.05) v = 0.5;  // keep away from the kink
    }
    const Tensor ry = random_tensor({4, 6}, -1, 1, rng);
    const Tensor gy = ops::relu_backward(ry, y);
    const Block rb[] = {{"input", &y, &gy}};
    all.merge(check([&] { return dot(ops::relu_forward(y), ry); }, rb, options), "relu/");
  }
  {  // softmax and l2_norm along a middle axis
    Tensor x = random_tensor({2, 4, 3}, -2, 2, rng);
    const Tensor r = random_tensor({2, 4, 3}, -1, 1, rng);
    const Tensor gs = ops::softmax_backward(r, ops::softmax(x, 1), 1);
    const Block sb[] = {{"input", &x, &gs}};
    all.merge(check([&] { return dot(ops::softmax(x, 1), r); }, sb, options), "softmax/");
    const Tensor rn = random_tensor({2, 3}, -1, 1, rng);
    const Tensor gn = ops::l2_norm_backward(rn, x, ops::l2_norm(x, 1), 1);
    const Block nb[] = {{"input", &x, &gn}};
    all.merge(check([&] { return dot(ops::l2_norm(x, 1), rn); }, nb, options), "l2_norm/");
  }
  {  // dropout with a frozen mask
    Tensor x = random_tensor({3, 7}, -1, 1, rng);
    const Tensor r = random_tensor({3, 7}, -1, 1, rng);
    const auto d = ops::dropout_forward(x, 0.5, 99, true);
    const Tensor g = ops::dropout_backward(r, d.mask);
    const Block blocks[] = {{"input", &x, &g}};
    all.merge(check([&] { return dot(ops::dropout_forward(x, 0.5, 99, true).output, r); }, blocks, options),
              "dropout/");
  }
  {  // squash
    Tensor s = random_tensor({3, 5}, -1, 1, rng);
    const Tensor r = random_tensor({3, 5}, -1, 1, rng);
    const Tensor g = capsule::squash_backward(s, r);
    const Block blocks[] = {{"input", &s, &g}};
    all.merge(check([&] { return dot(capsule::squash(s), r); }, blocks, options), "squash/");

    // At s = 0 the step is comparable to sqrt(eps), so differences say
    // little there; the exact answer is a zero Jacobian.
    const Tensor zero({2, 5});
    const Tensor gz = capsule::squash_backward(zero, random_tensor({2, 5}, -1, 1, rng));
    BlockResult z{"zero_vector", 0.0, 0.0, 0, gz.size(), true};
    for (std::size_t i = 0; i < gz.size(); ++i) {
      if (!std::isfinite(gz[i]) || std::abs(gz[i]) > z.max_abs_error) {
        z.max_abs_error = std::isfinite(gz[i]) ? std::abs(gz[i]) : INFINITY;
        z.worst_index = i;
      }
    }
    z.max_rel_error = z.max_abs_error;
    z.passed = z.max_abs_error == 0.0;
    Result zr;
    zr.blocks.push_back(z);
    zr.passed = z.passed;
    all.merge(zr, "squash/");
  }
  {  // prediction vectors + routing
    Tensor u = random_tensor({2, 3, 2}, -1, 1, rng);
    Tensor w = random_tensor({3, 3, 4, 2}, -1, 1, rng);
    const Tensor r = random_tensor({2, 3, 4}, -1, 1, rng);
    auto f = [&] { return dot(capsule::route(capsule::predict_vectors(u, w), 3).v, r); };
    const Tensor uh = capsule::predict_vectors(u, w);
    const auto routed = capsule::route(uh, 3);
    const auto pg = capsule::predict_vectors_backward(capsule::route_backward(uh, routed.state, r), u, w);
    const Block blocks[] = {{"u", &u, &pg.u}, {"weights", &w, &pg.weights}};
    all.merge(check(f, blocks, options), "routing/");
  }
  {  // mask + decoder
    DecoderConfig dc = desk_decoder_config();
    Decoder dec(dc, seed);
    for (auto& p : dec.params()) randomize(*p.value, 0.3, rng);
    Tensor v = random_tensor({2, dc.num_classes, dc.class_dim}, -0.5, 0.5, rng);
    const std::vector<int> labels{1, 0};
    const Tensor r = random_tensor({2, dc.image_size, dc.image_size, dc.channels}, -1, 1, rng);
    auto f = [&] { return dot(dec.forward(mask(v, std::span<const int>(labels)).masked).image, r); };
    const MaskResult m = mask(v, std::span<const int>(labels));
    const DecoderForward df = dec.forward(m.masked);
    const DecoderGradients dg = dec.backward(df, r);
    const Tensor gv = mask_backward(dg.input, m.kept, dc.num_classes, dc.class_dim);
    std::vector<Block> blocks{{"v", &v, &gv}};
    auto dp = dec.params();
    auto dgp = dg.params();
    for (std::size_t i = 0; i < dp.size(); ++i) blocks.push_back({dp[i].name, dp[i].value, dgp[i].value});
    all.merge(check(f, blocks, options), "mask_decoder/");
  }
  {  // margin loss away from both hinges
    const LossConfig cfg;
    Tensor len({4, 5});
    for (auto& x : len.data()) {
      do {
        x = rng.uniform(0.0, 0.99);
      } while (std::abs(x - cfg.m_plus) < 0.02 || std::abs(x - cfg.m_minus) < 0.02);
    }
    const std::vector<int> labels{0, 3, 4, 1};
    const LossValue lv = margin_loss(len, labels, cfg);
    const Block blocks[] = {{"lengths", &len, &lv.grad}};
    all.merge(check([&] { return margin_loss(len, labels, cfg).value; }, blocks, options), "margin_loss/");
  }
  return all;
}

}  // namespace capsnet::gradcheck
