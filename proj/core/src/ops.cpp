#include "capsnet/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "capsnet/parallel.hpp"
#include "capsnet/random.hpp"

namespace capsnet::ops {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* what) {
  if (axis >= shape.size()) {
    throw std::out_of_range(std::string(what) + ": axis " + std::to_string(axis) +
                            " out of range for shape " + shape_string(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != axis) out.push_back(shape[i]);
  }
  if (out.empty()) out.push_back(1);
  return out;
}

template <typename F>
Tensor map_unary(const Tensor& x, F f) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return out;
}

struct ConvGeometry {
  std::size_t n, h, w, cin, kh, kw, cout, ho, wo;
  std::size_t patch() const { return kh * kw * cin; }
  std::size_t positions() const { return ho * wo; }
};

ConvGeometry conv_geometry(const Tensor& input, const Tensor& filters, const Conv2dOptions& opt) {
  require_rank(input.shape(), 4, "conv2d input [N,H,W,C]");
  require_rank(filters.shape(), 4, "conv2d filters [K,K,Cin,Cout]");
  if (opt.stride == 0) throw std::invalid_argument("conv2d: stride must be positive");
  ConvGeometry g{};
  g.n = input.dim(0);
  g.h = input.dim(1);
  g.w = input.dim(2);
  g.cin = input.dim(3);
  g.kh = filters.dim(0);
  g.kw = filters.dim(1);
  g.cout = filters.dim(3);
  if (filters.dim(2) != g.cin) {
    throw ShapeError("conv2d: filters " + shape_string(filters.shape()) + " expect " +
                     std::to_string(filters.dim(2)) + " input channels, input " +
                     shape_string(input.shape()) + " has " + std::to_string(g.cin));
  }
  if (g.kh > g.h + 2 * opt.padding || g.kw > g.w + 2 * opt.padding) {
    throw ShapeError("conv2d: kernel " + std::to_string(g.kh) + "x" + std::to_string(g.kw) +
                     " larger than padded input " + shape_string(input.shape()));
  }
  g.ho = conv_output_size(g.h, g.kh, opt);
  g.wo = conv_output_size(g.w, g.kw, opt);
  return g;
}

void im2col(const double* img, const ConvGeometry& g, const Conv2dOptions& opt, double* cols) {
  const std::size_t patch = g.patch();
  for (std::size_t oy = 0; oy < g.ho; ++oy) {
    for (std::size_t ox = 0; ox < g.wo; ++ox) {
      double* row = cols + (oy * g.wo + ox) * patch;
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        const auto iy = static_cast<std::ptrdiff_t>(oy * opt.stride + ky) -
                        static_cast<std::ptrdiff_t>(opt.padding);
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          const auto ix = static_cast<std::ptrdiff_t>(ox * opt.stride + kx) -
                          static_cast<std::ptrdiff_t>(opt.padding);
          double* dst = row + (ky * g.kw + kx) * g.cin;
          if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(g.h) ||
              ix >= static_cast<std::ptrdiff_t>(g.w)) {
            std::fill(dst, dst + g.cin, 0.0);
          } else {
            const double* src = img + (static_cast<std::size_t>(iy) * g.w + static_cast<std::size_t>(ix)) * g.cin;
            std::copy(src, src + g.cin, dst);
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, const ConvGeometry& g, const Conv2dOptions& opt, double* img) {
  const std::size_t patch = g.patch();
  for (std::size_t oy = 0; oy < g.ho; ++oy) {
    for (std::size_t ox = 0; ox < g.wo; ++ox) {
      const double* row = cols + (oy * g.wo + ox) * patch;
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        const auto iy = static_cast<std::ptrdiff_t>(oy * opt.stride + ky) -
                        static_cast<std::ptrdiff_t>(opt.padding);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          const auto ix = static_cast<std::ptrdiff_t>(ox * opt.stride + kx) -
                          static_cast<std::ptrdiff_t>(opt.padding);
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
          const double* src = row + (ky * g.kw + kx) * g.cin;
          double* dst = img + (static_cast<std::size_t>(iy) * g.w + static_cast<std::size_t>(ix)) * g.cin;
          for (std::size_t c = 0; c < g.cin; ++c) dst[c] += src[c];
        }
      }
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a.shape(), 2, "matmul lhs");
  require_rank(b.shape(), 2, "matmul rhs");
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  Tensor out({a.dim(0), b.dim(1)});
  MapMat(out.raw(), a.dim(0), b.dim(1)).noalias() =
      ConstMapMat(a.raw(), a.dim(0), a.dim(1)) * ConstMapMat(b.raw(), b.dim(0), b.dim(1));
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

Tensor scale(const Tensor& a, double factor) {
  return map_unary(a, [factor](double x) { return x * factor; });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_rank(bias.shape(), 1, "add_bias bias");
  if (x.rank() == 0 || x.shape().back() != bias.dim(0)) {
    throw ShapeError("add_bias: input " + shape_string(x.shape()) + " vs bias " +
                     shape_string(bias.shape()));
  }
  Tensor out = x;
  const std::size_t k = bias.dim(0);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bias[i % k];
  return out;
}

Tensor linear_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_bias(matmul(x, w), b);
}

LinearGrads linear_backward(const Tensor& grad_out, const Tensor& x, const Tensor& w) {
  require_rank(grad_out.shape(), 2, "linear_backward grad_out");
  if (grad_out.dim(0) != x.dim(0) || grad_out.dim(1) != w.dim(1)) {
    throw ShapeError("linear_backward: grad " + shape_string(grad_out.shape()) + " for input " +
                     shape_string(x.shape()) + " and weight " + shape_string(w.shape()));
  }
  LinearGrads g{Tensor(x.shape()), Tensor(w.shape()), Tensor({w.dim(1)})};
  ConstMapMat go(grad_out.raw(), grad_out.dim(0), grad_out.dim(1));
  ConstMapMat xm(x.raw(), x.dim(0), x.dim(1));
  ConstMapMat wm(w.raw(), w.dim(0), w.dim(1));
  MapMat(g.input.raw(), x.dim(0), x.dim(1)).noalias() = go * wm.transpose();
  MapMat(g.weight.raw(), w.dim(0), w.dim(1)).noalias() = xm.transpose() * go;
  for (std::size_t r = 0; r < grad_out.dim(0); ++r) {
    for (std::size_t c = 0; c < grad_out.dim(1); ++c) g.bias[c] += grad_out[r * grad_out.dim(1) + c];
  }
  return g;
}

Tensor relu_forward(const Tensor& x) {
  return map_unary(x, [](double v) { return v > 0.0 ? v : 0.0; });
}

Tensor relu_backward(const Tensor& grad_out, const Tensor& x) {
  require_same_shape(grad_out, x, "relu_backward");
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? grad_out[i] : 0.0;
  return out;
}

Tensor sigmoid_forward(const Tensor& x) {
  return map_unary(x, [](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
}

Tensor sigmoid_backward(const Tensor& grad_out, const Tensor& y) {
  require_same_shape(grad_out, y, "sigmoid_backward");
  Tensor out(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = grad_out[i] * y[i] * (1.0 - y[i]);
  return out;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis, "softmax");
  Tensor out(x.shape());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.extent * s.inner + in;
      double mx = x[base];
      for (std::size_t k = 1; k < s.extent; ++k) mx = std::max(mx, x[base + k * s.inner]);
      double total = 0.0;
      for (std::size_t k = 0; k < s.extent; ++k) {
        const double e = std::exp(x[base + k * s.inner] - mx);
        out[base + k * s.inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < s.extent; ++k) out[base + k * s.inner] /= total;
    }
  }
  return out;
}

Tensor softmax_backward(const Tensor& grad_out, const Tensor& y, std::size_t axis) {
  require_same_shape(grad_out, y, "softmax_backward");
  const AxisSplit s = split_axis(y.shape(), axis, "softmax_backward");
  Tensor out(y.shape());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.extent * s.inner + in;
      double dot = 0.0;
      for (std::size_t k = 0; k < s.extent; ++k) dot += grad_out[base + k * s.inner] * y[base + k * s.inner];
      for (std::size_t k = 0; k < s.extent; ++k) {
        const std::size_t i = base + k * s.inner;
        out[i] = y[i] * (grad_out[i] - dot);
      }
    }
  }
  return out;
}

Tensor reduce_sum(const Tensor& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis, "reduce_sum");
  Tensor out(drop_axis(x.shape(), axis));
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t k = 0; k < s.extent; ++k) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        out[o * s.inner + in] += x[(o * s.extent + k) * s.inner + in];
      }
    }
  }
  return out;
}

Tensor l2_norm(const Tensor& x, std::size_t axis, double eps) {
  const AxisSplit s = split_axis(x.shape(), axis, "l2_norm");
  Tensor out(drop_axis(x.shape(), axis));
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      double sq = 0.0;
      for (std::size_t k = 0; k < s.extent; ++k) {
        const double v = x[(o * s.extent + k) * s.inner + in];
        sq += v * v;
      }
      out[o * s.inner + in] = std::sqrt(sq + eps);
    }
  }
  return out;
}

Tensor l2_norm_backward(const Tensor& grad_out, const Tensor& x, const Tensor& norm,
                        std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis, "l2_norm_backward");
  require_same_shape(grad_out, norm, "l2_norm_backward");
  if (norm.size() != s.outer * s.inner) {
    throw ShapeError("l2_norm_backward: norm " + shape_string(norm.shape()) + " for input " +
                     shape_string(x.shape()));
  }
  Tensor out(x.shape());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const double g = grad_out[o * s.inner + in] / norm[o * s.inner + in];
      for (std::size_t k = 0; k < s.extent; ++k) {
        const std::size_t i = (o * s.extent + k) * s.inner + in;
        out[i] = g * x[i];
      }
    }
  }
  return out;
}

std::size_t conv_output_size(std::size_t in, std::size_t kernel, const Conv2dOptions& opt) {
  if (opt.stride == 0) throw std::invalid_argument("conv2d: stride must be positive");
  const std::size_t padded = in + 2 * opt.padding;
  if (kernel > padded) {
    throw ShapeError("conv2d: kernel " + std::to_string(kernel) + " exceeds padded extent " +
                     std::to_string(padded));
  }
  return (padded - kernel) / opt.stride + 1;
}

Tensor conv2d_forward(const Tensor& input, const Tensor& filters, const Tensor& bias,
                      const Conv2dOptions& opt) {
  const ConvGeometry g = conv_geometry(input, filters, opt);
  if (bias.rank() != 1 || bias.dim(0) != g.cout) {
    throw ShapeError("conv2d: bias " + shape_string(bias.shape()) + " for " +
                     std::to_string(g.cout) + " output channels");
  }
  Tensor out({g.n, g.ho, g.wo, g.cout});
  const std::size_t in_stride = g.h * g.w * g.cin;
  const std::size_t out_stride = g.positions() * g.cout;
  ConstMapMat fm(filters.raw(), g.patch(), g.cout);
  Eigen::Map<const Eigen::RowVectorXd> bm(bias.raw(), static_cast<Eigen::Index>(g.cout));
  parallel_for(g.n, [&](std::size_t begin, std::size_t end, std::size_t) {
    std::vector<double> cols(g.positions() * g.patch());
    for (std::size_t n = begin; n < end; ++n) {
      im2col(input.raw() + n * in_stride, g, opt, cols.data());
      MapMat om(out.raw() + n * out_stride, g.positions(), g.cout);
      om.noalias() = ConstMapMat(cols.data(), g.positions(), g.patch()) * fm;
      om.rowwise() += bm;
    }
  });
  return out;
}

Conv2dGrads conv2d_backward(const Tensor& grad_out, const Tensor& input, const Tensor& filters,
                            const Conv2dOptions& opt, bool want_input) {
  const ConvGeometry g = conv_geometry(input, filters, opt);
  const Shape expected{g.n, g.ho, g.wo, g.cout};
  if (grad_out.shape() != expected) {
    throw ShapeError("conv2d_backward: grad_out " + shape_string(grad_out.shape()) +
                     " but forward output is " + shape_string(expected));
  }
  Conv2dGrads grads{want_input ? Tensor(input.shape()) : Tensor(), Tensor(filters.shape()), Tensor({g.cout})};
  const std::size_t in_stride = g.h * g.w * g.cin;
  const std::size_t out_stride = g.positions() * g.cout;
  ConstMapMat fm(filters.raw(), g.patch(), g.cout);

  const std::size_t workers = worker_count(g.n);
  std::vector<RowMat> part_filters(workers, RowMat::Zero(g.patch(), g.cout));
  std::vector<Eigen::RowVectorXd> part_bias(workers, Eigen::RowVectorXd::Zero(g.cout));
  parallel_for(g.n, [&](std::size_t begin, std::size_t end, std::size_t worker) {
    std::vector<double> cols(g.positions() * g.patch());
    std::vector<double> gcols(g.positions() * g.patch());
    for (std::size_t n = begin; n < end; ++n) {
      im2col(input.raw() + n * in_stride, g, opt, cols.data());
      ConstMapMat go(grad_out.raw() + n * out_stride, g.positions(), g.cout);
      ConstMapMat cm(cols.data(), g.positions(), g.patch());
      part_filters[worker].noalias() += cm.transpose() * go;
      part_bias[worker] += go.colwise().sum();
      if (!want_input) continue;
      MapMat(gcols.data(), g.positions(), g.patch()).noalias() = go * fm.transpose();
      col2im_add(gcols.data(), g, opt, grads.input.raw() + n * in_stride);
    }
  });
  MapMat gf(grads.filters.raw(), g.patch(), g.cout);
  Eigen::Map<Eigen::RowVectorXd> gb(grads.bias.raw(), static_cast<Eigen::Index>(g.cout));
  for (std::size_t w = 0; w < workers; ++w) {
    gf += part_filters[w];
    gb += part_bias[w];
  }
  return grads;
}

DropoutResult dropout_forward(const Tensor& input, double rate, std::uint64_t seed, bool training,
                              std::size_t first_sample) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw std::invalid_argument("dropout: rate must be in [0, 1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) return {input, Tensor(input.shape(), 1.0)};
  const double keep_scale = 1.0 / (1.0 - rate);
  const std::size_t samples = input.rank() > 1 ? input.dim(0) : 1;
  const std::size_t per = input.size() / samples;
  DropoutResult r{Tensor(input.shape()), Tensor(input.shape())};
  for (std::size_t n = 0; n < samples; ++n) {
    Rng rng(seed, first_sample + n);
    for (std::size_t i = n * per; i < (n + 1) * per; ++i) {
      const double m = rng.uniform() < rate ? 0.0 : keep_scale;
      r.mask[i] = m;
      r.output[i] = input[i] * m;
    }
  }
  return r;
}

Tensor dropout_backward(const Tensor& grad_out, const Tensor& mask) {
  require_same_shape(grad_out, mask, "dropout_backward");
  Tensor out(mask.shape());
  for (std::size_t i = 0; i < mask.size(); ++i) out[i] = grad_out[i] * mask[i];
  return out;
}

}  // namespace capsnet::ops
