#include "capsnet/capsule.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "capsnet/ops.hpp"
#include "capsnet/parallel.hpp"

namespace capsnet::capsule {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

constexpr double kEps = ops::kNormEpsilon;

// v = g(n2) * s with g(n2) = n2 / ((1 + n2) * sqrt(n2 + eps))
void squash_vec(const double* s, std::size_t d, double* v) {
  double n2 = 0.0;
  for (std::size_t k = 0; k < d; ++k) n2 += s[k] * s[k];
  const double g = n2 / ((1.0 + n2) * std::sqrt(n2 + kEps));
  for (std::size_t k = 0; k < d; ++k) v[k] = g * s[k];
}

// dv/ds = g I + 2 g'(n2) s s^T, with g' written so it stays finite at n2 = 0.
void squash_vec_backward(const double* s, const double* gv, std::size_t d, double* gs) {
  double n2 = 0.0;
  double dot = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    n2 += s[k] * s[k];
    dot += s[k] * gv[k];
  }
  const double h = 1.0 / ((1.0 + n2) * std::sqrt(n2 + kEps));
  const double g = n2 * h;
  const double dg = h * (1.0 - n2 / (1.0 + n2) - n2 / (2.0 * (n2 + kEps)));
  const double coef = 2.0 * dg * dot;
  for (std::size_t k = 0; k < d; ++k) gs[k] = g * gv[k] + coef * s[k];
}

struct RouteDims {
  std::size_t n, p, j, d;
};

RouteDims route_dims(const Tensor& u_hat) {
  require_rank(u_hat.shape(), 4, "route u_hat [N,P,J,D]");
  return {u_hat.dim(0), u_hat.dim(1), u_hat.dim(2), u_hat.dim(3)};
}

void softmax_rows(const double* logits, std::size_t rows, std::size_t cols, double* out) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* b = logits + r * cols;
    double* c = out + r * cols;
    const double mx = *std::max_element(b, b + cols);
    double total = 0.0;
    for (std::size_t k = 0; k < cols; ++k) {
      c[k] = std::exp(b[k] - mx);
      total += c[k];
    }
    for (std::size_t k = 0; k < cols; ++k) c[k] /= total;
  }
}

}  // namespace

Tensor squash(const Tensor& s) {
  if (s.rank() == 0) throw ShapeError("squash: scalar input");
  const std::size_t d = s.shape().back();
  Tensor v(s.shape());
  for (std::size_t off = 0; off < s.size(); off += d) squash_vec(s.raw() + off, d, v.raw() + off);
  return v;
}

Tensor squash_backward(const Tensor& s, const Tensor& grad_v) {
  require_same_shape(s, grad_v, "squash_backward");
  const std::size_t d = s.shape().back();
  Tensor gs(s.shape());
  for (std::size_t off = 0; off < s.size(); off += d) {
    squash_vec_backward(s.raw() + off, grad_v.raw() + off, d, gs.raw() + off);
  }
  return gs;
}

Tensor predict_vectors(const Tensor& u, const Tensor& weights) {
  require_rank(u.shape(), 3, "predict_vectors u [N,P,dp]");
  require_rank(weights.shape(), 4, "predict_vectors weights [P,J,D,dp]");
  const std::size_t n = u.dim(0), p = u.dim(1), dp = u.dim(2);
  if (weights.dim(0) != p || weights.dim(3) != dp) {
    throw ShapeError("predict_vectors: u " + shape_string(u.shape()) + " does not conform to weights " +
                     shape_string(weights.shape()));
  }
  const std::size_t jd = weights.dim(1) * weights.dim(2);
  Tensor u_hat({n, p, weights.dim(1), weights.dim(2)});
  parallel_for(p, [&](std::size_t begin, std::size_t end, std::size_t) {
    RowMat ui(n, dp);
    RowMat out(n, jd);
    for (std::size_t i = begin; i < end; ++i) {
      for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t m = 0; m < dp; ++m) ui(s, m) = u[(s * p + i) * dp + m];
      }
      ConstMapMat wi(weights.raw() + i * jd * dp, jd, dp);
      out.noalias() = ui * wi.transpose();
      for (std::size_t s = 0; s < n; ++s) {
        std::copy(out.row(s).data(), out.row(s).data() + jd, u_hat.raw() + (s * p + i) * jd);
      }
    }
  });
  return u_hat;
}

PredictGrads predict_vectors_backward(const Tensor& grad_u_hat, const Tensor& u,
                                      const Tensor& weights) {
  require_rank(u.shape(), 3, "predict_vectors_backward u");
  const std::size_t n = u.dim(0), p = u.dim(1), dp = u.dim(2);
  const Shape expected{n, p, weights.dim(1), weights.dim(2)};
  if (grad_u_hat.shape() != expected) {
    throw ShapeError("predict_vectors_backward: grad " + shape_string(grad_u_hat.shape()) +
                     " but u_hat is " + shape_string(expected));
  }
  const std::size_t jd = weights.dim(1) * weights.dim(2);
  PredictGrads g{Tensor(u.shape()), Tensor(weights.shape())};
  parallel_for(p, [&](std::size_t begin, std::size_t end, std::size_t) {
    RowMat ui(n, dp);
    RowMat gi(n, jd);
    RowMat gu(n, dp);
    for (std::size_t i = begin; i < end; ++i) {
      for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t m = 0; m < dp; ++m) ui(s, m) = u[(s * p + i) * dp + m];
        std::copy(grad_u_hat.raw() + (s * p + i) * jd, grad_u_hat.raw() + (s * p + i + 1) * jd,
                  gi.row(s).data());
      }
      ConstMapMat wi(weights.raw() + i * jd * dp, jd, dp);
      MapMat(g.weights.raw() + i * jd * dp, jd, dp).noalias() = gi.transpose() * ui;
      gu.noalias() = gi * wi;
      for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t m = 0; m < dp; ++m) g.u[(s * p + i) * dp + m] = gu(s, m);
      }
    }
  });
  return g;
}

RoutingResult route(const Tensor& u_hat, std::size_t iterations) {
  if (iterations < 1) throw std::invalid_argument("route: iterations must be >= 1");
  const RouteDims dim = route_dims(u_hat);
  RoutingResult result;
  RoutingState& st = result.state;
  st.iterations = iterations;
  for (std::size_t t = 0; t < iterations; ++t) {
    st.logits.emplace_back(Shape{dim.n, dim.p, dim.j});
    st.coupling.emplace_back(Shape{dim.n, dim.p, dim.j});
    st.total.emplace_back(Shape{dim.n, dim.j, dim.d});
    st.output.emplace_back(Shape{dim.n, dim.j, dim.d});
  }
  const std::size_t pj = dim.p * dim.j;
  const std::size_t jd = dim.j * dim.d;
  parallel_for(dim.n, [&](std::size_t begin, std::size_t end, std::size_t) {
    for (std::size_t n = begin; n < end; ++n) {
      const double* uh = u_hat.raw() + n * dim.p * jd;
      for (std::size_t t = 0; t < iterations; ++t) {
        double* b = st.logits[t].raw() + n * pj;
        double* c = st.coupling[t].raw() + n * pj;
        double* s = st.total[t].raw() + n * jd;
        double* v = st.output[t].raw() + n * jd;
        softmax_rows(b, dim.p, dim.j, c);
        for (std::size_t i = 0; i < dim.p; ++i) {
          for (std::size_t j = 0; j < dim.j; ++j) {
            const double cij = c[i * dim.j + j];
            const double* u = uh + (i * dim.j + j) * dim.d;
            double* sj = s + j * dim.d;
            for (std::size_t k = 0; k < dim.d; ++k) sj[k] += cij * u[k];
          }
        }
        for (std::size_t j = 0; j < dim.j; ++j) squash_vec(s + j * dim.d, dim.d, v + j * dim.d);
        if (t + 1 < iterations) {
          double* next = st.logits[t + 1].raw() + n * pj;
          for (std::size_t i = 0; i < dim.p; ++i) {
            for (std::size_t j = 0; j < dim.j; ++j) {
              const double* u = uh + (i * dim.j + j) * dim.d;
              const double* vj = v + j * dim.d;
              double agree = 0.0;
              for (std::size_t k = 0; k < dim.d; ++k) agree += u[k] * vj[k];
              next[i * dim.j + j] = b[i * dim.j + j] + agree;
            }
          }
        }
      }
    }
  });
  result.v = st.output.back();
  return result;
}

Tensor route_backward(const Tensor& u_hat, const RoutingState& state, const Tensor& grad_v) {
  const RouteDims dim = route_dims(u_hat);
  if (state.iterations == 0 || state.coupling.size() != state.iterations) {
    throw std::invalid_argument("route_backward: routing state is missing its caches");
  }
  require_same_shape(grad_v, state.output.back(), "route_backward grad_v");
  const std::size_t pj = dim.p * dim.j;
  const std::size_t jd = dim.j * dim.d;
  Tensor grad_u_hat(u_hat.shape());
  parallel_for(dim.n, [&](std::size_t begin, std::size_t end, std::size_t) {
    std::vector<double> gb(pj);        // dL/d logits of iteration t+1
    std::vector<double> gb_prev(pj);
    std::vector<double> gv(jd);
    std::vector<double> gs(jd);
    std::vector<double> gc(pj);
    for (std::size_t n = begin; n < end; ++n) {
      const double* uh = u_hat.raw() + n * dim.p * jd;
      double* guh = grad_u_hat.raw() + n * dim.p * jd;
      std::fill(gb.begin(), gb.end(), 0.0);
      for (std::size_t tt = state.iterations; tt-- > 0;) {
        const double* c = state.coupling[tt].raw() + n * pj;
        const double* s = state.total[tt].raw() + n * jd;
        const double* v = state.output[tt].raw() + n * jd;
        const bool last = tt + 1 == state.iterations;
        if (last) {
          std::copy(grad_v.raw() + n * jd, grad_v.raw() + (n + 1) * jd, gv.begin());
        } else {
          std::fill(gv.begin(), gv.end(), 0.0);
          // b_{t+1} = b_t + u_hat . v_t
          for (std::size_t i = 0; i < dim.p; ++i) {
            for (std::size_t j = 0; j < dim.j; ++j) {
              const double g = gb[i * dim.j + j];
              if (g == 0.0) continue;
              const double* u = uh + (i * dim.j + j) * dim.d;
              const double* vj = v + j * dim.d;
              double* gu = guh + (i * dim.j + j) * dim.d;
              double* gvj = gv.data() + j * dim.d;
              for (std::size_t k = 0; k < dim.d; ++k) {
                gvj[k] += g * u[k];
                gu[k] += g * vj[k];
              }
            }
          }
        }
        for (std::size_t j = 0; j < dim.j; ++j) {
          squash_vec_backward(s + j * dim.d, gv.data() + j * dim.d, dim.d, gs.data() + j * dim.d);
        }
        // s_j = sum_i c_ij u_hat_ij
        for (std::size_t i = 0; i < dim.p; ++i) {
          for (std::size_t j = 0; j < dim.j; ++j) {
            const double cij = c[i * dim.j + j];
            const double* u = uh + (i * dim.j + j) * dim.d;
            const double* gsj = gs.data() + j * dim.d;
            double* gu = guh + (i * dim.j + j) * dim.d;
            double dot = 0.0;
            for (std::size_t k = 0; k < dim.d; ++k) {
              dot += gsj[k] * u[k];
              gu[k] += cij * gsj[k];
            }
            gc[i * dim.j + j] = dot;
          }
        }
        if (tt == 0) break;  // initial logits are constants
        // c = softmax(b_t); b_t also flows straight into b_{t+1}
        for (std::size_t i = 0; i < dim.p; ++i) {
          const double* ci = c + i * dim.j;
          const double* gci = gc.data() + i * dim.j;
          double dot = 0.0;
          for (std::size_t j = 0; j < dim.j; ++j) dot += ci[j] * gci[j];
          for (std::size_t j = 0; j < dim.j; ++j) {
            gb_prev[i * dim.j + j] = (last ? 0.0 : gb[i * dim.j + j]) + ci[j] * (gci[j] - dot);
          }
        }
        std::swap(gb, gb_prev);
      }
    }
  });
  return grad_u_hat;
}

}  // namespace capsnet::capsule
