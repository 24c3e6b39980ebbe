#include "rslab/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>

#include "rslab/gemm.hpp"
#include "rslab/threads.hpp"

namespace rslab {

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

NodePtr make_node(Shape shape) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value.assign(static_cast<std::size_t>(shape_size(n->shape)), 0.0);
  return n;
}

void finish(const char* op, const NodePtr& n) {
  if (!debug_checks_enabled()) return;
  for (double v : n->value) {
    if (!std::isfinite(v))
      throw NumericError(std::string("non-finite value produced by op '") + op + "'" +
                         (n->name.empty() ? "" : " (" + n->name + ")"));
  }
}

bool any_grad(std::initializer_list<const Tensor*> ts) {
  for (const Tensor* t : ts)
    if (t->defined() && t->requires_grad()) return true;
  return false;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

// Elementwise binary op with df/da, df/db given the stored output.
template <typename F, typename DA, typename DB>
Tensor binary_elementwise(const char* op, const Tensor& a, const Tensor& b, F f, DA da, DB db) {
  require_same_shape(op, a, b);
  auto n = make_node(a.shape());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = f(av[i], bv[i]);
  if (any_grad({&a, &b})) {
    n->requires_grad = true;
    n->inputs = {a.node(), b.node()};
    n->backward_fn = [da, db](Node& self) {
      Node& na = *self.inputs[0];
      Node& nb = *self.inputs[1];
      if (na.requires_grad) {
        na.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
          na.grad[i] += self.grad[i] * da(na.value[i], nb.value[i]);
      }
      if (nb.requires_grad) {
        nb.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
          nb.grad[i] += self.grad[i] * db(na.value[i], nb.value[i]);
      }
    };
  }
  finish(op, n);
  return Tensor(n);
}

// Elementwise unary op; dydx receives (x, y).
template <typename F, typename D>
Tensor unary_elementwise(const char* op, const Tensor& a, F f, D dydx) {
  auto n = make_node(a.shape());
  const auto av = a.values();
  for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = f(av[i]);
  if (a.requires_grad()) {
    n->requires_grad = true;
    n->inputs = {a.node()};
    n->backward_fn = [dydx](Node& self) {
      Node& na = *self.inputs[0];
      na.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        na.grad[i] += self.grad[i] * dydx(na.value[i], self.value[i]);
    };
  }
  finish(op, n);
  return Tensor(n);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor scale(const Tensor& a, double c) {
  return unary_elementwise(
      "scale", a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Tensor relu(const Tensor& a) {
  return unary_elementwise(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_elementwise(
      "sigmoid", a,
      [](double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh_act(const Tensor& a) {
  return unary_elementwise(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor add_bias(const Tensor& x, const Tensor& b) {
  if (b.rank() != 1) throw DimensionError("add_bias: bias must be rank 1");
  const int n_cols = b.dim(0);
  if (x.dim(x.rank() - 1) != n_cols)
    throw DimensionError("add_bias: trailing dim " + std::to_string(x.dim(x.rank() - 1)) +
                         " vs bias " + std::to_string(n_cols));
  auto n = make_node(x.shape());
  const auto xv = x.values();
  const auto bv = b.values();
  const std::int64_t rows = x.size() / n_cols;
  for (std::int64_t r = 0; r < rows; ++r)
    for (int j = 0; j < n_cols; ++j) n->value[r * n_cols + j] = xv[r * n_cols + j] + bv[j];
  if (any_grad({&x, &b})) {
    n->requires_grad = true;
    n->inputs = {x.node(), b.node()};
    n->backward_fn = [rows, n_cols](Node& self) {
      Node& nx = *self.inputs[0];
      Node& nb = *self.inputs[1];
      if (nx.requires_grad) {
        nx.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) nx.grad[i] += self.grad[i];
      }
      if (nb.requires_grad) {
        nb.ensure_grad();
        for (std::int64_t r = 0; r < rows; ++r)
          for (int j = 0; j < n_cols; ++j) nb.grad[j] += self.grad[r * n_cols + j];
      }
    };
  }
  finish("add_bias", n);
  return Tensor(n);
}

Tensor sum_all(const Tensor& a) {
  auto n = make_node({1});
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  n->value[0] = acc;
  if (a.requires_grad()) {
    n->requires_grad = true;
    n->inputs = {a.node()};
    n->backward_fn = [](Node& self) {
      Node& na = *self.inputs[0];
      na.ensure_grad();
      for (double& g : na.grad) g += self.grad[0];
    };
  }
  finish("sum_all", n);
  return Tensor(n);
}

Tensor weighted_sum(const Tensor& x, const std::vector<double>& w) {
  if (static_cast<std::int64_t>(w.size()) != x.size())
    throw DimensionError("weighted_sum: weight count mismatch");
  auto n = make_node({1});
  double acc = 0.0;
  const auto xv = x.values();
  for (std::size_t i = 0; i < w.size(); ++i) acc += xv[i] * w[i];
  n->value[0] = acc;
  if (x.requires_grad()) {
    n->requires_grad = true;
    n->inputs = {x.node()};
    n->backward_fn = [w](Node& self) {
      Node& nx = *self.inputs[0];
      nx.ensure_grad();
      for (std::size_t i = 0; i < w.size(); ++i) nx.grad[i] += self.grad[0] * w[i];
    };
  }
  finish("weighted_sum", n);
  return Tensor(n);
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  if (a.rank() != b.rank() || a.rank() < 1 || a.rank() > 2)
    throw DimensionError("concat_cols: expects matching rank-1 or rank-2 tensors");
  const bool batched = a.rank() == 2;
  const int rows = batched ? a.dim(0) : 1;
  if (batched && b.dim(0) != rows) throw DimensionError("concat_cols: row mismatch");
  const int n1 = a.dim(a.rank() - 1), n2 = b.dim(b.rank() - 1);
  Shape out_shape = batched ? Shape{rows, n1 + n2} : Shape{n1 + n2};
  auto n = make_node(out_shape);
  const auto av = a.values();
  const auto bv = b.values();
  for (int r = 0; r < rows; ++r) {
    std::memcpy(&n->value[static_cast<std::size_t>(r) * (n1 + n2)], &av[static_cast<std::size_t>(r) * n1],
                static_cast<std::size_t>(n1) * sizeof(double));
    std::memcpy(&n->value[static_cast<std::size_t>(r) * (n1 + n2) + n1],
                &bv[static_cast<std::size_t>(r) * n2], static_cast<std::size_t>(n2) * sizeof(double));
  }
  if (any_grad({&a, &b})) {
    n->requires_grad = true;
    n->inputs = {a.node(), b.node()};
    n->backward_fn = [rows, n1, n2](Node& self) {
      Node& na = *self.inputs[0];
      Node& nb = *self.inputs[1];
      for (int r = 0; r < rows; ++r) {
        const double* g = &self.grad[static_cast<std::size_t>(r) * (n1 + n2)];
        if (na.requires_grad) {
          na.ensure_grad();
          for (int j = 0; j < n1; ++j) na.grad[static_cast<std::size_t>(r) * n1 + j] += g[j];
        }
        if (nb.requires_grad) {
          nb.ensure_grad();
          for (int j = 0; j < n2; ++j) nb.grad[static_cast<std::size_t>(r) * n2 + j] += g[n1 + j];
        }
      }
    };
  }
  finish("concat_cols", n);
  return Tensor(n);
}

Tensor slice_cols(const Tensor& x, int lo, int hi) {
  if (x.rank() < 1 || x.rank() > 2) throw DimensionError("slice_cols: rank-1 or rank-2 only");
  const bool batched = x.rank() == 2;
  const int rows = batched ? x.dim(0) : 1;
  const int cols = x.dim(x.rank() - 1);
  if (lo < 0 || hi > cols || lo >= hi) throw DimensionError("slice_cols: bad range");
  const int w = hi - lo;
  auto n = make_node(batched ? Shape{rows, w} : Shape{w});
  const auto xv = x.values();
  for (int r = 0; r < rows; ++r)
    std::memcpy(&n->value[static_cast<std::size_t>(r) * w],
                &xv[static_cast<std::size_t>(r) * cols + lo], static_cast<std::size_t>(w) * sizeof(double));
  if (x.requires_grad()) {
    n->requires_grad = true;
    n->inputs = {x.node()};
    n->backward_fn = [rows, cols, lo, w](Node& self) {
      Node& nx = *self.inputs[0];
      nx.ensure_grad();
      for (int r = 0; r < rows; ++r)
        for (int j = 0; j < w; ++j)
          nx.grad[static_cast<std::size_t>(r) * cols + lo + j] +=
              self.grad[static_cast<std::size_t>(r) * w + j];
    };
  }
  return Tensor(n);
}

Tensor reshape(const Tensor& x, const Shape& shape) {
  if (shape_size(shape) != x.size())
    throw DimensionError("reshape: size mismatch " + shape_str(x.shape()) + " -> " + shape_str(shape));
  auto n = make_node(shape);
  const auto xv = x.values();
  std::copy(xv.begin(), xv.end(), n->value.begin());
  if (x.requires_grad()) {
    n->requires_grad = true;
    n->inputs = {x.node()};
    n->backward_fn = [](Node& self) {
      Node& nx = *self.inputs[0];
      nx.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) nx.grad[i] += self.grad[i];
    };
  }
  return Tensor(n);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw DimensionError("matmul: expects rank-2 operands, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  const std::int64_t m = a.dim(0), k = a.dim(1), n_cols = b.dim(1);
  if (b.dim(0) != k)
    throw DimensionError("matmul: inner dims differ, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  auto n = make_node({static_cast<int>(m), static_cast<int>(n_cols)});
  detail::gemm_nn(a.values().data(), b.values().data(), n->value.data(), m, k, n_cols, false);
  if (any_grad({&a, &b})) {
    n->requires_grad = true;
    n->inputs = {a.node(), b.node()};
    n->backward_fn = [m, k, n_cols](Node& self) {
      Node& na = *self.inputs[0];
      Node& nb = *self.inputs[1];
      if (na.requires_grad) {
        na.ensure_grad();
        detail::gemm_nt(self.grad.data(), nb.value.data(), na.grad.data(), m, n_cols, k, true);
      }
      if (nb.requires_grad) {
        nb.ensure_grad();
        detail::gemm_tn(na.value.data(), self.grad.data(), nb.grad.data(), k, m, n_cols, true);
      }
    };
  }
  finish("matmul", n);
  return Tensor(n);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  if (w.rank() != 2) throw DimensionError("linear: weight must be rank 2 [out,in]");
  const bool batched = x.rank() == 2;
  if (!batched && x.rank() != 1) throw DimensionError("linear: input must be rank 1 or 2");
  const std::int64_t b_n = batched ? x.dim(0) : 1;
  const std::int64_t in = x.dim(x.rank() - 1);
  const std::int64_t out = w.dim(0);
  if (w.dim(1) != in)
    throw DimensionError("linear: input dim " + std::to_string(in) + " vs weight " +
                         shape_str(w.shape()));
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out))
    throw DimensionError("linear: bias shape mismatch");
  auto n = make_node(batched ? Shape{static_cast<int>(b_n), static_cast<int>(out)}
                             : Shape{static_cast<int>(out)});
  detail::gemm_nt(x.values().data(), w.values().data(), n->value.data(), b_n, in, out, false);
  if (bias.defined()) {
    const auto bv = bias.values();
    for (std::int64_t r = 0; r < b_n; ++r)
      for (std::int64_t j = 0; j < out; ++j) n->value[r * out + j] += bv[j];
  }
  const Tensor* maybe_bias = bias.defined() ? &bias : nullptr;
  if (any_grad({&x, &w}) || (maybe_bias && maybe_bias->requires_grad())) {
    n->requires_grad = true;
    n->inputs = {x.node(), w.node()};
    if (bias.defined()) n->inputs.push_back(bias.node());
    n->backward_fn = [b_n, in, out](Node& self) {
      Node& nx = *self.inputs[0];
      Node& nw = *self.inputs[1];
      if (nx.requires_grad) {
        nx.ensure_grad();
        detail::gemm_nn(self.grad.data(), nw.value.data(), nx.grad.data(), b_n, out, in, true);
      }
      if (nw.requires_grad) {
        nw.ensure_grad();
        detail::gemm_tn(self.grad.data(), nx.value.data(), nw.grad.data(), out, b_n, in, true);
      }
      if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
        Node& nb = *self.inputs[2];
        nb.ensure_grad();
        for (std::int64_t r = 0; r < b_n; ++r)
          for (std::int64_t j = 0; j < out; ++j) nb.grad[j] += self.grad[r * out + j];
      }
    };
  }
  finish("linear", n);
  return Tensor(n);
}

namespace {

struct ConvDims {
  std::int64_t b, ci, h, w, co, kh, kw, ho, wo;
  bool batched;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int pad) {
  ConvDims d{};
  d.batched = x.rank() == 4;
  if (!d.batched && x.rank() != 3) throw DimensionError("conv2d: input must be [C,H,W] or [B,C,H,W]");
  if (w.rank() != 4) throw DimensionError("conv2d: kernel must be [Cout,Cin,kh,kw]");
  d.b = d.batched ? x.dim(0) : 1;
  d.ci = x.dim(d.batched ? 1 : 0);
  d.h = x.dim(d.batched ? 2 : 1);
  d.w = x.dim(d.batched ? 3 : 2);
  d.co = w.dim(0);
  d.kh = w.dim(2);
  d.kw = w.dim(3);
  if (w.dim(1) != d.ci)
    throw DimensionError("conv2d: channel mismatch, input C=" + std::to_string(d.ci) + " kernel " +
                         shape_str(w.shape()));
  if (stride < 1) throw DimensionError("conv2d: stride must be >= 1");
  d.ho = (d.h + 2 * pad - d.kh) / stride + 1;
  d.wo = (d.w + 2 * pad - d.kw) / stride + 1;
  if (d.h + 2 * pad < d.kh || d.w + 2 * pad < d.kw)
    throw InputError("conv2d: input smaller than one receptive field");
  return d;
}

// colT layout: [K = Ci*kh*kw, P = Ho*Wo] for one image.
void im2col(const double* img, const ConvDims& d, int stride, int pad, double* colT) {
  const std::int64_t p_total = d.ho * d.wo;
  std::int64_t krow = 0;
  for (std::int64_t ci = 0; ci < d.ci; ++ci) {
    const double* chan = img + ci * d.h * d.w;
    for (std::int64_t u = 0; u < d.kh; ++u) {
      for (std::int64_t v = 0; v < d.kw; ++v, ++krow) {
        double* dst = colT + krow * p_total;
        for (std::int64_t y = 0; y < d.ho; ++y) {
          const std::int64_t iy = y * stride + u - pad;
          for (std::int64_t x = 0; x < d.wo; ++x) {
            const std::int64_t ix = x * stride + v - pad;
            dst[y * d.wo + x] =
                (iy >= 0 && iy < d.h && ix >= 0 && ix < d.w) ? chan[iy * d.w + ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* colT, const ConvDims& d, int stride, int pad, double* img_grad) {
  const std::int64_t p_total = d.ho * d.wo;
  std::int64_t krow = 0;
  for (std::int64_t ci = 0; ci < d.ci; ++ci) {
    double* chan = img_grad + ci * d.h * d.w;
    for (std::int64_t u = 0; u < d.kh; ++u) {
      for (std::int64_t v = 0; v < d.kw; ++v, ++krow) {
        const double* src = colT + krow * p_total;
        for (std::int64_t y = 0; y < d.ho; ++y) {
          const std::int64_t iy = y * stride + u - pad;
          if (iy < 0 || iy >= d.h) continue;
          for (std::int64_t x = 0; x < d.wo; ++x) {
            const std::int64_t ix = x * stride + v - pad;
            if (ix >= 0 && ix < d.w) chan[iy * d.w + ix] += src[y * d.wo + x];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad) {
  const ConvDims d = conv_dims(x, w, stride, pad);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != d.co))
    throw DimensionError("conv2d: bias shape mismatch");
  Shape out_shape = d.batched
                        ? Shape{static_cast<int>(d.b), static_cast<int>(d.co), static_cast<int>(d.ho),
                                static_cast<int>(d.wo)}
                        : Shape{static_cast<int>(d.co), static_cast<int>(d.ho), static_cast<int>(d.wo)};
  auto n = make_node(out_shape);

  const std::int64_t k_total = d.ci * d.kh * d.kw;
  const std::int64_t p_total = d.ho * d.wo;
  const bool rg = any_grad({&x, &w, &bias});
  // im2col buffers are kept for the backward pass when gradients are needed.
  auto cols = std::make_shared<std::vector<double>>(
      static_cast<std::size_t>((rg ? d.b : 1) * k_total * p_total));

  const double* xv = x.values().data();
  const double* wv = w.values().data();
  for (std::int64_t b = 0; b < d.b; ++b) {
    double* colT = cols->data() + (rg ? b : 0) * k_total * p_total;
    im2col(xv + b * d.ci * d.h * d.w, d, stride, pad, colT);
    double* out_b = n->value.data() + b * d.co * p_total;
    detail::gemm_nn(wv, colT, out_b, d.co, k_total, p_total, false);
    if (bias.defined()) {
      const auto bv = bias.values();
      for (std::int64_t co = 0; co < d.co; ++co)
        for (std::int64_t p = 0; p < p_total; ++p) out_b[co * p_total + p] += bv[co];
    }
  }

  if (rg) {
    n->requires_grad = true;
    n->inputs = {x.node(), w.node()};
    if (bias.defined()) n->inputs.push_back(bias.node());
    n->backward_fn = [d, stride, pad, k_total, p_total, cols](Node& self) {
      Node& nx = *self.inputs[0];
      Node& nw = *self.inputs[1];
      std::vector<double> dcol;
      if (nx.requires_grad) {
        nx.ensure_grad();
        dcol.resize(static_cast<std::size_t>(k_total * p_total));
      }
      if (nw.requires_grad) nw.ensure_grad();
      for (std::int64_t b = 0; b < d.b; ++b) {
        const double* dout_b = self.grad.data() + b * d.co * p_total;
        const double* colT = cols->data() + b * k_total * p_total;
        if (nw.requires_grad)
          detail::gemm_nt(dout_b, colT, nw.grad.data(), d.co, p_total, k_total, true);
        if (nx.requires_grad) {
          detail::gemm_tn(nw.value.data(), dout_b, dcol.data(), k_total, d.co, p_total, false);
          col2im_add(dcol.data(), d, stride, pad, nx.grad.data() + b * d.ci * d.h * d.w);
        }
      }
      if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
        Node& nb = *self.inputs[2];
        nb.ensure_grad();
        for (std::int64_t b = 0; b < d.b; ++b)
          for (std::int64_t co = 0; co < d.co; ++co) {
            const double* g = self.grad.data() + (b * d.co + co) * p_total;
            double acc = 0.0;
            for (std::int64_t p = 0; p < p_total; ++p) acc += g[p];
            nb.grad[co] += acc;
          }
      }
    };
  }
  finish("conv2d", n);
  return Tensor(n);
}

Tensor maxpool2x2(const Tensor& x) {
  const bool batched = x.rank() == 4;
  if (!batched && x.rank() != 3) throw DimensionError("maxpool2x2: input must be [C,H,W] or [B,C,H,W]");
  const std::int64_t b = batched ? x.dim(0) : 1;
  const std::int64_t c = x.dim(batched ? 1 : 0);
  const std::int64_t h = x.dim(batched ? 2 : 1);
  const std::int64_t w = x.dim(batched ? 3 : 2);
  if (h % 2 != 0 || w % 2 != 0) throw DimensionError("maxpool2x2: spatial dims must be even");
  const std::int64_t ho = h / 2, wo = w / 2;
  Shape out_shape = batched ? Shape{static_cast<int>(b), static_cast<int>(c), static_cast<int>(ho),
                                    static_cast<int>(wo)}
                            : Shape{static_cast<int>(c), static_cast<int>(ho), static_cast<int>(wo)};
  auto n = make_node(out_shape);
  auto arg = std::make_shared<std::vector<std::int64_t>>(n->value.size());
  const double* xv = x.values().data();
  for (std::int64_t bc = 0; bc < b * c; ++bc) {
    const double* plane = xv + bc * h * w;
    double* out = n->value.data() + bc * ho * wo;
    std::int64_t* am = arg->data() + bc * ho * wo;
    for (std::int64_t y = 0; y < ho; ++y)
      for (std::int64_t xo = 0; xo < wo; ++xo) {
        const std::int64_t base = (2 * y) * w + 2 * xo;
        std::int64_t best = base;
        double bv = plane[base];
        for (std::int64_t dy = 0; dy < 2; ++dy)
          for (std::int64_t dx = 0; dx < 2; ++dx) {
            const std::int64_t idx = base + dy * w + dx;
            if (plane[idx] > bv) {
              bv = plane[idx];
              best = idx;
            }
          }
        out[y * wo + xo] = bv;
        am[y * wo + xo] = bc * h * w + best;
      }
  }
  if (x.requires_grad()) {
    n->requires_grad = true;
    n->inputs = {x.node()};
    n->backward_fn = [arg](Node& self) {
      Node& nx = *self.inputs[0];
      nx.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) nx.grad[(*arg)[i]] += self.grad[i];
    };
  }
  finish("maxpool2x2", n);
  return Tensor(n);
}

Tensor softmax(const Tensor& x, int axis) {
  if (axis < 0 || axis >= x.rank()) throw DimensionError("softmax: axis out of range");
  std::int64_t outer = 1, inner = 1;
  const std::int64_t n_axis = x.dim(axis);
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);
  for (int i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  auto n = make_node(x.shape());
  const double* xv = x.values().data();
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t in = 0; in < inner; ++in) {
      const std::int64_t base = o * n_axis * inner + in;
      double mx = xv[base];
      for (std::int64_t a = 1; a < n_axis; ++a) mx = std::max(mx, xv[base + a * inner]);
      double denom = 0.0;
      for (std::int64_t a = 0; a < n_axis; ++a) {
        const double e = std::exp(xv[base + a * inner] - mx);
        n->value[base + a * inner] = e;
        denom += e;
      }
      for (std::int64_t a = 0; a < n_axis; ++a) n->value[base + a * inner] /= denom;
    }
  if (x.requires_grad()) {
    n->requires_grad = true;
    n->inputs = {x.node()};
    n->backward_fn = [outer, n_axis, inner](Node& self) {
      Node& nx = *self.inputs[0];
      nx.ensure_grad();
      for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t in = 0; in < inner; ++in) {
          const std::int64_t base = o * n_axis * inner + in;
          double dot = 0.0;
          for (std::int64_t a = 0; a < n_axis; ++a)
            dot += self.grad[base + a * inner] * self.value[base + a * inner];
          for (std::int64_t a = 0; a < n_axis; ++a) {
            const std::int64_t i = base + a * inner;
            nx.grad[i] += self.value[i] * (self.grad[i] - dot);
          }
        }
    };
  }
  finish("softmax", n);
  return Tensor(n);
}

LstmOut lstm_cell(const Tensor& x, const Tensor& h, const Tensor& c, const Tensor& w_ih,
                  const Tensor& w_hh, const Tensor& b) {
  const bool batched = x.rank() == 2;
  if (!batched && x.rank() != 1) throw DimensionError("lstm_cell: x must be rank 1 or 2");
  if (h.rank() != x.rank() || c.rank() != x.rank())
    throw DimensionError("lstm_cell: state rank must match input rank");
  const std::int64_t bn = batched ? x.dim(0) : 1;
  const std::int64_t in_dim = x.dim(x.rank() - 1);
  const std::int64_t hid = h.dim(h.rank() - 1);
  if (batched && (h.dim(0) != bn || c.dim(0) != bn)) throw DimensionError("lstm_cell: batch mismatch");
  if (c.dim(c.rank() - 1) != hid) throw DimensionError("lstm_cell: c dim mismatch");
  if (w_ih.rank() != 2 || w_ih.dim(0) != 4 * hid || w_ih.dim(1) != in_dim)
    throw DimensionError("lstm_cell: w_ih must be [4H,in], got " + shape_str(w_ih.shape()));
  if (w_hh.rank() != 2 || w_hh.dim(0) != 4 * hid || w_hh.dim(1) != hid)
    throw DimensionError("lstm_cell: w_hh must be [4H,H], got " + shape_str(w_hh.shape()));
  if (b.rank() != 1 || b.dim(0) != 4 * hid) throw DimensionError("lstm_cell: bias must be [4H]");

  // Pre-activations, then in-place gate nonlinearities (order i,f,g,o).
  auto acts = std::make_shared<std::vector<double>>(static_cast<std::size_t>(bn * 4 * hid));
  detail::gemm_nt(x.values().data(), w_ih.values().data(), acts->data(), bn, in_dim, 4 * hid, false);
  detail::gemm_nt(h.values().data(), w_hh.values().data(), acts->data(), bn, hid, 4 * hid, true);
  const auto bv = b.values();
  for (std::int64_t r = 0; r < bn; ++r)
    for (std::int64_t j = 0; j < 4 * hid; ++j) (*acts)[r * 4 * hid + j] += bv[j];
  auto sig = [](double v) {
    return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  };
  for (std::int64_t r = 0; r < bn; ++r) {
    double* g = acts->data() + r * 4 * hid;
    for (std::int64_t j = 0; j < hid; ++j) g[j] = sig(g[j]);
    for (std::int64_t j = hid; j < 2 * hid; ++j) g[j] = sig(g[j]);
    for (std::int64_t j = 2 * hid; j < 3 * hid; ++j) g[j] = std::tanh(g[j]);
    for (std::int64_t j = 3 * hid; j < 4 * hid; ++j) g[j] = sig(g[j]);
  }

  // Output node packs [h' | c'] along the last axis.
  auto n = make_node(batched ? Shape{static_cast<int>(bn), static_cast<int>(2 * hid)}
                             : Shape{static_cast<int>(2 * hid)});
  auto tanh_c = std::make_shared<std::vector<double>>(static_cast<std::size_t>(bn * hid));
  const double* cv = c.values().data();
  for (std::int64_t r = 0; r < bn; ++r) {
    const double* g = acts->data() + r * 4 * hid;
    double* out = n->value.data() + r * 2 * hid;
    for (std::int64_t j = 0; j < hid; ++j) {
      const double c_new = g[hid + j] * cv[r * hid + j] + g[j] * g[2 * hid + j];
      const double tc = std::tanh(c_new);
      (*tanh_c)[r * hid + j] = tc;
      out[j] = g[3 * hid + j] * tc;
      out[hid + j] = c_new;
    }
  }

  if (any_grad({&x, &h, &c, &w_ih, &w_hh, &b})) {
    n->requires_grad = true;
    n->inputs = {x.node(), h.node(), c.node(), w_ih.node(), w_hh.node(), b.node()};
    n->backward_fn = [bn, in_dim, hid, acts, tanh_c](Node& self) {
      Node& nx = *self.inputs[0];
      Node& nh = *self.inputs[1];
      Node& nc = *self.inputs[2];
      Node& nwih = *self.inputs[3];
      Node& nwhh = *self.inputs[4];
      Node& nb = *self.inputs[5];
      std::vector<double> dgates(static_cast<std::size_t>(bn * 4 * hid));
      for (std::int64_t r = 0; r < bn; ++r) {
        const double* g = acts->data() + r * 4 * hid;
        const double* go = self.grad.data() + r * 2 * hid;  // [dh' | dc']
        double* dg = dgates.data() + r * 4 * hid;
        for (std::int64_t j = 0; j < hid; ++j) {
          const double i_g = g[j], f_g = g[hid + j], g_g = g[2 * hid + j], o_g = g[3 * hid + j];
          const double tc = (*tanh_c)[r * hid + j];
          const double dh = go[j];
          const double dct = go[hid + j] + dh * o_g * (1.0 - tc * tc);
          dg[j] = dct * g_g * i_g * (1.0 - i_g);
          dg[hid + j] = dct * nc.value[r * hid + j] * f_g * (1.0 - f_g);
          dg[2 * hid + j] = dct * i_g * (1.0 - g_g * g_g);
          dg[3 * hid + j] = dh * tc * o_g * (1.0 - o_g);
          if (nc.requires_grad) {
            nc.ensure_grad();
            nc.grad[r * hid + j] += dct * f_g;
          }
        }
      }
      if (nx.requires_grad) {
        nx.ensure_grad();
        detail::gemm_nn(dgates.data(), nwih.value.data(), nx.grad.data(), bn, 4 * hid, in_dim, true);
      }
      if (nh.requires_grad) {
        nh.ensure_grad();
        detail::gemm_nn(dgates.data(), nwhh.value.data(), nh.grad.data(), bn, 4 * hid, hid, true);
      }
      if (nwih.requires_grad) {
        nwih.ensure_grad();
        detail::gemm_tn(dgates.data(), nx.value.data(), nwih.grad.data(), 4 * hid, bn, in_dim, true);
      }
      if (nwhh.requires_grad) {
        nwhh.ensure_grad();
        detail::gemm_tn(dgates.data(), nh.value.data(), nwhh.grad.data(), 4 * hid, bn, hid, true);
      }
      if (nb.requires_grad) {
        nb.ensure_grad();
        for (std::int64_t r = 0; r < bn; ++r)
          for (std::int64_t j = 0; j < 4 * hid; ++j) nb.grad[j] += dgates[r * 4 * hid + j];
      }
    };
  }
  finish("lstm_cell", n);
  Tensor packed(n);
  const int hid_i = static_cast<int>(hid);
  return {slice_cols(packed, 0, hid_i), slice_cols(packed, hid_i, 2 * hid_i)};
}

Tensor embedding(const Tensor& table, const std::vector<int>& ids) {
  if (table.rank() != 2) throw DimensionError("embedding: table must be [V,D]");
  const int v = table.dim(0), d = table.dim(1);
  for (int id : ids)
    if (id < 0 || id >= v)
      throw InputError("embedding: id " + std::to_string(id) + " outside table of " + std::to_string(v));
  auto n = make_node({static_cast<int>(ids.size()), d});
  const auto tv = table.values();
  for (std::size_t r = 0; r < ids.size(); ++r)
    std::memcpy(&n->value[r * d], &tv[static_cast<std::size_t>(ids[r]) * d],
                static_cast<std::size_t>(d) * sizeof(double));
  if (table.requires_grad()) {
    n->requires_grad = true;
    n->inputs = {table.node()};
    n->backward_fn = [ids, d](Node& self) {
      Node& nt = *self.inputs[0];
      nt.ensure_grad();
      for (std::size_t r = 0; r < ids.size(); ++r)
        for (int j = 0; j < d; ++j)
          nt.grad[static_cast<std::size_t>(ids[r]) * d + j] += self.grad[r * d + j];
    };
  }
  return Tensor(n);
}

Tensor embedding_row(const Tensor& table, int id) {
  Tensor rows = embedding(table, {id});
  return reshape(rows, {table.dim(1)});
}

namespace {

struct AttnDims {
  std::int64_t b, d, hw;
  bool batched;
};

AttnDims attn_dims(const Tensor& vec, const Tensor& map, const char* op) {
  AttnDims a{};
  a.batched = map.rank() == 4;
  if (!a.batched && map.rank() != 3)
    throw DimensionError(std::string(op) + ": map must be [D,H,W] or [B,D,H,W]");
  if (vec.rank() != (a.batched ? 2 : 1))
    throw DimensionError(std::string(op) + ": vector rank must match map batching");
  a.b = a.batched ? map.dim(0) : 1;
  a.d = map.dim(a.batched ? 1 : 0);
  a.hw = static_cast<std::int64_t>(map.dim(a.batched ? 2 : 1)) * map.dim(a.batched ? 3 : 2);
  if (a.batched && vec.dim(0) != a.b) throw DimensionError(std::string(op) + ": batch mismatch");
  return a;
}

}  // namespace

Tensor attention_scores(const Tensor& query, const Tensor& keys) {
  const AttnDims a = attn_dims(query, keys, "attention_scores");
  if (query.dim(query.rank() - 1) != a.d)
    throw DimensionError("attention_scores: query dim " + std::to_string(query.dim(query.rank() - 1)) +
                         " vs key channels " + std::to_string(a.d));
  auto n = make_node(a.batched ? Shape{static_cast<int>(a.b), static_cast<int>(a.hw)}
                               : Shape{static_cast<int>(a.hw)});
  const double* qv = query.values().data();
  const double* kv = keys.values().data();
  for (std::int64_t b = 0; b < a.b; ++b) {
    double* s = n->value.data() + b * a.hw;
    for (std::int64_t c = 0; c < a.d; ++c) {
      const double q = qv[b * a.d + c];
      if (q == 0.0) continue;
      const double* k = kv + (b * a.d + c) * a.hw;
      for (std::int64_t p = 0; p < a.hw; ++p) s[p] += q * k[p];
    }
  }
  if (any_grad({&query, &keys})) {
    n->requires_grad = true;
    n->inputs = {query.node(), keys.node()};
    n->backward_fn = [a](Node& self) {
      Node& nq = *self.inputs[0];
      Node& nk = *self.inputs[1];
      if (nq.requires_grad) nq.ensure_grad();
      if (nk.requires_grad) nk.ensure_grad();
      for (std::int64_t b = 0; b < a.b; ++b) {
        const double* ds = self.grad.data() + b * a.hw;
        for (std::int64_t c = 0; c < a.d; ++c) {
          const double* k = nk.value.data() + (b * a.d + c) * a.hw;
          if (nq.requires_grad) {
            double acc = 0.0;
            for (std::int64_t p = 0; p < a.hw; ++p) acc += ds[p] * k[p];
            nq.grad[b * a.d + c] += acc;
          }
          if (nk.requires_grad) {
            const double q = nq.value[b * a.d + c];
            double* dk = nk.grad.data() + (b * a.d + c) * a.hw;
            for (std::int64_t p = 0; p < a.hw; ++p) dk[p] += ds[p] * q;
          }
        }
      }
    };
  }
  finish("attention_scores", n);
  return Tensor(n);
}

Tensor attention_aggregate(const Tensor& alpha, const Tensor& values) {
  const AttnDims a = attn_dims(alpha, values, "attention_aggregate");
  if (alpha.dim(alpha.rank() - 1) != a.hw)
    throw DimensionError("attention_aggregate: alpha cells " +
                         std::to_string(alpha.dim(alpha.rank() - 1)) + " vs map cells " +
                         std::to_string(a.hw));
  auto n = make_node(a.batched ? Shape{static_cast<int>(a.b), static_cast<int>(a.d)}
                               : Shape{static_cast<int>(a.d)});
  const double* av = alpha.values().data();
  const double* vv = values.values().data();
  for (std::int64_t b = 0; b < a.b; ++b) {
    const double* al = av + b * a.hw;
    for (std::int64_t c = 0; c < a.d; ++c) {
      const double* v = vv + (b * a.d + c) * a.hw;
      double acc = 0.0;
      for (std::int64_t p = 0; p < a.hw; ++p) acc += al[p] * v[p];
      n->value[b * a.d + c] = acc;
    }
  }
  if (any_grad({&alpha, &values})) {
    n->requires_grad = true;
    n->inputs = {alpha.node(), values.node()};
    n->backward_fn = [a](Node& self) {
      Node& na = *self.inputs[0];
      Node& nv = *self.inputs[1];
      if (na.requires_grad) na.ensure_grad();
      if (nv.requires_grad) nv.ensure_grad();
      for (std::int64_t b = 0; b < a.b; ++b) {
        const double* dg = self.grad.data() + b * a.d;
        for (std::int64_t c = 0; c < a.d; ++c) {
          const double g = dg[c];
          if (g == 0.0) continue;
          const double* v = nv.value.data() + (b * a.d + c) * a.hw;
          if (na.requires_grad) {
            double* da = na.grad.data() + b * a.hw;
            for (std::int64_t p = 0; p < a.hw; ++p) da[p] += g * v[p];
          }
          if (nv.requires_grad) {
            const double* al = na.value.data() + b * a.hw;
            double* dv = nv.grad.data() + (b * a.d + c) * a.hw;
            for (std::int64_t p = 0; p < a.hw; ++p) dv[p] += g * al[p];
          }
        }
      }
    };
  }
  finish("attention_aggregate", n);
  return Tensor(n);
}

Tensor append_const_channels(const Tensor& x, const std::vector<double>& extra, int c2) {
  if (x.rank() != 4) throw DimensionError("append_const_channels: input must be [B,C,H,W]");
  const std::int64_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (static_cast<std::int64_t>(extra.size()) != c2 * h * w)
    throw DimensionError("append_const_channels: extra block size mismatch");
  auto n = make_node({static_cast<int>(b), static_cast<int>(c + c2), static_cast<int>(h),
                      static_cast<int>(w)});
  const double* xv = x.values().data();
  const std::int64_t plane = h * w;
  for (std::int64_t bi = 0; bi < b; ++bi) {
    std::memcpy(n->value.data() + bi * (c + c2) * plane, xv + bi * c * plane,
                static_cast<std::size_t>(c * plane) * sizeof(double));
    std::memcpy(n->value.data() + bi * (c + c2) * plane + c * plane, extra.data(),
                static_cast<std::size_t>(c2) * plane * sizeof(double));
  }
  if (x.requires_grad()) {
    n->requires_grad = true;
    n->inputs = {x.node()};
    n->backward_fn = [b, c, c2, plane](Node& self) {
      Node& nx = *self.inputs[0];
      nx.ensure_grad();
      for (std::int64_t bi = 0; bi < b; ++bi) {
        const double* g = self.grad.data() + bi * (c + c2) * plane;
        double* dst = nx.grad.data() + bi * c * plane;
        for (std::int64_t i = 0; i < c * plane; ++i) dst[i] += g[i];
      }
    };
  }
  finish("append_const_channels", n);
  return Tensor(n);
}

Tensor nll_from_logits(const Tensor& logits, const std::vector<int>& targets) {
  if (logits.rank() != 2) throw DimensionError("nll_from_logits: logits must be [B,K]");
  const std::int64_t b = logits.dim(0), k = logits.dim(1);
  if (static_cast<std::int64_t>(targets.size()) != b)
    throw DimensionError("nll_from_logits: target count mismatch");
  for (int t : targets)
    if (t >= static_cast<int>(k)) throw InputError("nll_from_logits: target id out of range");
  auto n = make_node({static_cast<int>(b)});
  const bool rg = logits.requires_grad();
  auto probs = std::make_shared<std::vector<double>>(rg ? logits.size() : 0);
  const double* lv = logits.values().data();
  for (std::int64_t r = 0; r < b; ++r) {
    const double* row = lv + r * k;
    if (targets[r] < 0) {
      n->value[r] = 0.0;
      if (rg) std::memset(probs->data() + r * k, 0, static_cast<std::size_t>(k) * sizeof(double));
      continue;
    }
    double mx = row[0];
    for (std::int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (std::int64_t j = 0; j < k; ++j) denom += std::exp(row[j] - mx);
    n->value[r] = mx + std::log(denom) - row[targets[r]];
    if (rg)
      for (std::int64_t j = 0; j < k; ++j) (*probs)[r * k + j] = std::exp(row[j] - mx) / denom;
  }
  if (rg) {
    n->requires_grad = true;
    n->inputs = {logits.node()};
    n->backward_fn = [targets, k, probs](Node& self) {
      Node& nl = *self.inputs[0];
      nl.ensure_grad();
      for (std::size_t r = 0; r < targets.size(); ++r) {
        if (targets[r] < 0) continue;
        const double g = self.grad[r];
        for (std::int64_t j = 0; j < k; ++j)
          nl.grad[r * k + j] += g * ((*probs)[r * k + j] - (j == targets[r] ? 1.0 : 0.0));
      }
    };
  }
  finish("nll_from_logits", n);
  return Tensor(n);
}

std::vector<double> softmax_values(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double denom = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    denom += out[i];
  }
  for (double& v : out) v /= denom;
  return out;
}

int argmax_lowest(std::span<const double> v) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i)
    if (v[static_cast<std::size_t>(i)] > v[static_cast<std::size_t>(best)]) best = i;
  return best;
}

}  // namespace rslab
