#include "topogan/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <unordered_set>
#include <utility>

#include "topogan/error.hpp"

namespace topogan::ad {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool leaf = true;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into the inputs' grads.
  std::function<void(Node&)> backward;

  std::vector<double>& grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

using detail::Node;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

namespace {

thread_local bool g_grad_enabled = true;

}  // namespace

struct OpBuilder {
  static const std::shared_ptr<Node>& node(const Tensor& t) {
    if (!t.node_) throw ContractError("use of an undefined tensor");
    return t.node_;
  }

  static Tensor leaf(Shape shape, std::vector<double> values, bool requires_grad) {
    if (values.size() != numel_of(shape)) {
      throw ShapeError("tensor data has " + std::to_string(values.size()) +
                       " values for shape " + shape_str(shape));
    }
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  // Creates an op result. The backward closure receives the result node and
  // must only touch grads of inputs that require them.
  static Tensor result(Shape shape, std::vector<double> values,
                       std::vector<std::shared_ptr<Node>> inputs,
                       std::function<void(Node&)> backward) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->leaf = false;
    const bool track = g_grad_enabled &&
                       std::any_of(inputs.begin(), inputs.end(),
                                   [](const auto& in) { return in->requires_grad; });
    if (track) {
      n->requires_grad = true;
      n->inputs = std::move(inputs);
      n->backward = std::move(backward);
    }
    return Tensor(std::move(n));
  }
};

std::size_t numel_of(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = numel_of(shape);
  return OpBuilder::leaf(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  return OpBuilder::leaf(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return OpBuilder::leaf({}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return OpBuilder::node(*this)->shape; }

int Tensor::dim(int axis) const {
  const auto& s = shape();
  if (axis < 0 || axis >= static_cast<int>(s.size())) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  return s[axis];
}

int Tensor::ndim() const { return static_cast<int>(shape().size()); }
std::size_t Tensor::numel() const { return OpBuilder::node(*this)->value.size(); }
std::span<const double> Tensor::data() const { return OpBuilder::node(*this)->value; }
std::span<double> Tensor::mutable_data() { return OpBuilder::node(*this)->value; }
std::span<const double> Tensor::grad() const { return OpBuilder::node(*this)->grad; }
std::span<double> Tensor::mutable_grad() { return OpBuilder::node(*this)->grad_buffer(); }

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return data()[0];
}

bool Tensor::requires_grad() const { return OpBuilder::node(*this)->requires_grad; }
bool Tensor::is_leaf() const { return OpBuilder::node(*this)->leaf; }

void Tensor::zero_grad() {
  auto& g = OpBuilder::node(*this)->grad;
  std::fill(g.begin(), g.end(), 0.0);
}

Tensor Tensor::detach() const {
  const auto& n = OpBuilder::node(*this);
  return OpBuilder::leaf(n->shape, n->value, false);
}

void Tensor::backward() const {
  const auto& root = OpBuilder::node(*this);
  if (root->value.size() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + shape_str(root->shape));
  }
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order (inputs first).
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* in = node->inputs[next++].get();
      if (in->requires_grad && seen.insert(in).second) stack.emplace_back(in, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node* n : order) {
    if (!n->leaf) n->grad.assign(n->value.size(), 0.0);
  }
  root->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_mode_enabled() { return g_grad_enabled; }

namespace {

const std::shared_ptr<Node>& N(const Tensor& t) { return OpBuilder::node(t); }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " differ");
  }
}

// Elementwise unary op given f(x) and f'(x, y).
template <typename F, typename DF>
Tensor unary(const Tensor& x, F f, DF df) {
  const auto& in = N(x);
  std::vector<double> out(in->value.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in->value[i]);
  return OpBuilder::result(in->shape, std::move(out), {in}, [df](Node& self) {
    Node& a = *self.inputs[0];
    auto& ga = a.grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * df(a.value[i], self.value[i]);
  });
}

// Lays out conv patches: rows (c, ki, kj), columns (n, oy, ox).
void im2col(std::span<const double> x, int n_batch, int channels, int h, int w, int kh, int kw,
            int stride, int pad, int ho, int wo, RowMat& col) {
  col.setZero(static_cast<Eigen::Index>(channels) * kh * kw,
              static_cast<Eigen::Index>(n_batch) * ho * wo);
  const Eigen::Index plane = static_cast<Eigen::Index>(ho) * wo;
  for (int c = 0; c < channels; ++c) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        double* row = col.row((static_cast<Eigen::Index>(c) * kh + ki) * kw + kj).data();
        for (int n = 0; n < n_batch; ++n) {
          const double* src = x.data() + (static_cast<std::size_t>(n) * channels + c) * h * w;
          double* dst = row + n * plane;
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * stride - pad + ki;
            if (iy < 0 || iy >= h) continue;
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * stride - pad + kj;
              if (ix >= 0 && ix < w) dst[oy * wo + ox] = src[iy * w + ix];
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters patch columns back into an image buffer.
void col2im(const RowMat& col, int n_batch, int channels, int h, int w, int kh, int kw,
            int stride, int pad, int ho, int wo, std::span<double> x) {
  const Eigen::Index plane = static_cast<Eigen::Index>(ho) * wo;
  for (int c = 0; c < channels; ++c) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        const double* row = col.row((static_cast<Eigen::Index>(c) * kh + ki) * kw + kj).data();
        for (int n = 0; n < n_batch; ++n) {
          double* dst = x.data() + (static_cast<std::size_t>(n) * channels + c) * h * w;
          const double* src = row + n * plane;
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * stride - pad + ki;
            if (iy < 0 || iy >= h) continue;
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * stride - pad + kj;
              if (ix >= 0 && ix < w) dst[iy * w + ix] += src[oy * wo + ox];
            }
          }
        }
      }
    }
  }
}

// N x C x P  <->  C x (N P)
RowMat to_channel_major(std::span<const double> x, int n_batch, int channels, int plane) {
  RowMat m(channels, static_cast<Eigen::Index>(n_batch) * plane);
  for (int n = 0; n < n_batch; ++n)
    for (int c = 0; c < channels; ++c)
      std::copy_n(x.data() + (static_cast<std::size_t>(n) * channels + c) * plane, plane,
                  m.row(c).data() + static_cast<Eigen::Index>(n) * plane);
  return m;
}

void from_channel_major(const RowMat& m, int n_batch, int channels, int plane, std::span<double> x,
                        bool accumulate) {
  for (int n = 0; n < n_batch; ++n)
    for (int c = 0; c < channels; ++c) {
      const double* src = m.row(c).data() + static_cast<Eigen::Index>(n) * plane;
      double* dst = x.data() + (static_cast<std::size_t>(n) * channels + c) * plane;
      if (accumulate) {
        for (int p = 0; p < plane; ++p) dst[p] += src[p];
      } else {
        std::copy_n(src, plane, dst);
      }
    }
}

void require_rank(const Tensor& t, int rank, const char* what) {
  if (t.ndim() != rank) {
    throw ShapeError(std::string(what) + " must have rank " + std::to_string(rank) + ", got " +
                     shape_str(t.shape()));
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const auto &na = N(a), &nb = N(b);
  std::vector<double> out(na->value.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = na->value[i] + nb->value[i];
  return OpBuilder::result(na->shape, std::move(out), {na, nb}, [](Node& self) {
    for (auto& in : self.inputs) {
      if (!in->requires_grad) continue;
      auto& g = in->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  const auto &na = N(a), &nb = N(b);
  std::vector<double> out(na->value.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = na->value[i] - nb->value[i];
  return OpBuilder::result(na->shape, std::move(out), {na, nb}, [](Node& self) {
    const double sign[2] = {1.0, -1.0};
    for (int k = 0; k < 2; ++k) {
      if (!self.inputs[k]->requires_grad) continue;
      auto& g = self.inputs[k]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign[k] * self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const auto &na = N(a), &nb = N(b);
  std::vector<double> out(na->value.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = na->value[i] * nb->value[i];
  return OpBuilder::result(na->shape, std::move(out), {na, nb}, [](Node& self) {
    Node& x = *self.inputs[0];
    Node& y = *self.inputs[1];
    if (x.requires_grad) {
      auto& g = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * y.value[i];
    }
    if (y.requires_grad) {
      auto& g = y.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * x.value[i];
    }
  });
}

Tensor add_scalar(const Tensor& x, double c) {
  return unary(x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Tensor scale(const Tensor& x, double c) {
  return unary(x, [c](double v) { return v * c; }, [c](double, double) { return c; });
}

Tensor one_minus(const Tensor& x) {
  return unary(x, [](double v) { return 1.0 - v; }, [](double, double) { return -1.0; });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  return unary(x, [slope](double v) { return v > 0.0 ? v : slope * v; },
               [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor exp(const Tensor& x) {
  return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log_clamped(const Tensor& x, double floor) {
  return unary(x, [floor](double v) { return std::log(std::max(v, floor)); },
               [floor](double v, double) { return v > floor ? 1.0 / v : 0.0; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  return unary(x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
               [lo, hi](double v, double) { return v > lo && v < hi ? 1.0 : 0.0; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul lhs");
  require_rank(b, 2, "matmul rhs");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: " + shape_str(a.shape()) + " @ " + shape_str(b.shape()));
  }
  const auto &na = N(a), &nb = N(b);
  std::vector<double> out(static_cast<std::size_t>(m) * n);
  MapMat(out.data(), m, n).noalias() =
      ConstMapMat(na->value.data(), m, k) * ConstMapMat(nb->value.data(), k, n);
  return OpBuilder::result({m, n}, std::move(out), {na, nb}, [m, k, n](Node& self) {
    Node& x = *self.inputs[0];
    Node& y = *self.inputs[1];
    ConstMapMat g(self.grad.data(), m, n);
    if (x.requires_grad) {
      MapMat(x.grad_buffer().data(), m, k).noalias() += g * ConstMapMat(y.value.data(), k, n).transpose();
    }
    if (y.requires_grad) {
      MapMat(y.grad_buffer().data(), k, n).noalias() += ConstMapMat(x.value.data(), m, k).transpose() * g;
    }
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (x.ndim() != 2 && x.ndim() != 4) throw ShapeError("add_bias expects rank 2 or 4 input");
  const int channels = x.dim(1);
  if (bias.numel() != static_cast<std::size_t>(channels)) {
    throw ShapeError("add_bias: bias of size " + std::to_string(bias.numel()) + " for " +
                     shape_str(x.shape()));
  }
  const int batch = x.dim(0);
  const std::size_t inner = x.numel() / (static_cast<std::size_t>(batch) * channels);
  const auto &nx = N(x), &nbias = N(bias);
  std::vector<double> out = nx->value;
  for (int n = 0; n < batch; ++n)
    for (int c = 0; c < channels; ++c) {
      double* p = out.data() + (static_cast<std::size_t>(n) * channels + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) p[i] += nbias->value[c];
    }
  return OpBuilder::result(nx->shape, std::move(out), {nx, nbias},
                           [batch, channels, inner](Node& self) {
                             Node& in = *self.inputs[0];
                             Node& b = *self.inputs[1];
                             if (in.requires_grad) {
                               auto& g = in.grad_buffer();
                               for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                             }
                             if (b.requires_grad) {
                               auto& g = b.grad_buffer();
                               for (int n = 0; n < batch; ++n)
                                 for (int c = 0; c < channels; ++c) {
                                   const double* p =
                                       self.grad.data() + (static_cast<std::size_t>(n) * channels + c) * inner;
                                   double s = 0.0;
                                   for (std::size_t i = 0; i < inner; ++i) s += p[i];
                                   g[c] += s;
                                 }
                             }
                           });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel_of(shape) != x.numel()) {
    throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  const auto& nx = N(x);
  return OpBuilder::result(std::move(shape), nx->value, {nx}, [](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  if (axis < 0 || axis >= static_cast<int>(first.size())) throw ShapeError("concat axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::shared_ptr<Node>> nodes;
  std::vector<std::size_t> chunk;  // contiguous run per outer index, per part
  std::size_t outer = 1;
  for (int d = 0; d < axis; ++d) outer *= static_cast<std::size_t>(first[d]);
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size()) throw ShapeError("concat rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (static_cast<int>(d) != axis && s[d] != first[d]) {
        throw ShapeError("concat: " + shape_str(s) + " vs " + shape_str(first));
      }
    }
    out_shape[axis] += s[axis];
    chunk.push_back(p.numel() / std::max<std::size_t>(outer, 1));
    nodes.push_back(N(p));
  }
  const std::size_t row = std::accumulate(chunk.begin(), chunk.end(), std::size_t{0});
  std::vector<double> out(outer * row);
  for (std::size_t o = 0; o < outer; ++o) {
    std::size_t offset = o * row;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      std::copy_n(nodes[k]->value.data() + o * chunk[k], chunk[k], out.data() + offset);
      offset += chunk[k];
    }
  }
  return OpBuilder::result(std::move(out_shape), std::move(out), nodes,
                           [outer, chunk, row](Node& self) {
                             std::size_t start = 0;
                             for (std::size_t k = 0; k < self.inputs.size(); ++k) {
                               Node& in = *self.inputs[k];
                               if (in.requires_grad) {
                                 auto& g = in.grad_buffer();
                                 for (std::size_t o = 0; o < outer; ++o) {
                                   const double* src = self.grad.data() + o * row + start;
                                   double* dst = g.data() + o * chunk[k];
                                   for (std::size_t i = 0; i < chunk[k]; ++i) dst[i] += src[i];
                                 }
                               }
                               start += chunk[k];
                             }
                           });
}

Tensor sum(const Tensor& x) {
  const auto& nx = N(x);
  const double s = std::accumulate(nx->value.begin(), nx->value.end(), 0.0);
  return OpBuilder::result({}, {s}, {nx}, [](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (double& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ContractError("mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int padding) {
  require_rank(input, 4, "conv2d input");
  require_rank(kernel, 4, "conv2d kernel");
  const int batch = input.dim(0), channels = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int filters = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  if (kernel.dim(1) != channels) {
    throw ShapeError("conv2d: kernel " + shape_str(kernel.shape()) + " for input " +
                     shape_str(input.shape()));
  }
  if (stride < 1 || padding < 0) throw ShapeError("conv2d: invalid stride/padding");
  const int span_h = h + 2 * padding - kh, span_w = w + 2 * padding - kw;
  if (span_h < 0 || span_w < 0 || span_h % stride != 0 || span_w % stride != 0) {
    throw ShapeError("conv2d: non-integral output size for input " + shape_str(input.shape()) +
                     ", kernel " + std::to_string(kh) + "x" + std::to_string(kw) + ", stride " +
                     std::to_string(stride) + ", padding " + std::to_string(padding));
  }
  const int ho = span_h / stride + 1, wo = span_w / stride + 1;
  const int patch = channels * kh * kw;
  const int plane = ho * wo;

  const auto &nx = N(input), &nk = N(kernel);
  auto col = std::make_shared<RowMat>();
  im2col(nx->value, batch, channels, h, w, kh, kw, stride, padding, ho, wo, *col);
  const RowMat y = ConstMapMat(nk->value.data(), filters, patch) * (*col);
  std::vector<double> out(static_cast<std::size_t>(batch) * filters * plane);
  from_channel_major(y, batch, filters, plane, out, false);

  return OpBuilder::result(
      {batch, filters, ho, wo}, std::move(out), {nx, nk},
      [=](Node& self) {
        Node& x = *self.inputs[0];
        Node& k = *self.inputs[1];
        const RowMat dy = to_channel_major(self.grad, batch, filters, plane);
        if (k.requires_grad) {
          MapMat(k.grad_buffer().data(), filters, patch).noalias() += dy * col->transpose();
        }
        if (x.requires_grad) {
          const RowMat dcol = ConstMapMat(k.value.data(), filters, patch).transpose() * dy;
          col2im(dcol, batch, channels, h, w, kh, kw, stride, padding, ho, wo, x.grad_buffer());
        }
      });
}

Tensor conv_transpose2d(const Tensor& input, const Tensor& kernel, int stride, int padding) {
  require_rank(input, 4, "conv_transpose2d input");
  require_rank(kernel, 4, "conv_transpose2d kernel");
  const int batch = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int cout = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
  if (kernel.dim(0) != cin) {
    throw ShapeError("conv_transpose2d: kernel " + shape_str(kernel.shape()) + " for input " +
                     shape_str(input.shape()));
  }
  if (stride < 1 || padding < 0) throw ShapeError("conv_transpose2d: invalid stride/padding");
  const int ho = (h - 1) * stride - 2 * padding + kh;
  const int wo = (w - 1) * stride - 2 * padding + kw;
  if (ho < 1 || wo < 1) throw ShapeError("conv_transpose2d: empty output");
  const int patch = cout * kh * kw;
  const int plane = h * w;

  const auto &nx = N(input), &nk = N(kernel);
  auto xmat = std::make_shared<RowMat>(to_channel_major(nx->value, batch, cin, plane));
  const RowMat col = ConstMapMat(nk->value.data(), cin, patch).transpose() * (*xmat);
  std::vector<double> out(static_cast<std::size_t>(batch) * cout * ho * wo, 0.0);
  col2im(col, batch, cout, ho, wo, kh, kw, stride, padding, h, w, out);

  return OpBuilder::result(
      {batch, cout, ho, wo}, std::move(out), {nx, nk},
      [=](Node& self) {
        Node& x = *self.inputs[0];
        Node& k = *self.inputs[1];
        RowMat dcol;
        im2col(self.grad, batch, cout, ho, wo, kh, kw, stride, padding, h, w, dcol);
        if (k.requires_grad) {
          MapMat(k.grad_buffer().data(), cin, patch).noalias() += (*xmat) * dcol.transpose();
        }
        if (x.requires_grad) {
          const RowMat dx = ConstMapMat(k.value.data(), cin, patch) * dcol;
          from_channel_major(dx, batch, cin, plane, x.grad_buffer(), true);
        }
      });
}

Tensor minibatch_similarity(const Tensor& m) {
  require_rank(m, 3, "minibatch_similarity input");
  const int n = m.dim(0), kernels = m.dim(1), c = m.dim(2);
  const auto& nm = N(m);
  const double* v = nm->value.data();
  auto at = [=](int i, int b) { return v + (static_cast<std::size_t>(i) * kernels + b) * c; };

  // pairwise similarities for i < j, kept for the backward pass
  auto sim = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n) * n * kernels, 0.0);
  std::vector<double> out(static_cast<std::size_t>(n) * kernels, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      for (int b = 0; b < kernels; ++b) {
        const double* mi = at(i, b);
        const double* mj = at(j, b);
        double l1 = 0.0;
        for (int k = 0; k < c; ++k) l1 += std::abs(mi[k] - mj[k]);
        const double s = std::exp(-l1);
        (*sim)[(static_cast<std::size_t>(i) * n + j) * kernels + b] = s;
        out[static_cast<std::size_t>(i) * kernels + b] += s;
        out[static_cast<std::size_t>(j) * kernels + b] += s;
      }
    }
  }
  return OpBuilder::result({n, kernels}, std::move(out), {nm}, [=](Node& self) {
    Node& in = *self.inputs[0];
    auto& g = in.grad_buffer();
    const double* val = in.value.data();
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        for (int b = 0; b < kernels; ++b) {
          const double s = (*sim)[(static_cast<std::size_t>(i) * n + j) * kernels + b];
          const double upstream = self.grad[static_cast<std::size_t>(i) * kernels + b] +
                                  self.grad[static_cast<std::size_t>(j) * kernels + b];
          const double coeff = upstream * s;
          const std::size_t oi = (static_cast<std::size_t>(i) * kernels + b) * c;
          const std::size_t oj = (static_cast<std::size_t>(j) * kernels + b) * c;
          for (int k = 0; k < c; ++k) {
            const double d = val[oi + k] - val[oj + k];
            const double sign = static_cast<double>((d > 0.0) - (d < 0.0));
            g[oi + k] -= coeff * sign;
            g[oj + k] += coeff * sign;
          }
        }
      }
    }
  });
}

}  // namespace topogan::ad
