#pragma once

// Tape-based reverse-mode differentiation over dense NCHW tensors.
//
// A Var is a cheap handle to a graph node. Operations on Vars record a
// backward closure only when at least one input requires a gradient, so
// inference on frozen models builds no graph.

#include "sing/tensor.hpp"

#include <Eigen/Core>

#include <cmath>
#include <functional>
#include <stdexcept>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

namespace sing {

template <typename Scalar>
struct Node {
  Tensor<Scalar> value;
  Tensor<Scalar> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  typename Tensor<Scalar>::Array& grad_array() {
    if (grad.shape() != value.shape()) grad = Tensor<Scalar>::zeros(value.shape());
    return grad.array();
  }
  Tensor<Scalar>& grad_tensor() {
    grad_array();
    return grad;
  }
};

template <typename Scalar>
class Var {
 public:
  using NodeType = Node<Scalar>;

  Var() : node_(std::make_shared<NodeType>()) {}
  explicit Var(Tensor<Scalar> value, bool requires_grad = false)
      : node_(std::make_shared<NodeType>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Var(std::shared_ptr<NodeType> node) : node_(std::move(node)) {}

  [[nodiscard]] const Tensor<Scalar>& value() const { return node_->value; }
  [[nodiscard]] Tensor<Scalar>& mutable_value() { return node_->value; }
  [[nodiscard]] const Shape& shape() const { return node_->value.shape(); }
  [[nodiscard]] bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }

  /// Gradient accumulated by the last backward pass; zeros if none reached this node.
  [[nodiscard]] const Tensor<Scalar>& grad() const { return node_->grad_tensor(); }
  void zero_grad() { node_->grad = Tensor<Scalar>(); }

  [[nodiscard]] Scalar item() const {
    if (node_->value.size() != 1) throw ConfigError("item() on non-scalar " + shape().str());
    return node_->value.array()[0];
  }

  [[nodiscard]] NodeType* node() const { return node_.get(); }
  [[nodiscard]] const std::shared_ptr<NodeType>& ptr() const { return node_; }

  /// Backpropagates from this node, seeding d(self)/d(self) with ones.
  void backward() const {
    std::vector<NodeType*> order;
    std::unordered_set<NodeType*> seen;
    std::vector<std::pair<NodeType*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        NodeType* p = n->parents[next++].get();
        if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    node_->grad_array().setOnes();
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      NodeType* n = *it;
      if (n->backward && n->grad.shape() == n->value.shape()) n->backward(*n);
    }
  }

 private:
  std::shared_ptr<NodeType> node_;
};

template <typename Scalar>
Var<Scalar> constant(Tensor<Scalar> value) {
  return Var<Scalar>(std::move(value), false);
}

template <typename Scalar>
Var<Scalar> parameter(Tensor<Scalar> value) {
  return Var<Scalar>(std::move(value), true);
}

template <typename Scalar>
Var<Scalar> detach(const Var<Scalar>& x) {
  return constant(x.value());
}

namespace detail {

template <typename Scalar, typename Backward>
Var<Scalar> record(Tensor<Scalar> value, std::initializer_list<Var<Scalar>> inputs,
                   Backward&& backward) {
  auto node = std::make_shared<Node<Scalar>>();
  node->value = std::move(value);
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (any) {
    node->requires_grad = true;
    for (const auto& in : inputs) node->parents.push_back(in.ptr());
    node->backward = std::forward<Backward>(backward);
  }
  return Var<Scalar>(std::move(node));
}

template <typename Scalar>
bool wants(const Node<Scalar>& self, std::size_t i) {
  return self.parents[i]->requires_grad;
}

template <typename Scalar>
void require_same_shape(const Var<Scalar>& a, const Var<Scalar>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ConfigError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                      b.shape().str());
  }
}

template <typename Scalar>
using RowMatrix = typename Tensor<Scalar>::RowMatrix;

/// Unfolds a (C,H,W) plane into a (C*K*K, Ho*Wo) patch matrix.
template <typename Scalar>
void im2col(const Scalar* img, int channels, int height, int width, int kernel, int stride,
            int pad, int out_h, int out_w, RowMatrix<Scalar>& cols) {
  cols.resize(static_cast<Eigen::Index>(channels) * kernel * kernel,
              static_cast<Eigen::Index>(out_h) * out_w);
  for (int c = 0; c < channels; ++c) {
    const Scalar* plane = img + static_cast<Eigen::Index>(c) * height * width;
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        Scalar* row = cols.row((c * kernel + ky) * kernel + kx).data();
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          Scalar* dst = row + static_cast<Eigen::Index>(oy) * out_w;
          if (iy < 0 || iy >= height) {
            std::fill(dst, dst + out_w, Scalar(0));
            continue;
          }
          const Scalar* src = plane + static_cast<Eigen::Index>(iy) * width;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kx;
            dst[ox] = (ix >= 0 && ix < width) ? src[ix] : Scalar(0);
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: scatters patch columns back into a (C,H,W) plane.
template <typename Scalar>
void col2im(const RowMatrix<Scalar>& cols, int channels, int height, int width, int kernel,
            int stride, int pad, int out_h, int out_w, Scalar* img) {
  for (int c = 0; c < channels; ++c) {
    Scalar* plane = img + static_cast<Eigen::Index>(c) * height * width;
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        const Scalar* row = cols.row((c * kernel + ky) * kernel + kx).data();
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= height) continue;
          const Scalar* src = row + static_cast<Eigen::Index>(oy) * out_w;
          Scalar* dst = plane + static_cast<Eigen::Index>(iy) * width;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < width) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

/// Index of (n, c, y, x) in the space-to-depth output for block factor s.
inline Eigen::Index s2d_index(const Shape& in, int s, int n, int c, int y, int x) {
  const int oc = ((y % s) * s + (x % s)) * in.c + c;
  const int oh = in.h / s;
  const int ow = in.w / s;
  return ((static_cast<Eigen::Index>(n) * in.c * s * s + oc) * oh + y / s) * ow + x / s;
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_shape(a, b, "add");
  Tensor<Scalar> out(a.shape(), a.value().array() + b.value().array());
  return detail::record<Scalar>(std::move(out), {a, b}, [](Node<Scalar>& self) {
    if (detail::wants(self, 0)) self.parents[0]->grad_array() += self.grad.array();
    if (detail::wants(self, 1)) self.parents[1]->grad_array() += self.grad.array();
  });
}

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_shape(a, b, "sub");
  Tensor<Scalar> out(a.shape(), a.value().array() - b.value().array());
  return detail::record<Scalar>(std::move(out), {a, b}, [](Node<Scalar>& self) {
    if (detail::wants(self, 0)) self.parents[0]->grad_array() += self.grad.array();
    if (detail::wants(self, 1)) self.parents[1]->grad_array() -= self.grad.array();
  });
}

template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor<Scalar> out(a.shape(), a.value().array() * b.value().array());
  return detail::record<Scalar>(std::move(out), {a, b}, [](Node<Scalar>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) pa.grad_array() += self.grad.array() * pb.value.array();
    if (pb.requires_grad) pb.grad_array() += self.grad.array() * pa.value.array();
  });
}

/// a * x + b elementwise with scalar a, b.
template <typename Scalar>
Var<Scalar> affine(const Var<Scalar>& x, Scalar a, Scalar b) {
  Tensor<Scalar> out(x.shape(), x.value().array() * a + b);
  return detail::record<Scalar>(std::move(out), {x}, [a](Node<Scalar>& self) {
    self.parents[0]->grad_array() += self.grad.array() * a;
  });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& x, Scalar a) {
  Tensor<Scalar> out(x.shape(), x.value().array() * a);
  return detail::record<Scalar>(std::move(out), {x}, [a](Node<Scalar>& self) {
    self.parents[0]->grad_array() += self.grad.array() * a;
  });
}

template <typename Scalar>
Var<Scalar> square(const Var<Scalar>& x) {
  Tensor<Scalar> out(x.shape(), x.value().array().square());
  return detail::record<Scalar>(std::move(out), {x}, [](Node<Scalar>& self) {
    auto& p = *self.parents[0];
    p.grad_array() += self.grad.array() * Scalar(2) * p.value.array();
  });
}

template <typename Scalar>
Var<Scalar> sqrt(const Var<Scalar>& x) {
  Tensor<Scalar> out(x.shape(), x.value().array().sqrt());
  return detail::record<Scalar>(std::move(out), {x}, [](Node<Scalar>& self) {
    self.parents[0]->grad_array() += self.grad.array() * Scalar(0.5) / self.value.array();
  });
}

template <typename Scalar>
Var<Scalar> rsqrt(const Var<Scalar>& x) {
  Tensor<Scalar> out(x.shape(), x.value().array().rsqrt());
  return detail::record<Scalar>(std::move(out), {x}, [](Node<Scalar>& self) {
    const auto& y = self.value.array();
    self.parents[0]->grad_array() += self.grad.array() * Scalar(-0.5) * y * y * y;
  });
}

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& x) {
  Tensor<Scalar> out(x.shape(), x.value().array().max(Scalar(0)));
  return detail::record<Scalar>(std::move(out), {x}, [](Node<Scalar>& self) {
    auto& p = *self.parents[0];
    p.grad_array() += (p.value.array() > Scalar(0)).select(self.grad.array(), Scalar(0));
  });
}

template <typename Scalar>
Var<Scalar> sigmoid(const Var<Scalar>& x) {
  Tensor<Scalar> out(x.shape(), (Scalar(1) + (-x.value().array()).exp()).inverse());
  return detail::record<Scalar>(std::move(out), {x}, [](Node<Scalar>& self) {
    const auto& y = self.value.array();
    self.parents[0]->grad_array() += self.grad.array() * y * (Scalar(1) - y);
  });
}

template <typename Scalar>
Var<Scalar> silu(const Var<Scalar>& x) {
  const auto& v = x.value().array();
  Tensor<Scalar> out(x.shape(), v / (Scalar(1) + (-v).exp()));
  return detail::record<Scalar>(std::move(out), {x}, [](Node<Scalar>& self) {
    auto& p = *self.parents[0];
    const auto s = (Scalar(1) + (-p.value.array()).exp()).inverse().eval();
    p.grad_array() += self.grad.array() * s * (Scalar(1) + p.value.array() * (Scalar(1) - s));
  });
}

// ---------------------------------------------------------------- reductions

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& x) {
  Tensor<Scalar> out = Tensor<Scalar>::constant(Shape{1, 1, 1, 1}, x.value().array().sum());
  return detail::record<Scalar>(std::move(out), {x}, [](Node<Scalar>& self) {
    self.parents[0]->grad_array() += self.grad.array()[0];
  });
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& x) {
  return scale(sum(x), Scalar(1) / static_cast<Scalar>(x.value().size()));
}

template <typename Scalar>
Var<Scalar> mse(const Var<Scalar>& a, const Var<Scalar>& b) {
  return mean(square(sub(a, b)));
}

/// Sum over channels: (N,C,H,W) -> (N,1,H,W).
template <typename Scalar>
Var<Scalar> channel_sum(const Var<Scalar>& x) {
  const Shape in = x.shape();
  Tensor<Scalar> out(Shape{in.n, 1, in.h, in.w});
  for (int n = 0; n < in.n; ++n) {
    out.sample_matrix(n) = x.value().sample_matrix(n).colwise().sum();
  }
  return detail::record<Scalar>(std::move(out), {x}, [](Node<Scalar>& self) {
    auto& g = self.parents[0]->grad_tensor();
    for (int n = 0; n < g.shape().n; ++n) {
      g.sample_matrix(n).rowwise() += self.grad.sample_matrix(n).row(0);
    }
  });
}

/// Replicates a single-channel map across `channels`: (N,1,H,W) -> (N,C,H,W).
template <typename Scalar>
Var<Scalar> replicate_channels(const Var<Scalar>& x, int channels) {
  const Shape in = x.shape();
  if (in.c != 1) throw ConfigError("replicate_channels expects one channel, got " + in.str());
  Tensor<Scalar> out(Shape{in.n, channels, in.h, in.w});
  for (int n = 0; n < in.n; ++n) {
    out.sample_matrix(n).rowwise() = x.value().sample_matrix(n).row(0);
  }
  return detail::record<Scalar>(std::move(out), {x}, [](Node<Scalar>& self) {
    auto& g = self.parents[0]->grad_tensor();
    for (int n = 0; n < g.shape().n; ++n) {
      g.sample_matrix(n).row(0) += self.grad.sample_matrix(n).colwise().sum();
    }
  });
}

// ---------------------------------------------------------------- broadcasting

/// x * g with g of shape (N,C,1,1) or (1,C,1,1): per-channel gain.
template <typename Scalar>
Var<Scalar> channel_scale(const Var<Scalar>& x, const Var<Scalar>& g) {
  const Shape in = x.shape();
  const Shape gs = g.shape();
  if (gs.c != in.c || gs.h != 1 || gs.w != 1 || (gs.n != 1 && gs.n != in.n)) {
    throw ConfigError("channel_scale: gain " + gs.str() + " incompatible with " + in.str());
  }
  Tensor<Scalar> out(in);
  for (int n = 0; n < in.n; ++n) {
    const int gn = gs.n == 1 ? 0 : n;
    const auto gains = g.value().array().segment(gn * in.c, in.c).matrix().asDiagonal();
    out.sample_matrix(n) = gains * x.value().sample_matrix(n);
  }
  return detail::record<Scalar>(std::move(out), {x, g}, [](Node<Scalar>& self) {
    auto& px = *self.parents[0];
    auto& pg = *self.parents[1];
    const int c = px.value.shape().c;
    for (int n = 0; n < px.value.shape().n; ++n) {
      const int gn = pg.value.shape().n == 1 ? 0 : n;
      const auto go = self.grad.sample_matrix(n);
      if (px.requires_grad) {
        const auto gains = pg.value.array().segment(gn * c, c).matrix().asDiagonal();
        px.grad_tensor().sample_matrix(n) += gains * go;
      }
      if (pg.requires_grad) {
        pg.grad_array().segment(gn * c, c) +=
            go.cwiseProduct(px.value.sample_matrix(n)).rowwise().sum().array();
      }
    }
  });
}

/// x + b with b of shape (N,C,1,1) or (1,C,1,1): per-channel offset.
template <typename Scalar>
Var<Scalar> channel_bias(const Var<Scalar>& x, const Var<Scalar>& b) {
  const Shape in = x.shape();
  const Shape bs = b.shape();
  if (bs.c != in.c || bs.h != 1 || bs.w != 1 || (bs.n != 1 && bs.n != in.n)) {
    throw ConfigError("channel_bias: bias " + bs.str() + " incompatible with " + in.str());
  }
  Tensor<Scalar> out = x.value();
  for (int n = 0; n < in.n; ++n) {
    const int bn = bs.n == 1 ? 0 : n;
    out.sample_matrix(n).colwise() += b.value().array().segment(bn * in.c, in.c).matrix();
  }
  return detail::record<Scalar>(std::move(out), {x, b}, [](Node<Scalar>& self) {
    auto& px = *self.parents[0];
    auto& pb = *self.parents[1];
    const int c = px.value.shape().c;
    if (px.requires_grad) px.grad_array() += self.grad.array();
    if (pb.requires_grad) {
      for (int n = 0; n < px.value.shape().n; ++n) {
        const int bn = pb.value.shape().n == 1 ? 0 : n;
        pb.grad_array().segment(bn * c, c) +=
            self.grad.sample_matrix(n).rowwise().sum().array();
      }
    }
  });
}

/// x * s with s of shape (N,1,H,W): one gain per spatial location.
template <typename Scalar>
Var<Scalar> spatial_scale(const Var<Scalar>& x, const Var<Scalar>& s) {
  const Shape in = x.shape();
  if (s.shape() != Shape{in.n, 1, in.h, in.w}) {
    throw ConfigError("spatial_scale: gain " + s.shape().str() + " incompatible with " +
                      in.str());
  }
  Tensor<Scalar> out(in);
  for (int n = 0; n < in.n; ++n) {
    out.sample_matrix(n) = x.value().sample_matrix(n).array().rowwise() *
                           s.value().sample_matrix(n).row(0).array();
  }
  return detail::record<Scalar>(std::move(out), {x, s}, [](Node<Scalar>& self) {
    auto& px = *self.parents[0];
    auto& ps = *self.parents[1];
    for (int n = 0; n < px.value.shape().n; ++n) {
      const auto go = self.grad.sample_matrix(n);
      if (px.requires_grad) {
        px.grad_tensor().sample_matrix(n).array() +=
            go.array().rowwise() * ps.value.sample_matrix(n).row(0).array();
      }
      if (ps.requires_grad) {
        ps.grad_tensor().sample_matrix(n).row(0) +=
            go.cwiseProduct(px.value.sample_matrix(n)).colwise().sum();
      }
    }
  });
}

// ---------------------------------------------------------------- structure

template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& x, Shape shape) {
  Tensor<Scalar> out = x.value().reshaped(shape);
  return detail::record<Scalar>(std::move(out), {x}, [](Node<Scalar>& self) {
    self.parents[0]->grad_array() += self.grad.array();
  });
}

template <typename Scalar>
Var<Scalar> slice_channels(const Var<Scalar>& x, int begin, int count) {
  const Shape in = x.shape();
  if (begin < 0 || count < 0 || begin + count > in.c) {
    throw ConfigError("slice_channels: range out of bounds for " + in.str());
  }
  Tensor<Scalar> out(Shape{in.n, count, in.h, in.w});
  for (int n = 0; n < in.n; ++n) {
    out.sample_matrix(n) = x.value().sample_matrix(n).middleRows(begin, count);
  }
  return detail::record<Scalar>(std::move(out), {x}, [begin, count](Node<Scalar>& self) {
    auto& g = self.parents[0]->grad_tensor();
    for (int n = 0; n < g.shape().n; ++n) {
      g.sample_matrix(n).middleRows(begin, count) += self.grad.sample_matrix(n);
    }
  });
}

template <typename Scalar>
Var<Scalar> concat_channels(const Var<Scalar>& a, const Var<Scalar>& b) {
  const Shape sa = a.shape();
  const Shape sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w) {
    throw ConfigError("concat_channels: " + sa.str() + " vs " + sb.str());
  }
  Tensor<Scalar> out(Shape{sa.n, sa.c + sb.c, sa.h, sa.w});
  for (int n = 0; n < sa.n; ++n) {
    out.sample_matrix(n).topRows(sa.c) = a.value().sample_matrix(n);
    out.sample_matrix(n).bottomRows(sb.c) = b.value().sample_matrix(n);
  }
  const int ca = sa.c;
  const int cb = sb.c;
  return detail::record<Scalar>(std::move(out), {a, b}, [ca, cb](Node<Scalar>& self) {
    for (int i = 0; i < 2; ++i) {
      if (!detail::wants(self, i)) continue;
      auto& g = self.parents[i]->grad_tensor();
      for (int n = 0; n < g.shape().n; ++n) {
        g.sample_matrix(n) += i == 0 ? self.grad.sample_matrix(n).topRows(ca)
                                     : self.grad.sample_matrix(n).bottomRows(cb);
      }
    }
  });
}

/// Invertible rearrangement (N,C,H,W) -> (N,C*s*s,H/s,W/s). Output channel
/// (dy*s + dx)*C + c holds pixel (s*i + dy, s*j + dx) of input channel c.
template <typename Scalar>
Var<Scalar> space_to_depth(const Var<Scalar>& x, int s) {
  const Shape in = x.shape();
  if (s < 1 || in.h % s != 0 || in.w % s != 0) {
    throw ConfigError("space_to_depth: " + in.str() + " not divisible by " + std::to_string(s));
  }
  Tensor<Scalar> out(Shape{in.n, in.c * s * s, in.h / s, in.w / s});
  const auto& src = x.value();
  for (int n = 0; n < in.n; ++n)
    for (int c = 0; c < in.c; ++c)
      for (int y = 0; y < in.h; ++y)
        for (int xx = 0; xx < in.w; ++xx)
          out.array()[detail::s2d_index(in, s, n, c, y, xx)] = src(n, c, y, xx);
  return detail::record<Scalar>(std::move(out), {x}, [in, s](Node<Scalar>& self) {
    auto& g = self.parents[0]->grad_tensor();
    for (int n = 0; n < in.n; ++n)
      for (int c = 0; c < in.c; ++c)
        for (int y = 0; y < in.h; ++y)
          for (int xx = 0; xx < in.w; ++xx)
            g(n, c, y, xx) += self.grad.array()[detail::s2d_index(in, s, n, c, y, xx)];
  });
}

/// Exact inverse of space_to_depth.
template <typename Scalar>
Var<Scalar> depth_to_space(const Var<Scalar>& x, int s) {
  const Shape packed = x.shape();
  if (s < 1 || packed.c % (s * s) != 0) {
    throw ConfigError("depth_to_space: channels of " + packed.str() + " not divisible by s^2");
  }
  const Shape in{packed.n, packed.c / (s * s), packed.h * s, packed.w * s};
  Tensor<Scalar> out(in);
  const auto& src = x.value();
  for (int n = 0; n < in.n; ++n)
    for (int c = 0; c < in.c; ++c)
      for (int y = 0; y < in.h; ++y)
        for (int xx = 0; xx < in.w; ++xx)
          out(n, c, y, xx) = src.array()[detail::s2d_index(in, s, n, c, y, xx)];
  return detail::record<Scalar>(std::move(out), {x}, [in, s](Node<Scalar>& self) {
    auto& g = self.parents[0]->grad_array();
    for (int n = 0; n < in.n; ++n)
      for (int c = 0; c < in.c; ++c)
        for (int y = 0; y < in.h; ++y)
          for (int xx = 0; xx < in.w; ++xx)
            g[detail::s2d_index(in, s, n, c, y, xx)] += self.grad(n, c, y, xx);
  });
}

/// Mean over non-overlapping s x s blocks.
template <typename Scalar>
Var<Scalar> mean_pool(const Var<Scalar>& x, int s) {
  const Shape in = x.shape();
  if (s < 1 || in.h % s != 0 || in.w % s != 0) {
    throw ConfigError("mean_pool: " + in.str() + " not divisible by " + std::to_string(s));
  }
  const Shape os{in.n, in.c, in.h / s, in.w / s};
  Tensor<Scalar> out(os);
  const Scalar inv = Scalar(1) / static_cast<Scalar>(s * s);
  const auto& src = x.value();
  for (int n = 0; n < in.n; ++n)
    for (int c = 0; c < in.c; ++c)
      for (int y = 0; y < os.h; ++y)
        for (int xx = 0; xx < os.w; ++xx) {
          Scalar acc = 0;
          for (int dy = 0; dy < s; ++dy)
            for (int dx = 0; dx < s; ++dx) acc += src(n, c, y * s + dy, xx * s + dx);
          out(n, c, y, xx) = acc * inv;
        }
  return detail::record<Scalar>(std::move(out), {x}, [s, inv](Node<Scalar>& self) {
    auto& g = self.parents[0]->grad_tensor();
    const Shape gs = g.shape();
    for (int n = 0; n < gs.n; ++n)
      for (int c = 0; c < gs.c; ++c)
        for (int y = 0; y < gs.h; ++y)
          for (int xx = 0; xx < gs.w; ++xx) g(n, c, y, xx) += self.grad(n, c, y / s, xx / s) * inv;
  });
}

/// Nearest-neighbour upsampling: each pixel becomes an s x s block.
template <typename Scalar>
Var<Scalar> upsample_replicate(const Var<Scalar>& x, int s) {
  const Shape in = x.shape();
  if (s < 1) throw ConfigError("upsample_replicate: scale must be >= 1");
  const Shape os{in.n, in.c, in.h * s, in.w * s};
  Tensor<Scalar> out(os);
  const auto& src = x.value();
  for (int n = 0; n < os.n; ++n)
    for (int c = 0; c < os.c; ++c)
      for (int y = 0; y < os.h; ++y)
        for (int xx = 0; xx < os.w; ++xx) out(n, c, y, xx) = src(n, c, y / s, xx / s);
  return detail::record<Scalar>(std::move(out), {x}, [s](Node<Scalar>& self) {
    auto& g = self.parents[0]->grad_tensor();
    const Shape os = self.value.shape();
    for (int n = 0; n < os.n; ++n)
      for (int c = 0; c < os.c; ++c)
        for (int y = 0; y < os.h; ++y)
          for (int xx = 0; xx < os.w; ++xx) g(n, c, y / s, xx / s) += self.grad(n, c, y, xx);
  });
}

// ---------------------------------------------------------------- linear maps

/// 2-D convolution. weight: (Cout, Cin, K, K); bias: (1, Cout, 1, 1) or empty.
template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>* bias,
                   int stride, int pad) {
  using Mat = detail::RowMatrix<Scalar>;
  const Shape in = x.shape();
  const Shape ws = weight.shape();
  if (ws.c != in.c || ws.h != ws.w) {
    throw ConfigError("conv2d: weight " + ws.str() + " incompatible with input " + in.str());
  }
  const int k = ws.h;
  const int out_h = (in.h + 2 * pad - k) / stride + 1;
  const int out_w = (in.w + 2 * pad - k) / stride + 1;
  if (out_h <= 0 || out_w <= 0) throw ConfigError("conv2d: input too small " + in.str());
  const Shape os{in.n, ws.n, out_h, out_w};
  const bool pointwise = k == 1 && stride == 1 && pad == 0;

  typename Tensor<Scalar>::ConstMatrixMap wm(weight.value().data(), ws.n, ws.c * k * k);
  Tensor<Scalar> out(os);
  Mat cols;
  for (int n = 0; n < in.n; ++n) {
    if (pointwise) {
      out.sample_matrix(n).noalias() = wm * x.value().sample_matrix(n);
    } else {
      detail::im2col(x.value().data() + n * in.sample(), in.c, in.h, in.w, k, stride, pad, out_h,
                     out_w, cols);
      out.sample_matrix(n).noalias() = wm * cols;
    }
    if (bias) out.sample_matrix(n).colwise() += bias->value().array().matrix();
  }

  auto backward = [in, os, k, stride, pad, pointwise, has_bias = bias != nullptr](
                      Node<Scalar>& self) {
    auto& px = *self.parents[0];
    auto& pw = *self.parents[1];
    const Shape ws = pw.value.shape();
    typename Tensor<Scalar>::ConstMatrixMap wm(pw.value.data(), ws.n, ws.c * k * k);
    Mat cols;
    Mat dcols;
    for (int n = 0; n < in.n; ++n) {
      const auto go = self.grad.sample_matrix(n);
      if (pw.requires_grad) {
        typename Tensor<Scalar>::MatrixMap gw(pw.grad_tensor().data(), ws.n, ws.c * k * k);
        if (pointwise) {
          gw.noalias() += go * px.value.sample_matrix(n).transpose();
        } else {
          detail::im2col(px.value.data() + n * in.sample(), in.c, in.h, in.w, k, stride, pad,
                         os.h, os.w, cols);
          gw.noalias() += go * cols.transpose();
        }
      }
      if (px.requires_grad) {
        if (pointwise) {
          px.grad_tensor().sample_matrix(n).noalias() += wm.transpose() * go;
        } else {
          dcols.noalias() = wm.transpose() * go;
          detail::col2im(dcols, in.c, in.h, in.w, k, stride, pad, os.h, os.w,
                         px.grad_tensor().data() + n * in.sample());
        }
      }
      if (has_bias && self.parents[2]->requires_grad) {
        self.parents[2]->grad_array() += go.rowwise().sum().array();
      }
    }
  };
  if (bias) return detail::record<Scalar>(std::move(out), {x, weight, *bias}, std::move(backward));
  return detail::record<Scalar>(std::move(out), {x, weight}, std::move(backward));
}

/// Transposed convolution (adjoint of conv2d in x). weight: (Cin, Cout, K, K).
template <typename Scalar>
Var<Scalar> conv_transpose2d(const Var<Scalar>& x, const Var<Scalar>& weight,
                             const Var<Scalar>* bias, int stride, int pad, int output_pad) {
  using Mat = detail::RowMatrix<Scalar>;
  const Shape in = x.shape();
  const Shape ws = weight.shape();
  if (ws.n != in.c || ws.h != ws.w) {
    throw ConfigError("conv_transpose2d: weight " + ws.str() + " incompatible with " + in.str());
  }
  const int k = ws.h;
  const int cout = ws.c;
  const int out_h = (in.h - 1) * stride - 2 * pad + k + output_pad;
  const int out_w = (in.w - 1) * stride - 2 * pad + k + output_pad;
  const Shape os{in.n, cout, out_h, out_w};

  typename Tensor<Scalar>::ConstMatrixMap wm(weight.value().data(), in.c, cout * k * k);
  Tensor<Scalar> out(os);
  Mat cols;
  for (int n = 0; n < in.n; ++n) {
    cols.noalias() = wm.transpose() * x.value().sample_matrix(n);
    detail::col2im(cols, cout, out_h, out_w, k, stride, pad, in.h, in.w,
                   out.data() + n * os.sample());
    if (bias) out.sample_matrix(n).colwise() += bias->value().array().matrix();
  }

  auto backward = [in, os, k, stride, pad, has_bias = bias != nullptr](Node<Scalar>& self) {
    auto& px = *self.parents[0];
    auto& pw = *self.parents[1];
    typename Tensor<Scalar>::ConstMatrixMap wm(pw.value.data(), in.c, os.c * k * k);
    Mat gcols;
    for (int n = 0; n < in.n; ++n) {
      detail::im2col(self.grad.data() + n * os.sample(), os.c, os.h, os.w, k, stride, pad, in.h,
                     in.w, gcols);
      if (px.requires_grad) px.grad_tensor().sample_matrix(n).noalias() += wm * gcols;
      if (pw.requires_grad) {
        typename Tensor<Scalar>::MatrixMap gw(pw.grad_tensor().data(), in.c, os.c * k * k);
        gw.noalias() += px.value.sample_matrix(n) * gcols.transpose();
      }
      if (has_bias && self.parents[2]->requires_grad) {
        self.parents[2]->grad_array() += self.grad.sample_matrix(n).rowwise().sum().array();
      }
    }
  };
  if (bias) return detail::record<Scalar>(std::move(out), {x, weight, *bias}, std::move(backward));
  return detail::record<Scalar>(std::move(out), {x, weight}, std::move(backward));
}

/// Dense layer on (N,F,1,1) features. weight: (O, F, 1, 1); bias: (1, O, 1, 1).
template <typename Scalar>
Var<Scalar> linear(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias) {
  using ConstMap = typename Tensor<Scalar>::ConstMatrixMap;
  using Map = typename Tensor<Scalar>::MatrixMap;
  const Shape in = x.shape();
  const Shape ws = weight.shape();
  const Eigen::Index features = in.sample();
  if (ws.c != features) {
    throw ConfigError("linear: weight " + ws.str() + " incompatible with input " + in.str());
  }
  ConstMap xm(x.value().data(), in.n, features);
  ConstMap wm(weight.value().data(), ws.n, features);
  Tensor<Scalar> out(Shape{in.n, ws.n, 1, 1});
  Map om(out.data(), in.n, ws.n);
  om.noalias() = xm * wm.transpose();
  om.rowwise() += bias.value().array().matrix().transpose();
  return detail::record<Scalar>(
      std::move(out), {x, weight, bias}, [in, features](Node<Scalar>& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        auto& pb = *self.parents[2];
        const int outs = pw.value.shape().n;
        ConstMap go(self.grad.data(), in.n, outs);
        if (px.requires_grad) {
          Map gx(px.grad_tensor().data(), in.n, features);
          gx.noalias() += go * ConstMap(pw.value.data(), outs, features);
        }
        if (pw.requires_grad) {
          Map gw(pw.grad_tensor().data(), outs, features);
          gw.noalias() += go.transpose() * ConstMap(px.value.data(), in.n, features);
        }
        if (pb.requires_grad) pb.grad_array() += go.colwise().sum().transpose().array();
      });
}

/// Rescales every sample to Euclidean norm `target`: target * x / ||x||.
template <typename Scalar>
Var<Scalar> normalize_samples(const Var<Scalar>& x, Scalar target) {
  const Shape in = x.shape();
  const Eigen::Index per = in.sample();
  Tensor<Scalar> out(in);
  std::vector<Scalar> norms(in.n);
  for (int n = 0; n < in.n; ++n) {
    const auto seg = x.value().array().segment(n * per, per);
    const double norm = std::sqrt(seg.template cast<double>().square().sum());
    if (!(norm > 0.0)) {
      throw std::domain_error("cannot normalize a zero-norm vector: direction undefined");
    }
    norms[n] = static_cast<Scalar>(norm);
    out.array().segment(n * per, per) =
        (seg.template cast<double>() * (static_cast<double>(target) / norm)).template cast<Scalar>();
  }
  return detail::record<Scalar>(
      std::move(out), {x}, [per, target, norms](Node<Scalar>& self) {
        auto& px = *self.parents[0];
        for (std::size_t n = 0; n < norms.size(); ++n) {
          const auto u = (px.value.array().segment(n * per, per) / norms[n]).eval();
          const auto go = self.grad.array().segment(n * per, per);
          const Scalar proj = (u * go).sum();
          px.grad_array().segment(n * per, per) += (go - u * proj) * (target / norms[n]);
        }
      });
}

}  // namespace sing
