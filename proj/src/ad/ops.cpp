#include "wplus/ad/ops.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_set>

#include "wplus/error.hpp"

namespace wplus::ad {

namespace {

thread_local bool g_grad_enabled = true;

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

void require(bool ok, const char* what) {
  if (!ok) throw ValidationError(what);
}

template <typename T>
bool wants(const Node<T>& self, std::size_t i) {
  return self.inputs[i]->requires_grad;
}

template <typename T>
Array<T>& grad_of(Node<T>& self, std::size_t i) {
  return self.inputs[i]->ensure_grad();
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
void backward(const Var<T>& output, const Array<T>* seed) {
  if (!output.defined() || !output.requires_grad()) return;

  // Post-order DFS: every node appears after all of its inputs.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(output.node(), 0);
  visited.insert(output.node());
  while (!stack.empty()) {
    Node<T>* n = stack.back().first;
    std::size_t idx = stack.back().second;
    if (idx < n->inputs.size()) {
      ++stack.back().second;
      Node<T>* child = n->inputs[idx].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (Node<T>* n : order)
    if (n->backward) n->grad.setZero(n->value.size());

  Array<T>& g = output.node()->ensure_grad();
  if (seed) {
    require(seed->size() == g.size(), "backward: seed size mismatch");
    g += *seed;
  } else {
    require(g.size() == 1, "backward: output is not a scalar");
    g += T(1);
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward) (*it)->backward(**it);
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require(a.size() == b.size(), "add: size mismatch");
  return make_node<T>(a.shape(), a.value() + b.value(), {a.ptr(), b.ptr()}, [](Node<T>& s) {
    if (wants(s, 0)) grad_of(s, 0) += s.grad;
    if (wants(s, 1)) grad_of(s, 1) += s.grad;
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require(a.size() == b.size(), "sub: size mismatch");
  return make_node<T>(a.shape(), a.value() - b.value(), {a.ptr(), b.ptr()}, [](Node<T>& s) {
    if (wants(s, 0)) grad_of(s, 0) += s.grad;
    if (wants(s, 1)) grad_of(s, 1) -= s.grad;
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require(a.size() == b.size(), "mul: size mismatch");
  return make_node<T>(a.shape(), a.value() * b.value(), {a.ptr(), b.ptr()}, [](Node<T>& s) {
    if (wants(s, 0)) grad_of(s, 0) += s.grad * s.inputs[1]->value;
    if (wants(s, 1)) grad_of(s, 1) += s.grad * s.inputs[0]->value;
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  return make_node<T>(a.shape(), a.value() * factor, {a.ptr()}, [factor](Node<T>& s) {
    grad_of(s, 0) += s.grad * factor;
  });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T offset) {
  return make_node<T>(a.shape(), a.value() + offset, {a.ptr()},
                      [](Node<T>& s) { grad_of(s, 0) += s.grad; });
}

template <typename T>
Var<T> channel_mul(const Var<T>& x, const Var<T>& sv) {
  const Shape sh = x.shape();
  require(sv.size() == sh.c, "channel_mul: vector length != channels");
  const int p = sh.plane();
  Array<T> out(x.size());
  for (int c = 0; c < sh.c; ++c) out.segment(Eigen::Index(c) * p, p) = x.value().segment(Eigen::Index(c) * p, p) * sv.value()[c];
  return make_node<T>(sh, std::move(out), {x.ptr(), sv.ptr()}, [p](Node<T>& s) {
    const int channels = s.shape.c;
    const auto& xv = s.inputs[0]->value;
    const auto& scale = s.inputs[1]->value;
    if (wants(s, 0)) {
      auto& gx = grad_of(s, 0);
      for (int c = 0; c < channels; ++c) gx.segment(Eigen::Index(c) * p, p) += s.grad.segment(Eigen::Index(c) * p, p) * scale[c];
    }
    if (wants(s, 1)) {
      auto& gs = grad_of(s, 1);
      for (int c = 0; c < channels; ++c)
        gs[c] += (s.grad.segment(Eigen::Index(c) * p, p) * xv.segment(Eigen::Index(c) * p, p)).sum();
    }
  });
}

template <typename T>
Var<T> channel_add(const Var<T>& x, const Var<T>& bv) {
  const Shape sh = x.shape();
  require(bv.size() == sh.c, "channel_add: vector length != channels");
  const int p = sh.plane();
  Array<T> out(x.size());
  for (int c = 0; c < sh.c; ++c) out.segment(Eigen::Index(c) * p, p) = x.value().segment(Eigen::Index(c) * p, p) + bv.value()[c];
  return make_node<T>(sh, std::move(out), {x.ptr(), bv.ptr()}, [p](Node<T>& s) {
    if (wants(s, 0)) grad_of(s, 0) += s.grad;
    if (wants(s, 1)) {
      auto& gb = grad_of(s, 1);
      for (int c = 0; c < s.shape.c; ++c) gb[c] += s.grad.segment(Eigen::Index(c) * p, p).sum();
    }
  });
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, int kernel, int stride, int pad) {
  const Shape in = x.shape();
  const int cout = weight.shape().c;
  const Eigen::Index k_len = Eigen::Index(in.c) * kernel * kernel;
  require(weight.shape().h == k_len, "conv2d: weight does not match input channels");
  const int ho = (in.h + 2 * pad - kernel) / stride + 1;
  const int wo = (in.w + 2 * pad - kernel) / stride + 1;
  require(ho > 0 && wo > 0, "conv2d: input smaller than kernel");
  const Eigen::Index p = Eigen::Index(ho) * wo;

  auto cols = std::make_shared<Matrix<T>>(p, k_len);
  const T* xv = x.value().data();
  for (int ci = 0; ci < in.c; ++ci)
    for (int ky = 0; ky < kernel; ++ky)
      for (int kx = 0; kx < kernel; ++kx) {
        T* col = cols->data() + ((Eigen::Index(ci) * kernel + ky) * kernel + kx) * p;
        const T* plane = xv + Eigen::Index(ci) * in.plane();
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          T* row = col + Eigen::Index(oy) * wo;
          if (iy < 0 || iy >= in.h) {
            std::fill(row, row + wo, T(0));
            continue;
          }
          const T* src = plane + Eigen::Index(iy) * in.w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            row[ox] = (ix < 0 || ix >= in.w) ? T(0) : src[ix];
          }
        }
      }

  Eigen::Map<const Matrix<T>> wt(weight.value().data(), k_len, cout);
  Array<T> out(p * cout);
  Eigen::Map<Matrix<T>>(out.data(), p, cout).noalias() = (*cols) * wt;

  return make_node<T>(Shape{cout, ho, wo}, std::move(out), {x.ptr(), weight.ptr()},
                      [cols, in, kernel, stride, pad, ho, wo, p, k_len, cout](Node<T>& s) {
    Eigen::Map<const Matrix<T>> dout(s.grad.data(), p, cout);
    if (wants(s, 1)) {
      Eigen::Map<Matrix<T>> dw(grad_of(s, 1).data(), k_len, cout);
      dw.noalias() += cols->transpose() * dout;
    }
    if (wants(s, 0)) {
      Eigen::Map<const Matrix<T>> wt(s.inputs[1]->value.data(), k_len, cout);
      Matrix<T> dcols = dout * wt.transpose();
      T* gx = grad_of(s, 0).data();
      for (int ci = 0; ci < in.c; ++ci)
        for (int ky = 0; ky < kernel; ++ky)
          for (int kx = 0; kx < kernel; ++kx) {
            const T* col = dcols.data() + ((Eigen::Index(ci) * kernel + ky) * kernel + kx) * p;
            T* plane = gx + Eigen::Index(ci) * in.plane();
            for (int oy = 0; oy < ho; ++oy) {
              const int iy = oy * stride - pad + ky;
              if (iy < 0 || iy >= in.h) continue;
              const T* row = col + Eigen::Index(oy) * wo;
              T* dst = plane + Eigen::Index(iy) * in.w;
              for (int ox = 0; ox < wo; ++ox) {
                const int ix = ox * stride - pad + kx;
                if (ix >= 0 && ix < in.w) dst[ix] += row[ox];
              }
            }
          }
    }
  });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  const int out_n = weight.shape().c;
  const int in_n = weight.shape().h;
  require(x.size() == in_n, "linear: input length mismatch");
  Eigen::Map<const Matrix<T>> wt(weight.value().data(), in_n, out_n);
  Array<T> y(out_n);
  y.matrix().noalias() = wt.transpose() * x.value().matrix();
  std::vector<NodePtr<T>> inputs{x.ptr(), weight.ptr()};
  if (bias.defined()) {
    require(bias.size() == out_n, "linear: bias length mismatch");
    y += bias.value();
    inputs.push_back(bias.ptr());
  }
  return make_node<T>(Shape::vec(out_n), std::move(y), std::move(inputs), [in_n, out_n](Node<T>& s) {
    Eigen::Map<const Matrix<T>> wt(s.inputs[1]->value.data(), in_n, out_n);
    if (wants(s, 0)) grad_of(s, 0).matrix().noalias() += wt * s.grad.matrix();
    if (wants(s, 1)) {
      Eigen::Map<Matrix<T>> dw(grad_of(s, 1).data(), in_n, out_n);
      dw.noalias() += s.inputs[0]->value.matrix() * s.grad.matrix().transpose();
    }
    if (s.inputs.size() > 2 && wants(s, 2)) grad_of(s, 2) += s.grad;
  });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
  Array<T> out = (x.value() > T(0)).select(x.value(), x.value() * slope);
  return make_node<T>(x.shape(), std::move(out), {x.ptr()}, [slope](Node<T>& s) {
    const auto& xv = s.inputs[0]->value;
    grad_of(s, 0) += (xv > T(0)).select(s.grad, s.grad * slope);
  });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  return leaky_relu<T>(x, T(0));
}

template <typename T>
Var<T> prelu(const Var<T>& x, const Var<T>& slope) {
  const Shape sh = x.shape();
  require(slope.size() == sh.c, "prelu: slope length != channels");
  const int p = sh.plane();
  Array<T> out(x.size());
  for (int c = 0; c < sh.c; ++c) {
    auto seg = x.value().segment(Eigen::Index(c) * p, p);
    out.segment(Eigen::Index(c) * p, p) = (seg > T(0)).select(seg, seg * slope.value()[c]);
  }
  return make_node<T>(sh, std::move(out), {x.ptr(), slope.ptr()}, [p](Node<T>& s) {
    const auto& xv = s.inputs[0]->value;
    const auto& a = s.inputs[1]->value;
    for (int c = 0; c < s.shape.c; ++c) {
      auto xs = xv.segment(Eigen::Index(c) * p, p);
      auto gs = s.grad.segment(Eigen::Index(c) * p, p);
      if (wants(s, 0)) grad_of(s, 0).segment(Eigen::Index(c) * p, p) += (xs > T(0)).select(gs, gs * a[c]);
      if (wants(s, 1)) grad_of(s, 1)[c] += (xs > T(0)).select(Array<T>::Zero(p), gs * xs).sum();
    }
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  Array<T> out = T(1) / (T(1) + (-x.value()).exp());
  return make_node<T>(x.shape(), std::move(out), {x.ptr()}, [](Node<T>& s) {
    grad_of(s, 0) += s.grad * s.value * (T(1) - s.value);
  });
}

template <typename T>
Var<T> tanh(const Var<T>& x) {
  Array<T> out = x.value().tanh();
  return make_node<T>(x.shape(), std::move(out), {x.ptr()}, [](Node<T>& s) {
    grad_of(s, 0) += s.grad * (T(1) - s.value.square());
  });
}

template <typename T>
Var<T> square(const Var<T>& x) {
  return make_node<T>(x.shape(), x.value().square(), {x.ptr()}, [](Node<T>& s) {
    grad_of(s, 0) += s.grad * T(2) * s.inputs[0]->value;
  });
}

template <typename T>
Var<T> rsqrt(const Var<T>& x, T eps) {
  Array<T> out = (x.value() + eps).rsqrt();
  return make_node<T>(x.shape(), std::move(out), {x.ptr()}, [](Node<T>& s) {
    grad_of(s, 0) += s.grad * T(-0.5) * s.value.cube();
  });
}

template <typename T>
Var<T> clamp(const Var<T>& x, T lo, T hi) {
  Array<T> out = x.value().max(lo).min(hi);
  return make_node<T>(x.shape(), std::move(out), {x.ptr()}, [lo, hi](Node<T>& s) {
    const auto& xv = s.inputs[0]->value;
    grad_of(s, 0) += (xv > lo && xv < hi).select(s.grad, T(0));
  });
}

template <typename T>
Var<T> sqrt(const Var<T>& x) {
  Array<T> out = x.value().max(T(0)).sqrt();
  return make_node<T>(x.shape(), std::move(out), {x.ptr()}, [](Node<T>& s) {
    grad_of(s, 0) += (s.value > T(0)).select(s.grad * T(0.5) / s.value, T(0));
  });
}

template <typename T>
Var<T> adaptive_avg_pool(const Var<T>& x, int out) {
  const Shape in = x.shape();
  require(out >= 1 && out <= in.h && out <= in.w, "adaptive_avg_pool: output larger than input");
  auto start = [](int i, int n, int o) { return (i * n) / o; };
  auto end = [](int i, int n, int o) { return ((i + 1) * n + o - 1) / o; };
  Array<T> res(Eigen::Index(in.c) * out * out);
  for (int c = 0; c < in.c; ++c)
    for (int oy = 0; oy < out; ++oy)
      for (int ox = 0; ox < out; ++ox) {
        const int y0 = start(oy, in.h, out), y1 = end(oy, in.h, out);
        const int x0 = start(ox, in.w, out), x1 = end(ox, in.w, out);
        T acc = 0;
        for (int y = y0; y < y1; ++y)
          for (int xx = x0; xx < x1; ++xx) acc += x.value()[(Eigen::Index(c) * in.h + y) * in.w + xx];
        res[(Eigen::Index(c) * out + oy) * out + ox] = acc / T((y1 - y0) * (x1 - x0));
      }
  return make_node<T>(Shape{in.c, out, out}, std::move(res), {x.ptr()}, [in, out, start, end](Node<T>& s) {
    auto& g = grad_of(s, 0);
    for (int c = 0; c < in.c; ++c)
      for (int oy = 0; oy < out; ++oy)
        for (int ox = 0; ox < out; ++ox) {
          const int y0 = start(oy, in.h, out), y1 = end(oy, in.h, out);
          const int x0 = start(ox, in.w, out), x1 = end(ox, in.w, out);
          const T share = s.grad[(Eigen::Index(c) * out + oy) * out + ox] / T((y1 - y0) * (x1 - x0));
          for (int y = y0; y < y1; ++y)
            for (int xx = x0; xx < x1; ++xx) g[(Eigen::Index(c) * in.h + y) * in.w + xx] += share;
        }
  });
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  const Shape in = x.shape();
  const int p = in.plane();
  Eigen::Map<const Matrix<T>> m(x.value().data(), p, in.c);
  Array<T> out = m.colwise().mean().transpose().array();
  return make_node<T>(Shape::vec(in.c), std::move(out), {x.ptr()}, [p](Node<T>& s) {
    auto& g = grad_of(s, 0);
    for (int c = 0; c < s.shape.c; ++c) g.segment(Eigen::Index(c) * p, p) += s.grad[c] / T(p);
  });
}

template <typename T>
Var<T> subsample(const Var<T>& x, int stride) {
  const Shape in = x.shape();
  const int ho = (in.h - 1) / stride + 1, wo = (in.w - 1) / stride + 1;
  Array<T> out(Eigen::Index(in.c) * ho * wo);
  for (int c = 0; c < in.c; ++c)
    for (int y = 0; y < ho; ++y)
      for (int xx = 0; xx < wo; ++xx)
        out[(Eigen::Index(c) * ho + y) * wo + xx] = x.value()[(Eigen::Index(c) * in.h + y * stride) * in.w + xx * stride];
  return make_node<T>(Shape{in.c, ho, wo}, std::move(out), {x.ptr()}, [in, ho, wo, stride](Node<T>& s) {
    auto& g = grad_of(s, 0);
    for (int c = 0; c < in.c; ++c)
      for (int y = 0; y < ho; ++y)
        for (int xx = 0; xx < wo; ++xx)
          g[(Eigen::Index(c) * in.h + y * stride) * in.w + xx * stride] += s.grad[(Eigen::Index(c) * ho + y) * wo + xx];
  });
}

template <typename T>
Var<T> upsample2x(const Var<T>& x) {
  const Shape in = x.shape();
  const Shape os{in.c, in.h * 2, in.w * 2};
  Array<T> out(os.size());
  for (int c = 0; c < in.c; ++c)
    for (int y = 0; y < os.h; ++y)
      for (int xx = 0; xx < os.w; ++xx)
        out[(Eigen::Index(c) * os.h + y) * os.w + xx] = x.value()[(Eigen::Index(c) * in.h + y / 2) * in.w + xx / 2];
  return make_node<T>(os, std::move(out), {x.ptr()}, [in, os](Node<T>& s) {
    auto& g = grad_of(s, 0);
    for (int c = 0; c < in.c; ++c)
      for (int y = 0; y < os.h; ++y)
        for (int xx = 0; xx < os.w; ++xx)
          g[(Eigen::Index(c) * in.h + y / 2) * in.w + xx / 2] += s.grad[(Eigen::Index(c) * os.h + y) * os.w + xx];
  });
}

template <typename T>
Var<T> avg_pool2x(const Var<T>& x) {
  const Shape in = x.shape();
  require(in.h % 2 == 0 && in.w % 2 == 0, "avg_pool2x: odd side");
  const Shape os{in.c, in.h / 2, in.w / 2};
  Array<T> out(os.size());
  const auto& v = x.value();
  for (int c = 0; c < in.c; ++c)
    for (int y = 0; y < os.h; ++y)
      for (int xx = 0; xx < os.w; ++xx) {
        const Eigen::Index base = (Eigen::Index(c) * in.h + 2 * y) * in.w + 2 * xx;
        out[(Eigen::Index(c) * os.h + y) * os.w + xx] = T(0.25) * (v[base] + v[base + 1] + v[base + in.w] + v[base + in.w + 1]);
      }
  return make_node<T>(os, std::move(out), {x.ptr()}, [in, os](Node<T>& s) {
    auto& g = grad_of(s, 0);
    for (int c = 0; c < in.c; ++c)
      for (int y = 0; y < os.h; ++y)
        for (int xx = 0; xx < os.w; ++xx) {
          const T share = T(0.25) * s.grad[(Eigen::Index(c) * os.h + y) * os.w + xx];
          const Eigen::Index base = (Eigen::Index(c) * in.h + 2 * y) * in.w + 2 * xx;
          g[base] += share;
          g[base + 1] += share;
          g[base + in.w] += share;
          g[base + in.w + 1] += share;
        }
  });
}

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  require(a.shape().h == b.shape().h && a.shape().w == b.shape().w, "concat_channels: spatial mismatch");
  Array<T> out(a.size() + b.size());
  out << a.value(), b.value();
  const Eigen::Index na = a.size(), nb = b.size();
  return make_node<T>(Shape{a.shape().c + b.shape().c, a.shape().h, a.shape().w}, std::move(out), {a.ptr(), b.ptr()},
                      [na, nb](Node<T>& s) {
                        if (wants(s, 0)) grad_of(s, 0) += s.grad.head(na);
                        if (wants(s, 1)) grad_of(s, 1) += s.grad.tail(nb);
                      });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts) {
  Eigen::Index total = 0;
  std::vector<NodePtr<T>> inputs;
  for (const auto& v : parts) {
    total += v.size();
    inputs.push_back(v.ptr());
  }
  Array<T> out(total);
  Eigen::Index off = 0;
  for (const auto& v : parts) {
    out.segment(off, v.size()) = v.value();
    off += v.size();
  }
  return make_node<T>(Shape::vec(total), std::move(out), std::move(inputs), [](Node<T>& s) {
    Eigen::Index o = 0;
    for (std::size_t i = 0; i < s.inputs.size(); ++i) {
      const Eigen::Index n = s.inputs[i]->value.size();
      if (wants(s, i)) grad_of(s, i) += s.grad.segment(o, n);
      o += n;
    }
  });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  require(shape.size() == x.size(), "reshape: size mismatch");
  return make_node<T>(shape, x.value(), {x.ptr()}, [](Node<T>& s) { grad_of(s, 0) += s.grad; });
}

template <typename T>
Var<T> slice(const Var<T>& x, Eigen::Index offset, Eigen::Index count) {
  require(offset >= 0 && count >= 0 && offset + count <= x.size(), "slice: out of range");
  return make_node<T>(Shape::vec(count), x.value().segment(offset, count), {x.ptr()}, [offset, count](Node<T>& s) {
    grad_of(s, 0).segment(offset, count) += s.grad;
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  return make_node<T>(Shape{}, Array<T>::Constant(1, x.value().sum()), {x.ptr()},
                      [](Node<T>& s) { grad_of(s, 0) += s.grad[0]; });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  const T n = T(x.size());
  return make_node<T>(Shape{}, Array<T>::Constant(1, x.value().sum() / n), {x.ptr()},
                      [n](Node<T>& s) { grad_of(s, 0) += s.grad[0] / n; });
}

template <typename T>
Var<T> sum_squares(const Var<T>& x) {
  return make_node<T>(Shape{}, Array<T>::Constant(1, x.value().square().sum()), {x.ptr()}, [](Node<T>& s) {
    grad_of(s, 0) += T(2) * s.grad[0] * s.inputs[0]->value;
  });
}

template <typename T>
Var<T> cosine(const Var<T>& a, const Var<T>& b) {
  require(a.size() == b.size(), "cosine: size mismatch");
  const T na = a.value().matrix().norm();
  const T nb = b.value().matrix().norm();
  const bool degenerate = !(na > T(0)) || !(nb > T(0));
  T c = degenerate ? T(0) : (a.value() * b.value()).sum() / (na * nb);
  if (!degenerate && (a.value() == b.value()).all()) c = T(1);
  return make_node<T>(Shape{}, Array<T>::Constant(1, c), {a.ptr(), b.ptr()}, [na, nb, c, degenerate](Node<T>& s) {
    if (degenerate) return;
    const T g = s.grad[0];
    const auto& av = s.inputs[0]->value;
    const auto& bv = s.inputs[1]->value;
    if (wants(s, 0)) grad_of(s, 0) += g * (bv / (na * nb) - c * av / (na * na));
    if (wants(s, 1)) grad_of(s, 1) += g * (av / (na * nb) - c * bv / (nb * nb));
  });
}

template <typename T>
Var<T> channel_normalize(const Var<T>& x, T eps) {
  const Shape sh = x.shape();
  const int p = sh.plane();
  Eigen::Map<const Matrix<T>> m(x.value().data(), p, sh.c);
  Array<T> inv = (m.rowwise().squaredNorm().array() + eps).rsqrt();
  Array<T> out(x.size());
  Eigen::Map<Matrix<T>>(out.data(), p, sh.c) = inv.matrix().asDiagonal() * m;
  return make_node<T>(sh, std::move(out), {x.ptr()}, [inv, p](Node<T>& s) {
    // d(x_c * r)/dx = r * (g - n * <g, n>) with n = x * r.
    Eigen::Map<const Matrix<T>> n(s.value.data(), p, s.shape.c);
    Eigen::Map<const Matrix<T>> g(s.grad.data(), p, s.shape.c);
    Array<T> proj = (n.array() * g.array()).rowwise().sum();
    Eigen::Map<Matrix<T>> gx(grad_of(s, 0).data(), p, s.shape.c);
    gx += inv.matrix().asDiagonal() * (g - proj.matrix().asDiagonal() * n);
  });
}

template <typename T>
Var<T> kernel_energy(const Var<T>& weight, int cin) {
  const int cout = weight.shape().c;
  const Eigen::Index kk = weight.shape().h / cin;
  require(kk * cin == weight.shape().h, "kernel_energy: bad channel count");
  Eigen::Map<const Matrix<T>> w(weight.value().data(), kk, Eigen::Index(cout) * cin);
  Array<T> out = w.colwise().squaredNorm().transpose().array();
  return make_node<T>(Shape{cout, cin, 1}, std::move(out), {weight.ptr()}, [kk, cout, cin](Node<T>& s) {
    auto& g = grad_of(s, 0);
    const auto& w = s.inputs[0]->value;
    for (Eigen::Index j = 0; j < Eigen::Index(cout) * cin; ++j)
      g.segment(j * kk, kk) += T(2) * s.grad[j] * w.segment(j * kk, kk);
  });
}

#define WPLUS_INSTANTIATE(T)                                                              \
  template void backward<T>(const Var<T>&, const Array<T>*);                             \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                  \
  template Var<T> sub<T>(const Var<T>&, const Var<T>&);                                  \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                  \
  template Var<T> scale<T>(const Var<T>&, T);                                            \
  template Var<T> add_scalar<T>(const Var<T>&, T);                                       \
  template Var<T> channel_mul<T>(const Var<T>&, const Var<T>&);                          \
  template Var<T> channel_add<T>(const Var<T>&, const Var<T>&);                          \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, int, int, int);                \
  template Var<T> linear<T>(const Var<T>&, const Var<T>&, const Var<T>&);                \
  template Var<T> leaky_relu<T>(const Var<T>&, T);                                       \
  template Var<T> relu<T>(const Var<T>&);                                                \
  template Var<T> prelu<T>(const Var<T>&, const Var<T>&);                                \
  template Var<T> sigmoid<T>(const Var<T>&);                                             \
  template Var<T> tanh<T>(const Var<T>&);                                                \
  template Var<T> square<T>(const Var<T>&);                                              \
  template Var<T> rsqrt<T>(const Var<T>&, T);                                            \
  template Var<T> sqrt<T>(const Var<T>&);                                                \
  template Var<T> clamp<T>(const Var<T>&, T, T);                                         \
  template Var<T> adaptive_avg_pool<T>(const Var<T>&, int);                              \
  template Var<T> global_avg_pool<T>(const Var<T>&);                                     \
  template Var<T> subsample<T>(const Var<T>&, int);                                      \
  template Var<T> upsample2x<T>(const Var<T>&);                                          \
  template Var<T> avg_pool2x<T>(const Var<T>&);                                          \
  template Var<T> concat_channels<T>(const Var<T>&, const Var<T>&);                      \
  template Var<T> concat<T>(const std::vector<Var<T>>&);                                 \
  template Var<T> reshape<T>(const Var<T>&, Shape);                                      \
  template Var<T> slice<T>(const Var<T>&, Eigen::Index, Eigen::Index);                   \
  template Var<T> sum<T>(const Var<T>&);                                                 \
  template Var<T> mean<T>(const Var<T>&);                                                \
  template Var<T> sum_squares<T>(const Var<T>&);                                         \
  template Var<T> cosine<T>(const Var<T>&, const Var<T>&);                               \
  template Var<T> channel_normalize<T>(const Var<T>&, T);                                \
  template Var<T> kernel_energy<T>(const Var<T>&, int);

WPLUS_INSTANTIATE(float)
WPLUS_INSTANTIATE(double)

}  // namespace wplus::ad
