#include "iman/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace iman {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << "x";
    os << s[i];
  }
  os << "]";
  return os.str();
}

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  mutable std::vector<double> grad;
  std::vector<Tensor> parents;
  std::function<void(const Tensor&)> backward;
  std::uint64_t id = 0;
};

namespace {

std::atomic<std::uint64_t> g_next_id{1};
thread_local bool g_grad_enabled = true;

std::size_t checked_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::shared_ptr<TensorNode> new_node(Shape shape, std::vector<double> data) {
  const std::size_t n = checked_numel(shape);
  if (data.size() != n)
    throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                     shape_str(shape));
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  return node;
}

}  // namespace

Tensor make_node(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                 std::function<void(const Tensor&)> backward) {
  auto node = new_node(std::move(shape), std::move(data));
  bool needs_grad = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) needs_grad = needs_grad || p.requires_grad();
  }
  if (needs_grad) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

}  // namespace detail

bool grad_enabled() { return detail::g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(detail::g_grad_enabled) { detail::g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { detail::g_grad_enabled = previous_; }

// ---- Tensor basics ----

Tensor Tensor::zeros(Shape shape) {
  const std::size_t n = [&] {
    std::size_t m = 1;
    for (std::size_t d : shape) m *= d;
    return m;
  }();
  return Tensor(detail::new_node(std::move(shape), std::vector<double>(n, 0.0)));
}

Tensor Tensor::full(Shape shape, double value) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return Tensor(detail::new_node(std::move(shape), std::vector<double>(n, value)));
}

Tensor Tensor::from(Shape shape, std::vector<double> data) {
  return Tensor(detail::new_node(std::move(shape), std::move(data)));
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

Tensor Tensor::param(Shape shape, std::vector<double> data) {
  Tensor t = from(std::move(shape), std::move(data));
  t.node_->requires_grad = true;
  return t;
}

const Shape& Tensor::shape() const {
  if (!node_) throw Error("use of undefined tensor");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t i) const {
  const Shape& s = shape();
  if (i >= s.size())
    throw ShapeError("axis " + std::to_string(i) + " out of range for " + shape_str(s));
  return s[i];
}

std::size_t Tensor::numel() const { return data().size(); }

const std::vector<double>& Tensor::data() const {
  if (!node_) throw Error("use of undefined tensor");
  return node_->data;
}

std::vector<double>& Tensor::mutable_data() {
  if (!node_) throw Error("use of undefined tensor");
  return node_->data;
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool value) {
  if (!node_) throw Error("use of undefined tensor");
  node_->requires_grad = value;
  return *this;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

const std::vector<double>& Tensor::grad() const {
  if (!has_grad()) throw Error("tensor has no gradient");
  return node_->grad;
}

std::vector<double>& Tensor::grad_buffer() const {
  if (!node_) throw Error("use of undefined tensor");
  if (node_->grad.empty()) node_->grad.assign(node_->data.size(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() requires a single-element tensor, got " + shape_str(shape()));
  return data()[0];
}

double Tensor::at(std::size_t flat_index) const {
  if (flat_index >= numel()) throw ShapeError("flat index out of range");
  return data()[flat_index];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const Shape& s = shape();
  if (index.size() != s.size()) throw ShapeError("index rank mismatch for " + shape_str(s));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= s[axis]) throw ShapeError("index out of range on axis " + std::to_string(axis));
    flat = flat * s[axis] + i;
    ++axis;
  }
  return data()[flat];
}

bool Tensor::all_finite() const {
  for (double v : data())
    if (!std::isfinite(v)) return false;
  return true;
}

void Tensor::backward() const {
  if (numel() != 1) throw ShapeError("backward() requires a scalar loss, got " + shape_str(shape()));
  if (!requires_grad()) throw Error("backward() on a tensor that does not require grad");

  // Topological order: within one graph node ids strictly increase with
  // creation, so descending id is a valid reverse order.
  std::vector<std::shared_ptr<detail::TensorNode>> order;
  std::unordered_set<const detail::TensorNode*> seen;
  std::vector<std::shared_ptr<detail::TensorNode>> stack{node_};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& p : n->parents) {
      const auto& pn = p.node();
      if (pn->requires_grad && seen.insert(pn.get()).second) stack.push_back(pn);
    }
  }
  std::sort(order.begin(), order.end(),
            [](const auto& a, const auto& b) { return a->id > b->id; });

  grad_buffer()[0] += 1.0;
  for (const auto& n : order) {
    if (n->backward && !n->grad.empty()) n->backward(Tensor(n));
  }
}

// ---- helpers ----

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

Tensor elementwise_unary(const Tensor& a, const std::function<double(double)>& f,
                         const std::function<double(double, double)>& df_dy) {
  const auto& x = a.data();
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return detail::make_node(a.shape(), std::move(y), {a}, [a, df_dy](const Tensor& out) {
    if (!a.requires_grad()) return;
    auto& ga = a.grad_buffer();
    const auto& g = out.grad();
    const auto& x = a.data();
    const auto& yv = out.data();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df_dy(x[i], yv[i]);
  });
}

}  // namespace

// ---- elementwise ops ----

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  const auto& av = a.data();
  const auto& bv = b.data();
  std::vector<double> y(av.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] + bv[i];
  return detail::make_node(a.shape(), std::move(y), {a, b}, [a, b](const Tensor& out) {
    const auto& g = out.grad();
    if (a.requires_grad()) {
      auto& ga = a.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto& gb = b.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  const auto& av = a.data();
  const auto& bv = b.data();
  std::vector<double> y(av.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] - bv[i];
  return detail::make_node(a.shape(), std::move(y), {a, b}, [a, b](const Tensor& out) {
    const auto& g = out.grad();
    if (a.requires_grad()) {
      auto& ga = a.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto& gb = b.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  const auto& av = a.data();
  const auto& bv = b.data();
  std::vector<double> y(av.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] * bv[i];
  return detail::make_node(a.shape(), std::move(y), {a, b}, [a, b](const Tensor& out) {
    const auto& g = out.grad();
    const auto& av = a.data();
    const auto& bv = b.data();
    if (a.requires_grad()) {
      auto& ga = a.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (b.requires_grad()) {
      auto& gb = b.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor scale(const Tensor& a, double c) {
  const auto& av = a.data();
  std::vector<double> y(av.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] * c;
  return detail::make_node(a.shape(), std::move(y), {a}, [a, c](const Tensor& out) {
    if (!a.requires_grad()) return;
    auto& ga = a.grad_buffer();
    const auto& g = out.grad();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
  });
}

Tensor add_scalar(const Tensor& a, double c) {
  const auto& av = a.data();
  std::vector<double> y(av.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] + c;
  return detail::make_node(a.shape(), std::move(y), {a}, [a](const Tensor& out) {
    if (!a.requires_grad()) return;
    auto& ga = a.grad_buffer();
    const auto& g = out.grad();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Tensor relu(const Tensor& a) {
  return elementwise_unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& a) {
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  constexpr double inv_sqrt2pi = 0.3989422804014326779;
  return elementwise_unary(
      a, [=](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
      [=](double x, double) {
        const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
        const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
        return cdf + x * pdf;
      });
}

Tensor sqrt(const Tensor& a) {
  for (double v : a.data())
    if (!(v >= 0.0)) throw EvalError("sqrt of negative value");
  return elementwise_unary(
      a, [](double x) { return std::sqrt(x); },
      [](double, double y) { return 0.5 / y; });
}

Tensor recip(const Tensor& a) {
  for (double v : a.data())
    if (v == 0.0) throw EvalError("reciprocal of zero");
  return elementwise_unary(
      a, [](double x) { return 1.0 / x; },
      [](double, double y) { return -y * y; });
}

Tensor softplus(const Tensor& a) {
  return elementwise_unary(
      a,
      [](double x) { return (x > 0.0 ? x : 0.0) + std::log1p(std::exp(-std::fabs(x))); },
      [](double x, double) {
        return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
      });
}

Tensor sigmoid(const Tensor& a) {
  return elementwise_unary(
      a,
      [](double x) {
        return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
      },
      [](double, double y) { return y * (1.0 - y); });
}

// ---- linear algebra ----

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2)
    throw ShapeError("matmul requires 2-D operands, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2)
    throw ShapeError("matmul inner dimension mismatch: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  const auto& av = a.data();
  const auto& bv = b.data();
  std::vector<double> y(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = &av[i * k];
    double* yrow = &y[i * n];
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av_ik = arow[kk];
      const double* brow = &bv[kk * n];
      for (std::size_t j = 0; j < n; ++j) yrow[j] += av_ik * brow[j];
    }
  }
  return detail::make_node({m, n}, std::move(y), {a, b}, [a, b, m, k, n](const Tensor& out) {
    const auto& g = out.grad();
    const auto& av = a.data();
    const auto& bv = b.data();
    if (a.requires_grad()) {
      auto& ga = a.grad_buffer();
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = &g[i * n];
        for (std::size_t kk = 0; kk < k; ++kk) {
          const double* brow = &bv[kk * n];
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          ga[i * k + kk] += acc;
        }
      }
    }
    if (b.requires_grad()) {
      auto& gb = b.grad_buffer();
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = &g[i * n];
        const double* arow = &av[i * k];
        for (std::size_t kk = 0; kk < k; ++kk) {
          const double av_ik = arow[kk];
          double* gbrow = &gb[kk * n];
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += av_ik * grow[j];
        }
      }
    }
  });
}

Tensor transpose(const Tensor& a) {
  if (a.ndim() != 2) throw ShapeError("transpose requires a 2-D tensor, got " + shape_str(a.shape()));
  const std::size_t m = a.dim(0), n = a.dim(1);
  const auto& av = a.data();
  std::vector<double> y(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) y[j * m + i] = av[i * n + j];
  return detail::make_node({n, m}, std::move(y), {a}, [a, m, n](const Tensor& out) {
    if (!a.requires_grad()) return;
    auto& ga = a.grad_buffer();
    const auto& g = out.grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
  });
}

// ---- normalization ----

Tensor softmax(const Tensor& x, std::size_t axis) {
  const Shape& s = x.shape();
  if (axis >= s.size())
    throw ShapeError("softmax axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  const std::size_t n = s[axis];
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];

  const auto& xv = x.data();
  std::vector<double> y(xv.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double mx = xv[base];
      for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, xv[base + i * inner]);
      double sum = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double e = std::exp(xv[base + i * inner] - mx);
        y[base + i * inner] = e;
        sum += e;
      }
      const double inv = 1.0 / sum;
      for (std::size_t i = 0; i < n; ++i) y[base + i * inner] *= inv;
    }
  }
  return detail::make_node(s, std::move(y), {x}, [x, n, outer, inner](const Tensor& out) {
    if (!x.requires_grad()) return;
    auto& gx = x.grad_buffer();
    const auto& g = out.grad();
    const auto& yv = out.data();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * n * inner + in;
        double dot = 0.0;
        for (std::size_t i = 0; i < n; ++i) dot += g[base + i * inner] * yv[base + i * inner];
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t p = base + i * inner;
          gx[p] += yv[p] * (g[p] - dot);
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (eps <= 0.0) throw ParamError("layer_norm eps must be positive");
  const Shape& s = x.shape();
  const std::size_t n = s.back();
  if (gain.ndim() != 1 || gain.numel() != n || bias.ndim() != 1 || bias.numel() != n)
    throw ShapeError("layer_norm gain/bias must have length " + std::to_string(n));
  const std::size_t lanes = x.numel() / n;

  const auto& xv = x.data();
  const auto& gv = gain.data();
  const auto& bv = bias.data();
  std::vector<double> y(xv.size());
  auto stats = std::make_shared<std::vector<double>>(2 * lanes);  // mean, rstd per lane
  for (std::size_t l = 0; l < lanes; ++l) {
    const double* row = &xv[l * n];
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += row[i];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = row[i] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double rstd = 1.0 / std::sqrt(var + eps);
    (*stats)[2 * l] = mean;
    (*stats)[2 * l + 1] = rstd;
    for (std::size_t i = 0; i < n; ++i) y[l * n + i] = gv[i] * (row[i] - mean) * rstd + bv[i];
  }
  return detail::make_node(
      s, std::move(y), {x, gain, bias}, [x, gain, bias, n, lanes, stats](const Tensor& out) {
        const auto& g = out.grad();
        const auto& xv = x.data();
        const auto& gv = gain.data();
        for (std::size_t l = 0; l < lanes; ++l) {
          const double mean = (*stats)[2 * l];
          const double rstd = (*stats)[2 * l + 1];
          const double* row = &xv[l * n];
          const double* grow = &g[l * n];
          double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
          for (std::size_t i = 0; i < n; ++i) {
            const double xhat = (row[i] - mean) * rstd;
            const double dxhat = grow[i] * gv[i];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
          }
          const double inv_n = 1.0 / static_cast<double>(n);
          if (x.requires_grad()) {
            auto& gx = x.grad_buffer();
            for (std::size_t i = 0; i < n; ++i) {
              const double xhat = (row[i] - mean) * rstd;
              const double dxhat = grow[i] * gv[i];
              gx[l * n + i] += rstd * (dxhat - inv_n * sum_dxhat - xhat * inv_n * sum_dxhat_xhat);
            }
          }
          if (gain.requires_grad()) {
            auto& gg = gain.grad_buffer();
            for (std::size_t i = 0; i < n; ++i)
              gg[i] += grow[i] * (row[i] - mean) * rstd;
          }
          if (bias.requires_grad()) {
            auto& gb = bias.grad_buffer();
            for (std::size_t i = 0; i < n; ++i) gb[i] += grow[i];
          }
        }
      });
}

// ---- reductions ----

Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return detail::make_node({1}, {s}, {a}, [a](const Tensor& out) {
    if (!a.requires_grad()) return;
    auto& ga = a.grad_buffer();
    const double g = out.grad()[0];
    for (auto& v : ga) v += g;
  });
}

Tensor mean_axis(const Tensor& a, std::size_t axis) {
  if (a.ndim() != 2) throw ShapeError("mean_axis requires a 2-D tensor, got " + shape_str(a.shape()));
  if (axis > 1) throw ShapeError("mean_axis axis must be 0 or 1");
  const std::size_t m = a.dim(0), n = a.dim(1);
  const auto& av = a.data();
  if (axis == 0) {
    std::vector<double> y(n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) y[j] += av[i * n + j];
    for (auto& v : y) v /= static_cast<double>(m);
    return detail::make_node({n}, std::move(y), {a}, [a, m, n](const Tensor& out) {
      if (!a.requires_grad()) return;
      auto& ga = a.grad_buffer();
      const auto& g = out.grad();
      const double inv = 1.0 / static_cast<double>(m);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j] * inv;
    });
  }
  std::vector<double> y(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += av[i * n + j];
    y[i] = s / static_cast<double>(n);
  }
  return detail::make_node({m}, std::move(y), {a}, [a, m, n](const Tensor& out) {
    if (!a.requires_grad()) return;
    auto& ga = a.grad_buffer();
    const auto& g = out.grad();
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[i] * inv;
  });
}

// ---- structure ----

Tensor reshape(const Tensor& a, Shape shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  if (n != a.numel())
    throw ShapeError("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape) +
                     " changes element count");
  return detail::make_node(std::move(shape), a.data(), {a}, [a](const Tensor& out) {
    if (!a.requires_grad()) return;
    auto& ga = a.grad_buffer();
    const auto& g = out.grad();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows of an empty list");
  const std::size_t n = parts[0].dim(1);
  std::size_t m = 0;
  for (const auto& p : parts) {
    if (p.ndim() != 2 || p.dim(1) != n)
      throw ShapeError("concat_rows column mismatch: expected " + std::to_string(n) + " columns, got " +
                       shape_str(p.shape()));
    m += p.dim(0);
  }
  std::vector<double> y;
  y.reserve(m * n);
  for (const auto& p : parts) y.insert(y.end(), p.data().begin(), p.data().end());
  return detail::make_node({m, n}, std::move(y), parts, [parts, n](const Tensor& out) {
    const auto& g = out.grad();
    std::size_t row = 0;
    for (const auto& p : parts) {
      const std::size_t pm = p.dim(0);
      if (p.requires_grad()) {
        auto& gp = p.grad_buffer();
        for (std::size_t i = 0; i < pm * n; ++i) gp[i] += g[row * n + i];
      }
      row += pm;
    }
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols of an empty list");
  const std::size_t m = parts[0].dim(0);
  std::size_t n = 0;
  for (const auto& p : parts) {
    if (p.ndim() != 2 || p.dim(0) != m)
      throw ShapeError("concat_cols row mismatch: expected " + std::to_string(m) + " rows, got " +
                       shape_str(p.shape()));
    n += p.dim(1);
  }
  std::vector<double> y(m * n);
  std::size_t col = 0;
  for (const auto& p : parts) {
    const std::size_t pn = p.dim(1);
    const auto& pv = p.data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < pn; ++j) y[i * n + col + j] = pv[i * pn + j];
    col += pn;
  }
  return detail::make_node({m, n}, std::move(y), parts, [parts, m, n](const Tensor& out) {
    const auto& g = out.grad();
    std::size_t col = 0;
    for (const auto& p : parts) {
      const std::size_t pn = p.dim(1);
      if (p.requires_grad()) {
        auto& gp = p.grad_buffer();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < pn; ++j) gp[i * pn + j] += g[i * n + col + j];
      }
      col += pn;
    }
  });
}

Tensor slice_rows(const Tensor& a, std::size_t r0, std::size_t r1) {
  if (a.ndim() != 2) throw ShapeError("slice_rows requires a 2-D tensor");
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (r0 >= r1 || r1 > m) throw ShapeError("slice_rows range out of bounds");
  const auto& av = a.data();
  std::vector<double> y(av.begin() + r0 * n, av.begin() + r1 * n);
  return detail::make_node({r1 - r0, n}, std::move(y), {a}, [a, r0, n](const Tensor& out) {
    if (!a.requires_grad()) return;
    auto& ga = a.grad_buffer();
    const auto& g = out.grad();
    for (std::size_t i = 0; i < g.size(); ++i) ga[r0 * n + i] += g[i];
  });
}

Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t c1) {
  if (a.ndim() != 2) throw ShapeError("slice_cols requires a 2-D tensor");
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (c0 >= c1 || c1 > n) throw ShapeError("slice_cols range out of bounds");
  const std::size_t w = c1 - c0;
  const auto& av = a.data();
  std::vector<double> y(m * w);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < w; ++j) y[i * w + j] = av[i * n + c0 + j];
  return detail::make_node({m, w}, std::move(y), {a}, [a, c0, m, n, w](const Tensor& out) {
    if (!a.requires_grad()) return;
    auto& ga = a.grad_buffer();
    const auto& g = out.grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) ga[i * n + c0 + j] += g[i * w + j];
  });
}

// ---- row/column affine ----

Tensor scale_rows(const Tensor& x, const Tensor& s) {
  if (x.ndim() != 2 || s.ndim() != 1 || s.numel() != x.dim(0))
    throw ShapeError("scale_rows: need x[m,n] and s[m], got " + shape_str(x.shape()) + " and " +
                     shape_str(s.shape()));
  const std::size_t m = x.dim(0), n = x.dim(1);
  const auto& xv = x.data();
  const auto& sv = s.data();
  std::vector<double> y(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) y[i * n + j] = xv[i * n + j] * sv[i];
  return detail::make_node({m, n}, std::move(y), {x, s}, [x, s, m, n](const Tensor& out) {
    const auto& g = out.grad();
    const auto& xv = x.data();
    const auto& sv = s.data();
    if (x.requires_grad()) {
      auto& gx = x.grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[i * n + j] * sv[i];
    }
    if (s.requires_grad()) {
      auto& gs = s.grad_buffer();
      for (std::size_t i = 0; i < m; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * xv[i * n + j];
        gs[i] += acc;
      }
    }
  });
}

Tensor shift_rows(const Tensor& x, const Tensor& b) {
  if (x.ndim() != 2 || b.ndim() != 1 || b.numel() != x.dim(0))
    throw ShapeError("shift_rows: need x[m,n] and b[m], got " + shape_str(x.shape()) + " and " +
                     shape_str(b.shape()));
  const std::size_t m = x.dim(0), n = x.dim(1);
  const auto& xv = x.data();
  const auto& bv = b.data();
  std::vector<double> y(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) y[i * n + j] = xv[i * n + j] + bv[i];
  return detail::make_node({m, n}, std::move(y), {x, b}, [x, b, m, n](const Tensor& out) {
    const auto& g = out.grad();
    if (x.requires_grad()) {
      auto& gx = x.grad_buffer();
      for (std::size_t i = 0; i < m * n; ++i) gx[i] += g[i];
    }
    if (b.requires_grad()) {
      auto& gb = b.grad_buffer();
      for (std::size_t i = 0; i < m; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j];
        gb[i] += acc;
      }
    }
  });
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
  if (x.ndim() != 2 || v.ndim() != 1 || v.numel() != x.dim(1))
    throw ShapeError("add_rowvec: need x[m,n] and v[n], got " + shape_str(x.shape()) + " and " +
                     shape_str(v.shape()));
  const std::size_t m = x.dim(0), n = x.dim(1);
  const auto& xv = x.data();
  const auto& vv = v.data();
  std::vector<double> y(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) y[i * n + j] = xv[i * n + j] + vv[j];
  return detail::make_node({m, n}, std::move(y), {x, v}, [x, v, m, n](const Tensor& out) {
    const auto& g = out.grad();
    if (x.requires_grad()) {
      auto& gx = x.grad_buffer();
      for (std::size_t i = 0; i < m * n; ++i) gx[i] += g[i];
    }
    if (v.requires_grad()) {
      auto& gv = v.grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gv[j] += g[i * n + j];
    }
  });
}

// ---- convolution ----

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride,
              std::size_t pad) {
  if (x.ndim() != 3) throw ShapeError("conv2d input must be [C,H,W], got " + shape_str(x.shape()));
  if (w.ndim() != 4) throw ShapeError("conv2d weight must be [O,C,kh,kw], got " + shape_str(w.shape()));
  if (stride == 0) throw ParamError("conv2d stride must be positive");
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::size_t O = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != C)
    throw ShapeError("conv2d channel mismatch: input " + shape_str(x.shape()) + ", weight " +
                     shape_str(w.shape()));
  if (b.ndim() != 1 || b.numel() != O) throw ShapeError("conv2d bias must have length " + std::to_string(O));
  if (H + 2 * pad < kh || W + 2 * pad < kw)
    throw ShapeError("conv2d kernel larger than padded input");
  const std::size_t Ho = (H + 2 * pad - kh) / stride + 1;
  const std::size_t Wo = (W + 2 * pad - kw) / stride + 1;

  const auto& xv = x.data();
  const auto& wv = w.data();
  const auto& bv = b.data();
  std::vector<double> y(O * Ho * Wo, 0.0);
  for (std::size_t o = 0; o < O; ++o) {
    for (std::size_t i = 0; i < Ho; ++i) {
      for (std::size_t j = 0; j < Wo; ++j) {
        double acc = bv[o];
        for (std::size_t c = 0; c < C; ++c) {
          for (std::size_t u = 0; u < kh; ++u) {
            const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(i * stride + u) -
                                     static_cast<std::ptrdiff_t>(pad);
            if (r < 0 || r >= static_cast<std::ptrdiff_t>(H)) continue;
            for (std::size_t v = 0; v < kw; ++v) {
              const std::ptrdiff_t cidx = static_cast<std::ptrdiff_t>(j * stride + v) -
                                          static_cast<std::ptrdiff_t>(pad);
              if (cidx < 0 || cidx >= static_cast<std::ptrdiff_t>(W)) continue;
              acc += wv[((o * C + c) * kh + u) * kw + v] * xv[(c * H + r) * W + cidx];
            }
          }
        }
        y[(o * Ho + i) * Wo + j] = acc;
      }
    }
  }
  return detail::make_node(
      {O, Ho, Wo}, std::move(y), {x, w, b},
      [x, w, b, stride, pad, C, H, W, O, kh, kw, Ho, Wo](const Tensor& out) {
        const auto& g = out.grad();
        const auto& xv = x.data();
        const auto& wv = w.data();
        const bool need_x = x.requires_grad();
        const bool need_w = w.requires_grad();
        auto* gx = need_x ? &x.grad_buffer() : nullptr;
        auto* gw = need_w ? &w.grad_buffer() : nullptr;
        if (b.requires_grad()) {
          auto& gb = b.grad_buffer();
          for (std::size_t o = 0; o < O; ++o) {
            double acc = 0.0;
            for (std::size_t p = 0; p < Ho * Wo; ++p) acc += g[o * Ho * Wo + p];
            gb[o] += acc;
          }
        }
        if (!need_x && !need_w) return;
        for (std::size_t o = 0; o < O; ++o) {
          for (std::size_t i = 0; i < Ho; ++i) {
            for (std::size_t j = 0; j < Wo; ++j) {
              const double go = g[(o * Ho + i) * Wo + j];
              if (go == 0.0) continue;
              for (std::size_t c = 0; c < C; ++c) {
                for (std::size_t u = 0; u < kh; ++u) {
                  const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(i * stride + u) -
                                           static_cast<std::ptrdiff_t>(pad);
                  if (r < 0 || r >= static_cast<std::ptrdiff_t>(H)) continue;
                  for (std::size_t v = 0; v < kw; ++v) {
                    const std::ptrdiff_t cc = static_cast<std::ptrdiff_t>(j * stride + v) -
                                              static_cast<std::ptrdiff_t>(pad);
                    if (cc < 0 || cc >= static_cast<std::ptrdiff_t>(W)) continue;
                    const std::size_t xi = (c * H + r) * W + cc;
                    const std::size_t wi = ((o * C + c) * kh + u) * kw + v;
                    if (need_x) (*gx)[xi] += go * wv[wi];
                    if (need_w) (*gw)[wi] += go * xv[xi];
                  }
                }
              }
            }
          }
        }
      });
}

}  // namespace iman
