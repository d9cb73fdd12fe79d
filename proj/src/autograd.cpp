#include "relseg/autograd.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "relseg/error.hpp"

namespace relseg::ag {

namespace {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

thread_local bool g_grad_enabled = true;

using BackwardFn = std::function<void(Node&)>;

Var make(Shape shape, std::vector<double> value, std::vector<Var> parents, BackwardFn fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) needs = needs || (p.defined() && p.requires_grad());
  }
  if (needs) {
    node->requires_grad = true;
    for (auto& p : parents) node->parents.push_back(p.defined() ? p.node() : nullptr);
    node->backward_fn = std::move(fn);
  }
  return Var(std::move(node));
}

// Grad buffer of parent i, or nullptr when that parent takes no gradient.
double* pgrad(Node& self, std::size_t i) {
  auto& p = self.parents[i];
  if (!p || !p->requires_grad) return nullptr;
  p->ensure_grad();
  return p->grad.data();
}

void require(bool cond, const std::string& what) {
  if (!cond) throw ShapeError(what);
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + to_string(a.shape()) +
                                      " vs " + to_string(b.shape()));
}

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Var make_op(Shape shape, std::vector<double> value, std::vector<Var> parents, std::function<void(Node&)> fn) {
  return make(std::move(shape), std::move(value), std::move(parents), std::move(fn));
}

double* parent_grad(Node& self, std::size_t i) { return pgrad(self, i); }

Var Var::constant(Shape shape, std::vector<double> values) {
  require(ag::numel(shape) == values.size(), "constant: value count does not match shape " + to_string(shape));
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  return Var(std::move(node));
}

Var Var::zeros(Shape shape) {
  std::vector<double> v(ag::numel(shape), 0.0);
  return constant(std::move(shape), std::move(v));
}

Var Var::scalar(double v) { return constant({1}, {v}); }

Var Var::leaf(Shape shape, std::vector<double> values) {
  Var v = constant(std::move(shape), std::move(values));
  v.node_->requires_grad = true;
  return v;
}

double Var::item() const {
  require(numel() == 1, "item: tensor has " + std::to_string(numel()) + " elements");
  return node_->value[0];
}

Var Var::detach() const { return constant(shape(), node_->value); }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

void backward(const Var& loss) {
  require(loss.numel() == 1, "backward: loss must be a scalar");
  if (!loss.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p && p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  Node* root = loss.node().get();
  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

// ---- elementwise -------------------------------------------------------

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (double* g = pgrad(self, k)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      }
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return make(a.shape(), std::move(out), {a, b}, [](Node& self) {
    if (double* g = pgrad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (double* g = pgrad(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make(a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (double* g = pgrad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (double* g = pgrad(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

Var scale(const Var& a, double s) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * s;
  return make(a.shape(), std::move(out), {a}, [s](Node& self) {
    if (double* g = pgrad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * s;
    }
  });
}

Var scale_by(const Var& s, const Var& a) {
  require(s.numel() == 1, "scale_by: factor must be a single element");
  const double sv = s.data()[0];
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * sv;
  return make(a.shape(), std::move(out), {s, a}, [](Node& self) {
    const double sv = self.parents[0]->value[0];
    const auto& av = self.parents[1]->value;
    if (double* g = pgrad(self, 0)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * av[i];
      g[0] += acc;
    }
    if (double* g = pgrad(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * sv;
    }
  });
}

Var relu(const Var& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(a.data()[i], 0.0);
  return make(a.shape(), std::move(out), {a}, [](Node& self) {
    if (double* g = pgrad(self, 0)) {
      const auto& av = self.parents[0]->value;
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        if (av[i] > 0.0) g[i] += self.grad[i];
      }
    }
  });
}

Var silu(const Var& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] / (1.0 + std::exp(-a.data()[i]));
  return make(a.shape(), std::move(out), {a}, [](Node& self) {
    if (double* g = pgrad(self, 0)) {
      const auto& av = self.parents[0]->value;
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const double s = 1.0 / (1.0 + std::exp(-av[i]));
        g[i] += self.grad[i] * s * (1.0 + av[i] * (1.0 - s));
      }
    }
  });
}

Var sigmoid(const Var& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-a.data()[i]));
  return make(a.shape(), std::move(out), {a}, [](Node& self) {
    if (double* g = pgrad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const double y = self.value[i];
        g[i] += self.grad[i] * y * (1.0 - y);
      }
    }
  });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return make({1}, {s}, {a}, [](Node& self) {
    if (double* g = pgrad(self, 0)) {
      const std::size_t n = self.parents[0]->value.size();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
    }
  });
}

Var add_n(const std::vector<Var>& terms) {
  require(!terms.empty(), "add_n: no terms");
  Var acc = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
  return acc;
}

// ---- shape ---------------------------------------------------------------

Var reshape(const Var& a, Shape shape) {
  require(numel(shape) == a.numel(), "reshape: " + to_string(a.shape()) + " -> " + to_string(shape));
  std::vector<double> out(a.data().begin(), a.data().end());
  return make(std::move(shape), std::move(out), {a}, [](Node& self) {
    if (double* g = pgrad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  require(!parts.empty(), "concat: no inputs");
  const Shape& first = parts.front().shape();
  require(axis < first.size(), "concat: axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    require(p.rank() == first.size(), "concat: rank mismatch");
    for (std::size_t d = 0; d < first.size(); ++d) {
      if (d != axis) require(p.dim(d) == first[d], "concat: non-axis dims differ");
    }
    out_shape[axis] += p.dim(axis);
  }
  std::size_t outer = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= static_cast<std::size_t>(first[d]);
  std::size_t inner = 1;
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= static_cast<std::size_t>(first[d]);

  std::vector<std::size_t> widths;
  for (const auto& p : parts) widths.push_back(static_cast<std::size_t>(p.dim(axis)) * inner);
  const std::size_t out_width = static_cast<std::size_t>(out_shape[axis]) * inner;

  std::vector<double> out(numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto src = parts[k].data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(o * widths[k]), widths[k],
                  out.begin() + static_cast<std::ptrdiff_t>(o * out_width + offset));
    }
    offset += widths[k];
  }
  return make(std::move(out_shape), std::move(out), parts, [outer, widths, out_width](Node& self) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      if (double* g = pgrad(self, k)) {
        for (std::size_t o = 0; o < outer; ++o) {
          const double* src = self.grad.data() + o * out_width + offset;
          double* dst = g + o * widths[k];
          for (std::size_t i = 0; i < widths[k]; ++i) dst[i] += src[i];
        }
      }
      offset += widths[k];
    }
  });
}

Var index_rows(const Var& a, std::span<const int> rows) {
  require(a.rank() >= 1, "index_rows: rank 0");
  const std::size_t row = a.numel() / std::max<std::size_t>(1, static_cast<std::size_t>(a.dim(0)));
  Shape out_shape = a.shape();
  out_shape[0] = static_cast<int>(rows.size());
  std::vector<double> out(rows.size() * row);
  std::vector<int> idx(rows.begin(), rows.end());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    require(idx[r] >= 0 && idx[r] < a.dim(0), "index_rows: index out of range");
    std::copy_n(a.data().begin() + static_cast<std::ptrdiff_t>(idx[r] * row), row,
                out.begin() + static_cast<std::ptrdiff_t>(r * row));
  }
  return make(std::move(out_shape), std::move(out), {a}, [idx, row](Node& self) {
    if (double* g = pgrad(self, 0)) {
      for (std::size_t r = 0; r < idx.size(); ++r) {
        for (std::size_t i = 0; i < row; ++i) g[idx[r] * row + i] += self.grad[r * row + i];
      }
    }
  });
}

Var gather_channel(const Var& x, std::span<const int> channel) {
  require(x.rank() == 4, "gather_channel: expected NCHW");
  const int n = x.dim(0), c = x.dim(1);
  require(static_cast<int>(channel.size()) == n, "gather_channel: one channel per sample required");
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  std::vector<int> ch(channel.begin(), channel.end());
  std::vector<double> out(static_cast<std::size_t>(n) * plane);
  for (int i = 0; i < n; ++i) {
    require(ch[i] >= 0 && ch[i] < c, "gather_channel: channel out of range");
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>((static_cast<std::size_t>(i) * c + ch[i]) * plane),
                plane, out.begin() + static_cast<std::ptrdiff_t>(i * plane));
  }
  return make({n, 1, x.dim(2), x.dim(3)}, std::move(out), {x}, [ch, c, plane](Node& self) {
    if (double* g = pgrad(self, 0)) {
      for (std::size_t i = 0; i < ch.size(); ++i) {
        double* dst = g + (i * c + ch[i]) * plane;
        const double* src = self.grad.data() + i * plane;
        for (std::size_t k = 0; k < plane; ++k) dst[k] += src[k];
      }
    }
  });
}

Var take(const Var& a, std::span<const int> index) {
  std::vector<int> idx(index.begin(), index.end());
  std::vector<double> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    require(idx[i] >= 0 && static_cast<std::size_t>(idx[i]) < a.numel(), "take: index out of range");
    out[i] = a.data()[idx[i]];
  }
  return make({static_cast<int>(idx.size())}, std::move(out), {a}, [idx](Node& self) {
    if (double* g = pgrad(self, 0)) {
      for (std::size_t i = 0; i < idx.size(); ++i) g[idx[i]] += self.grad[i];
    }
  });
}

// ---- linear algebra ----------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
          "matmul: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(static_cast<std::size_t>(m) * n);
  MapR(out.data(), m, n).noalias() = CMapR(a.data().data(), m, k) * CMapR(b.data().data(), k, n);
  return make({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    CMapR go(self.grad.data(), m, n);
    if (double* g = pgrad(self, 0)) {
      MapR(g, m, k).noalias() += go * CMapR(self.parents[1]->value.data(), k, n).transpose();
    }
    if (double* g = pgrad(self, 1)) {
      MapR(g, k, n).noalias() += CMapR(self.parents[0]->value.data(), m, k).transpose() * go;
    }
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(1),
          "matmul_nt: " + to_string(a.shape()) + " x " + to_string(b.shape()) + "^T");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
  std::vector<double> out(static_cast<std::size_t>(m) * n);
  MapR(out.data(), m, n).noalias() = CMapR(a.data().data(), m, k) * CMapR(b.data().data(), n, k).transpose();
  return make({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    CMapR go(self.grad.data(), m, n);
    if (double* g = pgrad(self, 0)) {
      MapR(g, m, k).noalias() += go * CMapR(self.parents[1]->value.data(), n, k);
    }
    if (double* g = pgrad(self, 1)) {
      MapR(g, n, k).noalias() += go.transpose() * CMapR(self.parents[0]->value.data(), m, k);
    }
  });
}

Var matmul_ordered(const Var& a, const Var& b, std::span<const int> k_order) {
  require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
          "matmul_ordered: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  require(static_cast<int>(k_order.size()) == k, "matmul_ordered: order must list every inner index");
  std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  for (int i = 0; i < m; ++i) {
    double* dst = out.data() + static_cast<std::size_t>(i) * n;
    for (int t : k_order) {
      const double w = A[static_cast<std::size_t>(i) * k + t];
      const double* src = B + static_cast<std::size_t>(t) * n;
      for (int j = 0; j < n; ++j) dst[j] += w * src[j];
    }
  }
  return make({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    CMapR go(self.grad.data(), m, n);
    if (double* g = pgrad(self, 0)) {
      MapR(g, m, k).noalias() += go * CMapR(self.parents[1]->value.data(), k, n).transpose();
    }
    if (double* g = pgrad(self, 1)) {
      MapR(g, k, n).noalias() += CMapR(self.parents[0]->value.data(), m, k).transpose() * go;
    }
  });
}

Var gram(const Var& a) {
  require(a.rank() == 2, "gram: expected a matrix");
  const int m = a.dim(0), k = a.dim(1);
  std::vector<double> out(static_cast<std::size_t>(m) * m);
  const double* A = a.data().data();
  for (int i = 0; i < m; ++i) {
    for (int j = i; j < m; ++j) {
      const double* x = A + static_cast<std::size_t>(i) * k;
      const double* y = A + static_cast<std::size_t>(j) * k;
      double dot = 0.0;
      for (int t = 0; t < k; ++t) dot += x[t] * y[t];
      out[static_cast<std::size_t>(i) * m + j] = out[static_cast<std::size_t>(j) * m + i] = dot;
    }
  }
  return make({m, m}, std::move(out), {a}, [m, k](Node& self) {
    if (double* g = pgrad(self, 0)) {
      CMapR go(self.grad.data(), m, m);
      CMapR x(self.parents[0]->value.data(), m, k);
      MapR(g, m, k).noalias() += (go + go.transpose()) * x;
    }
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  require(x.rank() == 2 && weight.rank() == 2 && x.dim(1) == weight.dim(1),
          "linear: " + to_string(x.shape()) + " with weight " + to_string(weight.shape()));
  const int n = x.dim(0), d = x.dim(1), o = weight.dim(0);
  require(!bias.defined() || static_cast<int>(bias.numel()) == o, "linear: bias size");
  std::vector<double> out(static_cast<std::size_t>(n) * o);
  MapR y(out.data(), n, o);
  y.noalias() = CMapR(x.data().data(), n, d) * CMapR(weight.data().data(), o, d).transpose();
  if (bias.defined()) {
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < o; ++j) y(i, j) += bias.data()[j];
    }
  }
  return make({n, o}, std::move(out), {x, weight, bias}, [n, d, o](Node& self) {
    CMapR go(self.grad.data(), n, o);
    if (double* g = pgrad(self, 0)) {
      MapR(g, n, d).noalias() += go * CMapR(self.parents[1]->value.data(), o, d);
    }
    if (double* g = pgrad(self, 1)) {
      MapR(g, o, d).noalias() += go.transpose() * CMapR(self.parents[0]->value.data(), n, d);
    }
    if (self.parents[2]) {
      if (double* g = pgrad(self, 2)) {
        for (int i = 0; i < n; ++i) {
          for (int j = 0; j < o; ++j) g[j] += go(i, j);
        }
      }
    }
  });
}

Var row_softmax(const Var& a) {
  require(a.rank() == 2, "row_softmax: expected a matrix");
  const int m = a.dim(0), n = a.dim(1);
  std::vector<double> out(a.numel()), sorted(static_cast<std::size_t>(n));
  for (int i = 0; i < m; ++i) {
    const double* row = a.data().data() + static_cast<std::size_t>(i) * n;
    double* dst = out.data() + static_cast<std::size_t>(i) * n;
    const double mx = *std::max_element(row, row + n);
    for (int j = 0; j < n; ++j) {
      dst[j] = std::exp(row[j] - mx);
      sorted[j] = dst[j];
    }
    // Summing in sorted order makes each row independent of column order.
    std::sort(sorted.begin(), sorted.end());
    const double z = std::accumulate(sorted.begin(), sorted.end(), 0.0);
    for (int j = 0; j < n; ++j) dst[j] /= z;
  }
  return make(a.shape(), std::move(out), {a}, [m, n](Node& self) {
    if (double* g = pgrad(self, 0)) {
      for (int i = 0; i < m; ++i) {
        const double* y = self.value.data() + static_cast<std::size_t>(i) * n;
        const double* gy = self.grad.data() + static_cast<std::size_t>(i) * n;
        double dot = 0.0;
        for (int j = 0; j < n; ++j) dot += y[j] * gy[j];
        for (int j = 0; j < n; ++j) {
          if (y[j] != 0.0) g[static_cast<std::size_t>(i) * n + j] += y[j] * (gy[j] - dot);
        }
      }
    }
  });
}

Var keep_topk_rows(const Var& a, int k) {
  require(a.rank() == 2, "keep_topk_rows: expected a matrix");
  require(k >= 1, "keep_topk_rows: k must be at least 1");
  const int m = a.dim(0), n = a.dim(1);
  std::vector<double> out(a.numel(), -std::numeric_limits<double>::infinity());
  std::vector<char> kept(a.numel(), 0);
  std::vector<int> order(static_cast<std::size_t>(n));
  const int keep = std::min(k, n);
  for (int i = 0; i < m; ++i) {
    const double* row = a.data().data() + static_cast<std::size_t>(i) * n;
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [row](int x, int y) { return row[x] > row[y]; });
    for (int r = 0; r < keep; ++r) {
      const std::size_t at = static_cast<std::size_t>(i) * n + order[r];
      out[at] = row[order[r]];
      kept[at] = 1;
    }
  }
  return make(a.shape(), std::move(out), {a}, [kept = std::move(kept)](Node& self) {
    if (double* g = pgrad(self, 0)) {
      for (std::size_t i = 0; i < kept.size(); ++i) {
        if (kept[i]) g[i] += self.grad[i];
      }
    }
  });
}

// ---- convolution / spatial ----------------------------------------------

namespace {

struct ConvGeom {
  int cin, h, w, k, stride, pad, hout, wout;
};

void im2col(const double* x, const ConvGeom& g, double* col) {
  const int p = g.hout * g.wout;
  for (int c = 0; c < g.cin; ++c) {
    for (int ki = 0; ki < g.k; ++ki) {
      for (int kj = 0; kj < g.k; ++kj) {
        double* dst = col + (static_cast<std::size_t>(c * g.k + ki) * g.k + kj) * p;
        for (int oh = 0; oh < g.hout; ++oh) {
          const int ih = oh * g.stride - g.pad + ki;
          if (ih < 0 || ih >= g.h) {
            std::fill_n(dst + oh * g.wout, g.wout, 0.0);
            continue;
          }
          const double* src = x + (static_cast<std::size_t>(c) * g.h + ih) * g.w;
          for (int ow = 0; ow < g.wout; ++ow) {
            const int iw = ow * g.stride - g.pad + kj;
            dst[oh * g.wout + ow] = (iw >= 0 && iw < g.w) ? src[iw] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* col, const ConvGeom& g, double* x) {
  const int p = g.hout * g.wout;
  for (int c = 0; c < g.cin; ++c) {
    for (int ki = 0; ki < g.k; ++ki) {
      for (int kj = 0; kj < g.k; ++kj) {
        const double* src = col + (static_cast<std::size_t>(c * g.k + ki) * g.k + kj) * p;
        for (int oh = 0; oh < g.hout; ++oh) {
          const int ih = oh * g.stride - g.pad + ki;
          if (ih < 0 || ih >= g.h) continue;
          double* dst = x + (static_cast<std::size_t>(c) * g.h + ih) * g.w;
          for (int ow = 0; ow < g.wout; ++ow) {
            const int iw = ow * g.stride - g.pad + kj;
            if (iw >= 0 && iw < g.w) dst[iw] += src[oh * g.wout + ow];
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad) {
  require(x.rank() == 4 && weight.rank() == 4, "conv2d: expected NCHW input and OIHW weight");
  require(weight.dim(1) == x.dim(1), "conv2d: input has " + std::to_string(x.dim(1)) +
                                         " channels, weight expects " + std::to_string(weight.dim(1)));
  require(weight.dim(2) == weight.dim(3), "conv2d: square kernels only");
  ConvGeom g{x.dim(1), x.dim(2), x.dim(3), weight.dim(2), stride, pad, 0, 0};
  g.hout = (g.h + 2 * pad - g.k) / stride + 1;
  g.wout = (g.w + 2 * pad - g.k) / stride + 1;
  require(g.hout > 0 && g.wout > 0, "conv2d: empty output");
  const int n = x.dim(0), cout = weight.dim(0);
  const int kk = g.cin * g.k * g.k, p = g.hout * g.wout;
  require(!bias.defined() || static_cast<int>(bias.numel()) == cout, "conv2d: bias size");

  std::vector<double> out(static_cast<std::size_t>(n) * cout * p);
  std::vector<double> col(static_cast<std::size_t>(kk) * p);
  CMapR wm(weight.data().data(), cout, kk);
  const std::size_t in_stride = static_cast<std::size_t>(g.cin) * g.h * g.w;
  for (int i = 0; i < n; ++i) {
    im2col(x.data().data() + i * in_stride, g, col.data());
    MapR y(out.data() + static_cast<std::size_t>(i) * cout * p, cout, p);
    y.noalias() = wm * CMapR(col.data(), kk, p);
    if (bias.defined()) {
      for (int c = 0; c < cout; ++c) y.row(c).array() += bias.data()[c];
    }
  }
  return make({n, cout, g.hout, g.wout}, std::move(out), {x, weight, bias},
              [g, n, cout, kk, p, in_stride](Node& self) {
                double* gx = pgrad(self, 0);
                double* gw = pgrad(self, 1);
                double* gb = self.parents[2] ? pgrad(self, 2) : nullptr;
                const auto& xv = self.parents[0]->value;
                CMapR wm(self.parents[1]->value.data(), cout, kk);
                std::vector<double> col(static_cast<std::size_t>(kk) * p);
                std::vector<double> dcol(gx ? static_cast<std::size_t>(kk) * p : 0);
                for (int i = 0; i < n; ++i) {
                  CMapR go(self.grad.data() + static_cast<std::size_t>(i) * cout * p, cout, p);
                  if (gw) {
                    im2col(xv.data() + i * in_stride, g, col.data());
                    MapR(gw, cout, kk).noalias() += go * CMapR(col.data(), kk, p).transpose();
                  }
                  if (gb) {
                    for (int c = 0; c < cout; ++c) gb[c] += go.row(c).sum();
                  }
                  if (gx) {
                    MapR(dcol.data(), kk, p).noalias() = wm.transpose() * go;
                    col2im(dcol.data(), g, gx + i * in_stride);
                  }
                }
              });
}

Var deconv2x2(const Var& x, const Var& weight, const Var& bias) {
  require(x.rank() == 4 && weight.rank() == 4, "deconv2x2: expected NCHW input and [Cin,Cout,2,2] weight");
  require(weight.dim(0) == x.dim(1) && weight.dim(2) == 2 && weight.dim(3) == 2,
          "deconv2x2: weight " + to_string(weight.shape()) + " incompatible with input " + to_string(x.shape()));
  const int n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3), cout = weight.dim(1);
  const int hw = h * w, ho = 2 * h, wo = 2 * w;
  require(!bias.defined() || static_cast<int>(bias.numel()) == cout, "deconv2x2: bias size");
  std::vector<double> out(static_cast<std::size_t>(n) * cout * ho * wo);
  MatR t(cout * 4, hw);
  CMapR wm(weight.data().data(), cin, cout * 4);
  for (int i = 0; i < n; ++i) {
    t.noalias() = wm.transpose() * CMapR(x.data().data() + static_cast<std::size_t>(i) * cin * hw, cin, hw);
    double* y = out.data() + static_cast<std::size_t>(i) * cout * ho * wo;
    for (int c = 0; c < cout; ++c) {
      const double b = bias.defined() ? bias.data()[c] : 0.0;
      for (int a = 0; a < 2; ++a) {
        for (int bb = 0; bb < 2; ++bb) {
          const int r = c * 4 + a * 2 + bb;
          for (int yi = 0; yi < h; ++yi) {
            for (int xi = 0; xi < w; ++xi) {
              y[(static_cast<std::size_t>(c) * ho + 2 * yi + a) * wo + 2 * xi + bb] = t(r, yi * w + xi) + b;
            }
          }
        }
      }
    }
  }
  return make({n, cout, ho, wo}, std::move(out), {x, weight, bias}, [n, cin, h, w, cout](Node& self) {
    const int hw = h * w, ho = 2 * h, wo = 2 * w;
    double* gx = pgrad(self, 0);
    double* gw = pgrad(self, 1);
    double* gb = self.parents[2] ? pgrad(self, 2) : nullptr;
    CMapR wm(self.parents[1]->value.data(), cin, cout * 4);
    MatR dt(cout * 4, hw);
    for (int i = 0; i < n; ++i) {
      const double* gy = self.grad.data() + static_cast<std::size_t>(i) * cout * ho * wo;
      for (int c = 0; c < cout; ++c) {
        for (int a = 0; a < 2; ++a) {
          for (int bb = 0; bb < 2; ++bb) {
            const int r = c * 4 + a * 2 + bb;
            for (int yi = 0; yi < h; ++yi) {
              for (int xi = 0; xi < w; ++xi) {
                dt(r, yi * w + xi) = gy[(static_cast<std::size_t>(c) * ho + 2 * yi + a) * wo + 2 * xi + bb];
              }
            }
          }
        }
      }
      if (gb) {
        for (int c = 0; c < cout; ++c) gb[c] += dt.middleRows(c * 4, 4).sum();
      }
      if (gw) {
        MapR(gw, cin, cout * 4).noalias() +=
            CMapR(self.parents[0]->value.data() + static_cast<std::size_t>(i) * cin * hw, cin, hw) * dt.transpose();
      }
      if (gx) {
        MapR(gx + static_cast<std::size_t>(i) * cin * hw, cin, hw).noalias() += wm * dt;
      }
    }
  });
}

Var avg_pool2x2(const Var& x) {
  require(x.rank() == 4 && x.dim(2) % 2 == 0 && x.dim(3) % 2 == 0, "avg_pool2x2: expected NCHW with even H,W");
  const int planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const int ho = h / 2, wo = w / 2;
  std::vector<double> out(static_cast<std::size_t>(planes) * ho * wo);
  const double* src = x.data().data();
  for (int p = 0; p < planes; ++p) {
    for (int i = 0; i < ho; ++i) {
      for (int j = 0; j < wo; ++j) {
        const double* r0 = src + (static_cast<std::size_t>(p) * h + 2 * i) * w + 2 * j;
        out[(static_cast<std::size_t>(p) * ho + i) * wo + j] = 0.25 * (r0[0] + r0[1] + r0[w] + r0[w + 1]);
      }
    }
  }
  return make({x.dim(0), x.dim(1), ho, wo}, std::move(out), {x}, [planes, h, w](Node& self) {
    if (double* g = pgrad(self, 0)) {
      const int ho = h / 2, wo = w / 2;
      for (int p = 0; p < planes; ++p) {
        for (int i = 0; i < ho; ++i) {
          for (int j = 0; j < wo; ++j) {
            const double v = 0.25 * self.grad[(static_cast<std::size_t>(p) * ho + i) * wo + j];
            double* r0 = g + (static_cast<std::size_t>(p) * h + 2 * i) * w + 2 * j;
            r0[0] += v;
            r0[1] += v;
            r0[w] += v;
            r0[w + 1] += v;
          }
        }
      }
    }
  });
}

Var upsample_nearest2x(const Var& x) {
  require(x.rank() == 4, "upsample_nearest2x: expected NCHW");
  const int planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const int ho = 2 * h, wo = 2 * w;
  std::vector<double> out(static_cast<std::size_t>(planes) * ho * wo);
  for (int p = 0; p < planes; ++p) {
    for (int i = 0; i < ho; ++i) {
      for (int j = 0; j < wo; ++j) {
        out[(static_cast<std::size_t>(p) * ho + i) * wo + j] =
            x.data()[(static_cast<std::size_t>(p) * h + i / 2) * w + j / 2];
      }
    }
  }
  return make({x.dim(0), x.dim(1), ho, wo}, std::move(out), {x}, [planes, h, w](Node& self) {
    if (double* g = pgrad(self, 0)) {
      const int ho = 2 * h, wo = 2 * w;
      for (int p = 0; p < planes; ++p) {
        for (int i = 0; i < ho; ++i) {
          for (int j = 0; j < wo; ++j) {
            g[(static_cast<std::size_t>(p) * h + i / 2) * w + j / 2] +=
                self.grad[(static_cast<std::size_t>(p) * ho + i) * wo + j];
          }
        }
      }
    }
  });
}

// ---- losses --------------------------------------------------------------

Var softmax_cross_entropy(const Var& logits, std::span<const int> labels) {
  require(logits.rank() == 2, "softmax_cross_entropy: expected [N,K] logits");
  const int n = logits.dim(0), k = logits.dim(1);
  require(static_cast<int>(labels.size()) == n, "softmax_cross_entropy: label count");
  if (n == 0) return Var::scalar(0.0);
  std::vector<double> prob(logits.numel());
  std::vector<int> lab(labels.begin(), labels.end());
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    require(lab[i] >= 0 && lab[i] < k, "softmax_cross_entropy: label out of range");
    const double* row = logits.data().data() + static_cast<std::size_t>(i) * k;
    double* p = prob.data() + static_cast<std::size_t>(i) * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (int j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    const double logz = mx + std::log(z);
    for (int j = 0; j < k; ++j) p[j] = std::exp(row[j] - logz);
    loss += logz - row[lab[i]];
  }
  loss /= n;
  return make({1}, {loss}, {logits}, [prob = std::move(prob), lab = std::move(lab), n, k](Node& self) {
    if (double* g = pgrad(self, 0)) {
      const double s = self.grad[0] / n;
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < k; ++j) {
          const std::size_t at = static_cast<std::size_t>(i) * k + j;
          g[at] += s * (prob[at] - (j == lab[i] ? 1.0 : 0.0));
        }
      }
    }
  });
}

Var bce_with_logits(const Var& logits, std::span<const double> targets) {
  require(targets.size() == logits.numel(), "bce_with_logits: target count");
  const std::size_t n = logits.numel();
  if (n == 0) return Var::scalar(0.0);
  std::vector<double> tgt(targets.begin(), targets.end());
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = logits.data()[i];
    loss += std::max(x, 0.0) - x * tgt[i] + std::log1p(std::exp(-std::abs(x)));
  }
  loss /= static_cast<double>(n);
  return make({1}, {loss}, {logits}, [tgt = std::move(tgt)](Node& self) {
    if (double* g = pgrad(self, 0)) {
      const auto& xv = self.parents[0]->value;
      const double s = self.grad[0] / static_cast<double>(xv.size());
      for (std::size_t i = 0; i < xv.size(); ++i) {
        g[i] += s * (1.0 / (1.0 + std::exp(-xv[i])) - tgt[i]);
      }
    }
  });
}

Var smooth_l1(const Var& pred, std::span<const double> target, double beta, double normalizer) {
  require(target.size() == pred.numel(), "smooth_l1: target count");
  require(normalizer > 0.0, "smooth_l1: normalizer must be positive");
  std::vector<double> tgt(target.begin(), target.end());
  double loss = 0.0;
  for (std::size_t i = 0; i < tgt.size(); ++i) {
    const double d = std::abs(pred.data()[i] - tgt[i]);
    loss += d < beta ? 0.5 * d * d / beta : d - 0.5 * beta;
  }
  loss /= normalizer;
  return make({1}, {loss}, {pred}, [tgt = std::move(tgt), beta, normalizer](Node& self) {
    if (double* g = pgrad(self, 0)) {
      const auto& pv = self.parents[0]->value;
      const double s = self.grad[0] / normalizer;
      for (std::size_t i = 0; i < tgt.size(); ++i) {
        const double d = pv[i] - tgt[i];
        const double slope = std::abs(d) < beta ? d / beta : (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0));
        g[i] += s * slope;
      }
    }
  });
}

}  // namespace relseg::ag
