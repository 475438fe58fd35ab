#include "vqcpc/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace vqcpc {

namespace {

bool g_finite_checks = false;

template <typename S>
using EMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using EMap = Eigen::Map<EMat<S>>;
template <typename S>
using ECMap = Eigen::Map<const EMat<S>>;

template <typename S>
std::shared_ptr<Node<S>> make_node(Tensor<S> value,
                                   std::vector<std::shared_ptr<Node<S>>> parents) {
  auto n = std::make_shared<Node<S>>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  for (const auto& p : n->parents)
    if (p && p->requires_grad) n->requires_grad = true;
  if (g_finite_checks && !n->value.all_finite())
    throw std::runtime_error("non-finite value produced by an operation");
  return n;
}

template <typename S>
void require_same_shape(const Var<S>& a, const Var<S>& b, const char* op) {
  if (!a.value().same_shape(b.value()))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_to_string(a.value().shape()) + " vs " +
                                shape_to_string(b.value().shape()));
}

}  // namespace

void set_finite_checks(bool on) { g_finite_checks = on; }
bool finite_checks_on() { return g_finite_checks; }

template <typename S>
void check_finite(const Tensor<S>& t, const char* where) {
  if (!t.all_finite())
    throw std::runtime_error(std::string(where) + ": non-finite values");
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

template <typename S>
void backward(const Var<S>& root) {
  if (!root.defined() || root.value().size() != 1)
    throw std::invalid_argument("backward: root must be a defined scalar");
  if (!root.requires_grad()) return;

  // Reverse topological order via iterative DFS over grad-requiring nodes.
  std::vector<Node<S>*> order;
  std::unordered_set<Node<S>*> seen;
  struct Frame {
    Node<S>* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({root.node().get(), 0});
  seen.insert(root.node().get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      Node<S>* p = f.node->parents[f.next_parent++].get();
      if (p && p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  root.node()->ensure_grad();
  root.node()->grad[0] = S(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<S>* n = *it;
    if (n->backprop && n->grad.size() == n->value.size()) n->backprop(*n);
  }
}

// ---------------------------------------------------------------------------
// FreezeLog
// ---------------------------------------------------------------------------

template <typename S>
FreezeLog<S>*& FreezeLog<S>::active() {
  thread_local FreezeLog<S>* instance = nullptr;
  return instance;
}

template <typename S>
Tensor<S> FreezeLog<S>::freeze_value(const Tensor<S>& fresh) {
  if (mode_ == Mode::record) {
    values_.push_back(fresh);
    ++value_cursor_;
    return fresh;
  }
  if (value_cursor_ >= values_.size())
    throw std::runtime_error("FreezeLog: replay past end (non-deterministic forward?)");
  return values_[value_cursor_++];
}

template <typename S>
std::vector<int> FreezeLog<S>::freeze_choice(const std::vector<int>& fresh) {
  if (mode_ == Mode::record) {
    choices_.push_back(fresh);
    ++choice_cursor_;
    return fresh;
  }
  if (choice_cursor_ >= choices_.size())
    throw std::runtime_error("FreezeLog: choice replay past end");
  return choices_[choice_cursor_++];
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename S>
Var<S> constant(Tensor<S> value) {
  return Var<S>::leaf(std::move(value), false);
}

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  require_same_shape(a, b, "add");
  Tensor<S> out(a.value().shape());
  const S* pa = a.value().data();
  const S* pb = b.value().data();
  S* po = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) po[i] = pa[i] + pb[i];
  auto n = make_node(std::move(out), {a.node(), b.node()});
  if (n->requires_grad)
    n->backprop = [](Node<S>& self) {
      for (int k = 0; k < 2; ++k)
        if (self.parents[k]->requires_grad) self.parents[k]->accumulate(self.grad);
    };
  return Var<S>(n);
}

template <typename S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
  require_same_shape(a, b, "sub");
  Tensor<S> out(a.value().shape());
  const S* pa = a.value().data();
  const S* pb = b.value().data();
  S* po = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) po[i] = pa[i] - pb[i];
  auto n = make_node(std::move(out), {a.node(), b.node()});
  if (n->requires_grad)
    n->backprop = [](Node<S>& self) {
      if (self.parents[0]->requires_grad) self.parents[0]->accumulate(self.grad);
      if (self.parents[1]->requires_grad) {
        Node<S>& p = *self.parents[1];
        p.ensure_grad();
        for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] -= self.grad[i];
      }
    };
  return Var<S>(n);
}

template <typename S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
  require_same_shape(a, b, "mul");
  Tensor<S> out(a.value().shape());
  const S* pa = a.value().data();
  const S* pb = b.value().data();
  S* po = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) po[i] = pa[i] * pb[i];
  auto n = make_node(std::move(out), {a.node(), b.node()});
  if (n->requires_grad)
    n->backprop = [](Node<S>& self) {
      Node<S>& pa = *self.parents[0];
      Node<S>& pb = *self.parents[1];
      if (pa.requires_grad) {
        pa.ensure_grad();
        for (std::size_t i = 0; i < pa.grad.size(); ++i)
          pa.grad[i] += self.grad[i] * pb.value[i];
      }
      if (pb.requires_grad) {
        pb.ensure_grad();
        for (std::size_t i = 0; i < pb.grad.size(); ++i)
          pb.grad[i] += self.grad[i] * pa.value[i];
      }
    };
  return Var<S>(n);
}

template <typename S>
Var<S> neg(const Var<S>& a) {
  return scalar_mul(a, S(-1));
}

template <typename S>
Var<S> scalar_mul(const Var<S>& a, S c) {
  Tensor<S> out(a.value().shape());
  const S* pa = a.value().data();
  S* po = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) po[i] = pa[i] * c;
  auto n = make_node(std::move(out), {a.node()});
  if (n->requires_grad)
    n->backprop = [c](Node<S>& self) {
      Node<S>& p = *self.parents[0];
      p.ensure_grad();
      for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += self.grad[i] * c;
    };
  return Var<S>(n);
}

template <typename S>
Var<S> scalar_add(const Var<S>& a, S c) {
  Tensor<S> out(a.value().shape());
  const S* pa = a.value().data();
  S* po = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) po[i] = pa[i] + c;
  auto n = make_node(std::move(out), {a.node()});
  if (n->requires_grad)
    n->backprop = [](Node<S>& self) { self.parents[0]->accumulate(self.grad); };
  return Var<S>(n);
}

template <typename S>
Var<S> add_bias(const Var<S>& a, const Var<S>& bias) {
  if (bias.value().rank() != 1 || a.value().rank() < 1 ||
      a.value().shape().back() != bias.value().dim(0))
    throw std::invalid_argument("add_bias: bias must match trailing dim");
  const std::size_t h = bias.value().dim(0);
  const std::size_t rows = a.value().size() / h;
  Tensor<S> out(a.value().shape());
  const S* pa = a.value().data();
  const S* pb = bias.value().data();
  S* po = out.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < h; ++j) po[r * h + j] = pa[r * h + j] + pb[j];
  auto n = make_node(std::move(out), {a.node(), bias.node()});
  if (n->requires_grad)
    n->backprop = [h, rows](Node<S>& self) {
      if (self.parents[0]->requires_grad) self.parents[0]->accumulate(self.grad);
      if (self.parents[1]->requires_grad) {
        Node<S>& p = *self.parents[1];
        p.ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < h; ++j) p.grad[j] += self.grad[r * h + j];
      }
    };
  return Var<S>(n);
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

template <typename S>
Var<S> matmul(const Var<S>& a, const Var<S>& b) {
  if (a.value().rank() != 2 || b.value().rank() != 2 ||
      a.value().dim(1) != b.value().dim(0))
    throw std::invalid_argument("matmul: incompatible shapes " +
                                shape_to_string(a.value().shape()) + " x " +
                                shape_to_string(b.value().shape()));
  const std::size_t m = a.value().dim(0), k = a.value().dim(1), nn = b.value().dim(1);
  Tensor<S> out({m, nn});
  ECMap<S> ma(a.value().data(), m, k);
  ECMap<S> mb(b.value().data(), k, nn);
  EMap<S> mo(out.data(), m, nn);
  mo.noalias() = ma * mb;
  auto n = make_node(std::move(out), {a.node(), b.node()});
  if (n->requires_grad)
    n->backprop = [m, k, nn](Node<S>& self) {
      ECMap<S> g(self.grad.data(), m, nn);
      Node<S>& pa = *self.parents[0];
      Node<S>& pb = *self.parents[1];
      if (pa.requires_grad) {
        pa.ensure_grad();
        EMap<S> ga(pa.grad.data(), m, k);
        ECMap<S> vb(pb.value.data(), k, nn);
        ga.noalias() += g * vb.transpose();
      }
      if (pb.requires_grad) {
        pb.ensure_grad();
        EMap<S> gb(pb.grad.data(), k, nn);
        ECMap<S> va(pa.value.data(), m, k);
        gb.noalias() += va.transpose() * g;
      }
    };
  return Var<S>(n);
}

template <typename S>
Var<S> matmul_batched(const Var<S>& a, const Var<S>& b) {
  if (a.value().rank() != 3 || b.value().rank() != 3 ||
      a.value().dim(0) != b.value().dim(0) || a.value().dim(2) != b.value().dim(1))
    throw std::invalid_argument("matmul_batched: incompatible shapes " +
                                shape_to_string(a.value().shape()) + " x " +
                                shape_to_string(b.value().shape()));
  const std::size_t bs = a.value().dim(0), m = a.value().dim(1), k = a.value().dim(2),
                    nn = b.value().dim(2);
  Tensor<S> out({bs, m, nn});
  for (std::size_t i = 0; i < bs; ++i) {
    ECMap<S> ma(a.value().data() + i * m * k, m, k);
    ECMap<S> mb(b.value().data() + i * k * nn, k, nn);
    EMap<S> mo(out.data() + i * m * nn, m, nn);
    mo.noalias() = ma * mb;
  }
  auto n = make_node(std::move(out), {a.node(), b.node()});
  if (n->requires_grad)
    n->backprop = [bs, m, k, nn](Node<S>& self) {
      Node<S>& pa = *self.parents[0];
      Node<S>& pb = *self.parents[1];
      if (pa.requires_grad) pa.ensure_grad();
      if (pb.requires_grad) pb.ensure_grad();
      for (std::size_t i = 0; i < bs; ++i) {
        ECMap<S> g(self.grad.data() + i * m * nn, m, nn);
        if (pa.requires_grad) {
          EMap<S> ga(pa.grad.data() + i * m * k, m, k);
          ECMap<S> vb(pb.value.data() + i * k * nn, k, nn);
          ga.noalias() += g * vb.transpose();
        }
        if (pb.requires_grad) {
          EMap<S> gb(pb.grad.data() + i * k * nn, k, nn);
          ECMap<S> va(pa.value.data() + i * m * k, m, k);
          gb.noalias() += va.transpose() * g;
        }
      }
    };
  return Var<S>(n);
}

template <typename S>
Var<S> transpose2(const Var<S>& a) {
  if (a.value().rank() != 2) throw std::invalid_argument("transpose2: rank != 2");
  const std::size_t m = a.value().dim(0), k = a.value().dim(1);
  Tensor<S> out({k, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < k; ++j) out.at2(j, i) = a.value().at2(i, j);
  auto n = make_node(std::move(out), {a.node()});
  if (n->requires_grad)
    n->backprop = [m, k](Node<S>& self) {
      Node<S>& p = *self.parents[0];
      p.ensure_grad();
      for (std::size_t j = 0; j < k; ++j)
        for (std::size_t i = 0; i < m; ++i) p.grad[i * k + j] += self.grad[j * m + i];
    };
  return Var<S>(n);
}

template <typename S>
Var<S> permute3(const Var<S>& a, const std::array<int, 3>& perm) {
  if (a.value().rank() != 3) throw std::invalid_argument("permute3: rank != 3");
  const auto& sh = a.value().shape();
  std::vector<std::size_t> osh = {sh[perm[0]], sh[perm[1]], sh[perm[2]]};
  Tensor<S> out(osh);
  std::size_t idx[3];
  for (idx[0] = 0; idx[0] < sh[0]; ++idx[0])
    for (idx[1] = 0; idx[1] < sh[1]; ++idx[1])
      for (idx[2] = 0; idx[2] < sh[2]; ++idx[2])
        out.at3(idx[perm[0]], idx[perm[1]], idx[perm[2]]) =
            a.value().at3(idx[0], idx[1], idx[2]);
  auto n = make_node(std::move(out), {a.node()});
  if (n->requires_grad)
    n->backprop = [perm, sh](Node<S>& self) {
      Node<S>& p = *self.parents[0];
      p.ensure_grad();
      Tensor<S>& g = p.grad;
      const std::size_t s1 = sh[1], s2 = sh[2];
      const std::size_t o1 = self.grad.dim(1), o2 = self.grad.dim(2);
      std::size_t idx[3];
      for (idx[0] = 0; idx[0] < sh[0]; ++idx[0])
        for (idx[1] = 0; idx[1] < s1; ++idx[1])
          for (idx[2] = 0; idx[2] < s2; ++idx[2]) {
            std::size_t o = (idx[perm[0]] * o1 + idx[perm[1]]) * o2 + idx[perm[2]];
            g[(idx[0] * s1 + idx[1]) * s2 + idx[2]] += self.grad[o];
          }
    };
  return Var<S>(n);
}

template <typename S>
Var<S> reshape(const Var<S>& a, std::vector<std::size_t> shape) {
  if (Tensor<S>::count(shape) != a.value().size())
    throw std::invalid_argument("reshape: element count mismatch");
  Tensor<S> out(std::move(shape));
  std::copy(a.value().data(), a.value().data() + a.value().size(), out.data());
  auto n = make_node(std::move(out), {a.node()});
  if (n->requires_grad)
    n->backprop = [](Node<S>& self) {
      Node<S>& p = *self.parents[0];
      p.ensure_grad();
      for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += self.grad[i];
    };
  return Var<S>(n);
}

template <typename S>
Var<S> concat_cols(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
  const std::size_t rows = parts[0].value().dim(0);
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.value().rank() != 2 || p.value().dim(0) != rows)
      throw std::invalid_argument("concat_cols: row mismatch");
    total += p.value().dim(1);
  }
  Tensor<S> out({rows, total});
  std::vector<std::shared_ptr<Node<S>>> parents;
  std::vector<std::size_t> widths;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.value().dim(1);
    for (std::size_t r = 0; r < rows; ++r)
      std::copy(p.value().data() + r * w, p.value().data() + (r + 1) * w,
                out.data() + r * total + off);
    off += w;
    parents.push_back(p.node());
    widths.push_back(w);
  }
  auto n = make_node(std::move(out), std::move(parents));
  if (n->requires_grad)
    n->backprop = [rows, total, widths](Node<S>& self) {
      std::size_t off = 0;
      for (std::size_t k = 0; k < self.parents.size(); ++k) {
        Node<S>& p = *self.parents[k];
        const std::size_t w = widths[k];
        if (p.requires_grad) {
          p.ensure_grad();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < w; ++j)
              p.grad[r * w + j] += self.grad[r * total + off + j];
        }
        off += w;
      }
    };
  return Var<S>(n);
}

template <typename S>
Var<S> slice_cols(const Var<S>& a, std::size_t begin, std::size_t len) {
  if (a.value().rank() != 2 || begin + len > a.value().dim(1))
    throw std::invalid_argument("slice_cols: out of range");
  const std::size_t rows = a.value().dim(0), cols = a.value().dim(1);
  Tensor<S> out({rows, len});
  for (std::size_t r = 0; r < rows; ++r)
    std::copy(a.value().data() + r * cols + begin,
              a.value().data() + r * cols + begin + len, out.data() + r * len);
  auto n = make_node(std::move(out), {a.node()});
  if (n->requires_grad)
    n->backprop = [rows, cols, begin, len](Node<S>& self) {
      Node<S>& p = *self.parents[0];
      p.ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < len; ++j)
          p.grad[r * cols + begin + j] += self.grad[r * len + j];
    };
  return Var<S>(n);
}

template <typename S>
Var<S> gather_rows(const Var<S>& table, const std::vector<int>& indices) {
  if (table.value().rank() != 2) throw std::invalid_argument("gather_rows: table rank != 2");
  const std::size_t v = table.value().dim(0), e = table.value().dim(1);
  Tensor<S> out({indices.size(), e});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const int ix = indices[i];
    if (ix < 0 || static_cast<std::size_t>(ix) >= v)
      throw std::out_of_range("gather_rows: index " + std::to_string(ix) +
                              " out of [0, " + std::to_string(v) + ")");
    std::copy(table.value().data() + ix * e, table.value().data() + (ix + 1) * e,
              out.data() + i * e);
  }
  auto n = make_node(std::move(out), {table.node()});
  if (n->requires_grad)
    n->backprop = [indices, e](Node<S>& self) {
      Node<S>& p = *self.parents[0];
      p.ensure_grad();
      for (std::size_t i = 0; i < indices.size(); ++i)
        for (std::size_t j = 0; j < e; ++j)
          p.grad[indices[i] * e + j] += self.grad[i * e + j];
    };
  return Var<S>(n);
}

template <typename S>
Var<S> gather_flat(const Var<S>& src, std::shared_ptr<const std::vector<long>> index_map,
                   std::vector<std::size_t> out_shape) {
  const std::size_t n_out = Tensor<S>::count(out_shape);
  if (index_map->size() != n_out)
    throw std::invalid_argument("gather_flat: map size mismatch");
  const std::size_t n_src = src.value().size();
  Tensor<S> out(std::move(out_shape));
  const auto& map = *index_map;
  for (std::size_t i = 0; i < n_out; ++i) {
    const long ix = map[i];
    if (ix >= static_cast<long>(n_src))
      throw std::out_of_range("gather_flat: index out of range");
    out[i] = ix < 0 ? S(0) : src.value()[static_cast<std::size_t>(ix)];
  }
  auto n = make_node(std::move(out), {src.node()});
  if (n->requires_grad)
    n->backprop = [index_map](Node<S>& self) {
      Node<S>& p = *self.parents[0];
      p.ensure_grad();
      const auto& map = *index_map;
      for (std::size_t i = 0; i < map.size(); ++i)
        if (map[i] >= 0) p.grad[static_cast<std::size_t>(map[i])] += self.grad[i];
    };
  return Var<S>(n);
}

// ---------------------------------------------------------------------------
// activations
// ---------------------------------------------------------------------------

template <typename S>
Var<S> sigmoid(const Var<S>& a) {
  Tensor<S> out(a.value().shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const S x = a.value()[i];
    out[i] = x >= 0 ? S(1) / (S(1) + std::exp(-x))
                    : std::exp(x) / (S(1) + std::exp(x));
  }
  auto n = make_node(std::move(out), {a.node()});
  if (n->requires_grad)
    n->backprop = [](Node<S>& self) {
      Node<S>& p = *self.parents[0];
      p.ensure_grad();
      for (std::size_t i = 0; i < p.grad.size(); ++i) {
        const S y = self.value[i];
        p.grad[i] += self.grad[i] * y * (S(1) - y);
      }
    };
  return Var<S>(n);
}

template <typename S>
Var<S> tanh_(const Var<S>& a) {
  Tensor<S> out(a.value().shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a.value()[i]);
  auto n = make_node(std::move(out), {a.node()});
  if (n->requires_grad)
    n->backprop = [](Node<S>& self) {
      Node<S>& p = *self.parents[0];
      p.ensure_grad();
      for (std::size_t i = 0; i < p.grad.size(); ++i) {
        const S y = self.value[i];
        p.grad[i] += self.grad[i] * (S(1) - y * y);
      }
    };
  return Var<S>(n);
}

template <typename S>
Var<S> relu(const Var<S>& a) {
  Tensor<S> out(a.value().shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] > 0 ? a.value()[i] : S(0);
  auto n = make_node(std::move(out), {a.node()});
  if (n->requires_grad)
    n->backprop = [](Node<S>& self) {
      Node<S>& p = *self.parents[0];
      p.ensure_grad();
      for (std::size_t i = 0; i < p.grad.size(); ++i)
        if (self.value[i] > 0) p.grad[i] += self.grad[i];
    };
  return Var<S>(n);
}

template <typename S>
Var<S> exp_(const Var<S>& a) {
  Tensor<S> out(a.value().shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.value()[i]);
  auto n = make_node(std::move(out), {a.node()});
  if (n->requires_grad)
    n->backprop = [](Node<S>& self) {
      Node<S>& p = *self.parents[0];
      p.ensure_grad();
      for (std::size_t i = 0; i < p.grad.size(); ++i)
        p.grad[i] += self.grad[i] * self.value[i];
    };
  return Var<S>(n);
}

template <typename S>
Var<S> log_(const Var<S>& a) {
  Tensor<S> out(a.value().shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(a.value()[i]);
  auto n = make_node(std::move(out), {a.node()});
  if (n->requires_grad)
    n->backprop = [](Node<S>& self) {
      Node<S>& p = *self.parents[0];
      p.ensure_grad();
      for (std::size_t i = 0; i < p.grad.size(); ++i)
        p.grad[i] += self.grad[i] / p.value[i];
    };
  return Var<S>(n);
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename S>
Var<S> sum_all(const Var<S>& a) {
  S acc = 0;
  for (std::size_t i = 0; i < a.value().size(); ++i) acc += a.value()[i];
  auto n = make_node(Tensor<S>::scalar(acc), {a.node()});
  if (n->requires_grad)
    n->backprop = [](Node<S>& self) {
      Node<S>& p = *self.parents[0];
      p.ensure_grad();
      const S g = self.grad[0];
      for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += g;
    };
  return Var<S>(n);
}

template <typename S>
Var<S> mean_all(const Var<S>& a) {
  return scalar_mul(sum_all(a), S(1) / static_cast<S>(a.value().size()));
}

// ---------------------------------------------------------------------------
// softmax / losses
// ---------------------------------------------------------------------------

template <typename S>
Var<S> masked_softmax(const Var<S>& logits,
                      std::shared_ptr<const std::vector<std::uint8_t>> mask) {
  if (logits.value().rank() < 2)
    throw std::invalid_argument("masked_softmax: rank < 2");
  const auto& sh = logits.value().shape();
  const std::size_t cols = sh.back();
  const std::size_t rows_per_block = sh[sh.size() - 2];
  const std::size_t block = rows_per_block * cols;
  const std::size_t rows = logits.value().size() / cols;
  if (mask && mask->size() != block)
    throw std::invalid_argument("masked_softmax: mask must cover the trailing two dims");
  Tensor<S> out(sh);
  const S* px = logits.value().data();
  S* po = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::uint8_t* mrow =
        mask ? mask->data() + (r % rows_per_block) * cols : nullptr;
    const S* x = px + r * cols;
    S* o = po + r * cols;
    S mx = -std::numeric_limits<S>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < cols; ++j)
      if (!mrow || mrow[j]) {
        any = true;
        if (x[j] > mx) mx = x[j];
      }
    if (!any) {
      for (std::size_t j = 0; j < cols; ++j) o[j] = S(0);
      continue;
    }
    S z = 0;
    for (std::size_t j = 0; j < cols; ++j) {
      if (!mrow || mrow[j]) {
        o[j] = std::exp(x[j] - mx);
        z += o[j];
      } else {
        o[j] = S(0);
      }
    }
    for (std::size_t j = 0; j < cols; ++j) o[j] /= z;
  }
  auto n = make_node(std::move(out), {logits.node()});
  if (n->requires_grad)
    n->backprop = [cols, rows](Node<S>& self) {
      Node<S>& p = *self.parents[0];
      p.ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const S* y = self.value.data() + r * cols;
        const S* gy = self.grad.data() + r * cols;
        S dot = 0;
        for (std::size_t j = 0; j < cols; ++j) dot += y[j] * gy[j];
        S* gx = p.grad.data() + r * cols;
        for (std::size_t j = 0; j < cols; ++j) gx[j] += y[j] * (gy[j] - dot);
      }
    };
  return Var<S>(n);
}

template <typename S>
Var<S> cross_entropy_logits(const Var<S>& logits,
                            std::shared_ptr<const std::vector<int>> targets) {
  if (logits.value().rank() != 2 || targets->size() != logits.value().dim(0))
    throw std::invalid_argument("cross_entropy_logits: bad shapes");
  const std::size_t rows = logits.value().dim(0), cols = logits.value().dim(1);
  std::size_t counted = 0;
  S total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const int t = (*targets)[r];
    if (t < 0) continue;
    if (static_cast<std::size_t>(t) >= cols)
      throw std::out_of_range("cross_entropy_logits: target out of range");
    const S* x = logits.value().data() + r * cols;
    S mx = x[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
    S z = 0;
    for (std::size_t j = 0; j < cols; ++j) z += std::exp(x[j] - mx);
    total += (mx + std::log(z)) - x[t];
    ++counted;
  }
  if (counted == 0) throw std::invalid_argument("cross_entropy_logits: no targets");
  auto n = make_node(Tensor<S>::scalar(total / static_cast<S>(counted)),
                     {logits.node()});
  if (n->requires_grad)
    n->backprop = [targets, rows, cols, counted](Node<S>& self) {
      Node<S>& p = *self.parents[0];
      p.ensure_grad();
      const S g = self.grad[0] / static_cast<S>(counted);
      for (std::size_t r = 0; r < rows; ++r) {
        const int t = (*targets)[r];
        if (t < 0) continue;
        const S* x = p.value.data() + r * cols;
        S mx = x[0];
        for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
        S z = 0;
        for (std::size_t j = 0; j < cols; ++j) z += std::exp(x[j] - mx);
        S* gx = p.grad.data() + r * cols;
        for (std::size_t j = 0; j < cols; ++j) {
          const S sm = std::exp(x[j] - mx) / z;
          gx[j] += g * (sm - (static_cast<int>(j) == t ? S(1) : S(0)));
        }
      }
    };
  return Var<S>(n);
}

template <typename S>
Var<S> cross_entropy_soft(const Var<S>& logits, Tensor<S> target_probs) {
  if (!logits.value().same_shape(target_probs) || logits.value().rank() != 2)
    throw std::invalid_argument("cross_entropy_soft: bad shapes");
  const std::size_t rows = logits.value().dim(0), cols = logits.value().dim(1);
  S total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const S* x = logits.value().data() + r * cols;
    const S* p = target_probs.data() + r * cols;
    S mx = x[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
    S z = 0;
    for (std::size_t j = 0; j < cols; ++j) z += std::exp(x[j] - mx);
    const S lse = mx + std::log(z);
    for (std::size_t j = 0; j < cols; ++j) total += p[j] * (lse - x[j]);
  }
  auto probs = std::make_shared<Tensor<S>>(std::move(target_probs));
  auto n = make_node(Tensor<S>::scalar(total / static_cast<S>(rows)), {logits.node()});
  if (n->requires_grad)
    n->backprop = [probs, rows, cols](Node<S>& self) {
      Node<S>& p = *self.parents[0];
      p.ensure_grad();
      const S g = self.grad[0] / static_cast<S>(rows);
      for (std::size_t r = 0; r < rows; ++r) {
        const S* x = p.value.data() + r * cols;
        const S* tp = probs->data() + r * cols;
        S mx = x[0];
        for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
        S z = 0;
        for (std::size_t j = 0; j < cols; ++j) z += std::exp(x[j] - mx);
        S* gx = p.grad.data() + r * cols;
        for (std::size_t j = 0; j < cols; ++j)
          gx[j] += g * (std::exp(x[j] - mx) / z - tp[j]);
      }
    };
  return Var<S>(n);
}

// ---------------------------------------------------------------------------
// stop_gradient / dropout / layer_norm
// ---------------------------------------------------------------------------

template <typename S>
Var<S> stop_gradient(const Var<S>& a) {
  Tensor<S> v = a.value();
  if (auto* log = FreezeLog<S>::active()) v = log->freeze_value(v);
  // Leaf with requires_grad = false: the adjoint flow through this edge is
  // exactly zero and backward never descends past it.
  return Var<S>::leaf(std::move(v), false);
}

template <typename S>
Var<S> dropout(const Var<S>& a, double rate, Rng& rng, bool training) {
  if (!training || rate <= 0.0) return a;
  if (rate >= 1.0) throw std::invalid_argument("dropout: rate must be < 1");
  Tensor<S> mask(a.value().shape());
  const S keep_scale = S(1.0 / (1.0 - rate));
  for (std::size_t i = 0; i < mask.size(); ++i)
    mask[i] = rng.next_double() < rate ? S(0) : keep_scale;
  if (auto* log = FreezeLog<S>::active()) mask = log->freeze_value(mask);
  return mul(a, constant(std::move(mask)));
}

template <typename S>
Var<S> layer_norm(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta, S eps) {
  if (x.value().rank() != 2 || gamma.value().rank() != 1 ||
      gamma.value().dim(0) != x.value().dim(1) ||
      !gamma.value().same_shape(beta.value()))
    throw std::invalid_argument("layer_norm: bad shapes");
  const std::size_t rows = x.value().dim(0), cols = x.value().dim(1);
  Tensor<S> out({rows, cols});
  Tensor<S> xhat({rows, cols});
  Tensor<S> inv_sd({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    const S* px = x.value().data() + r * cols;
    S mean = 0;
    for (std::size_t j = 0; j < cols; ++j) mean += px[j];
    mean /= static_cast<S>(cols);
    S var = 0;
    for (std::size_t j = 0; j < cols; ++j) var += (px[j] - mean) * (px[j] - mean);
    var /= static_cast<S>(cols);
    const S inv = S(1) / std::sqrt(var + eps);
    inv_sd[r] = inv;
    for (std::size_t j = 0; j < cols; ++j) {
      const S xh = (px[j] - mean) * inv;
      xhat.at2(r, j) = xh;
      out.at2(r, j) = xh * gamma.value()[j] + beta.value()[j];
    }
  }
  auto xhat_p = std::make_shared<Tensor<S>>(std::move(xhat));
  auto inv_p = std::make_shared<Tensor<S>>(std::move(inv_sd));
  auto n = make_node(std::move(out), {x.node(), gamma.node(), beta.node()});
  if (n->requires_grad)
    n->backprop = [rows, cols, xhat_p, inv_p](Node<S>& self) {
      Node<S>& px = *self.parents[0];
      Node<S>& pg = *self.parents[1];
      Node<S>& pb = *self.parents[2];
      if (px.requires_grad) px.ensure_grad();
      if (pg.requires_grad) pg.ensure_grad();
      if (pb.requires_grad) pb.ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const S* gy = self.grad.data() + r * cols;
        const S* xh = xhat_p->data() + r * cols;
        if (pg.requires_grad)
          for (std::size_t j = 0; j < cols; ++j) pg.grad[j] += gy[j] * xh[j];
        if (pb.requires_grad)
          for (std::size_t j = 0; j < cols; ++j) pb.grad[j] += gy[j];
        if (px.requires_grad) {
          S mean_g = 0, mean_gx = 0;
          for (std::size_t j = 0; j < cols; ++j) {
            const S gj = gy[j] * pg.value[j];
            mean_g += gj;
            mean_gx += gj * xh[j];
          }
          mean_g /= static_cast<S>(cols);
          mean_gx /= static_cast<S>(cols);
          S* gx = px.grad.data() + r * cols;
          const S inv = (*inv_p)[r];
          for (std::size_t j = 0; j < cols; ++j) {
            const S gj = gy[j] * pg.value[j];
            gx[j] += (gj - mean_g - xh[j] * mean_gx) * inv;
          }
        }
      }
    };
  return Var<S>(n);
}

// ---------------------------------------------------------------------------
// explicit instantiation
// ---------------------------------------------------------------------------

#define VQCPC_INSTANTIATE(S)                                                          \
  template void backward<S>(const Var<S>&);                                           \
  template class FreezeLog<S>;                                                        \
  template Var<S> constant<S>(Tensor<S>);                                             \
  template Var<S> add<S>(const Var<S>&, const Var<S>&);                               \
  template Var<S> sub<S>(const Var<S>&, const Var<S>&);                               \
  template Var<S> mul<S>(const Var<S>&, const Var<S>&);                               \
  template Var<S> neg<S>(const Var<S>&);                                              \
  template Var<S> scalar_mul<S>(const Var<S>&, S);                                    \
  template Var<S> scalar_add<S>(const Var<S>&, S);                                    \
  template Var<S> add_bias<S>(const Var<S>&, const Var<S>&);                          \
  template Var<S> matmul<S>(const Var<S>&, const Var<S>&);                            \
  template Var<S> matmul_batched<S>(const Var<S>&, const Var<S>&);                    \
  template Var<S> transpose2<S>(const Var<S>&);                                       \
  template Var<S> permute3<S>(const Var<S>&, const std::array<int, 3>&);              \
  template Var<S> reshape<S>(const Var<S>&, std::vector<std::size_t>);                \
  template Var<S> concat_cols<S>(const std::vector<Var<S>>&);                         \
  template Var<S> slice_cols<S>(const Var<S>&, std::size_t, std::size_t);             \
  template Var<S> gather_rows<S>(const Var<S>&, const std::vector<int>&);             \
  template Var<S> gather_flat<S>(const Var<S>&, std::shared_ptr<const std::vector<long>>, \
                                 std::vector<std::size_t>);                           \
  template Var<S> sigmoid<S>(const Var<S>&);                                          \
  template Var<S> tanh_<S>(const Var<S>&);                                            \
  template Var<S> relu<S>(const Var<S>&);                                             \
  template Var<S> exp_<S>(const Var<S>&);                                             \
  template Var<S> log_<S>(const Var<S>&);                                             \
  template Var<S> sum_all<S>(const Var<S>&);                                          \
  template Var<S> mean_all<S>(const Var<S>&);                                         \
  template Var<S> masked_softmax<S>(const Var<S>&,                                    \
                                    std::shared_ptr<const std::vector<std::uint8_t>>); \
  template Var<S> cross_entropy_logits<S>(const Var<S>&,                              \
                                          std::shared_ptr<const std::vector<int>>);   \
  template Var<S> cross_entropy_soft<S>(const Var<S>&, Tensor<S>);                    \
  template Var<S> stop_gradient<S>(const Var<S>&);                                    \
  template Var<S> dropout<S>(const Var<S>&, double, Rng&, bool);                      \
  template Var<S> layer_norm<S>(const Var<S>&, const Var<S>&, const Var<S>&, S);      \
  template void check_finite<S>(const Tensor<S>&, const char*);

VQCPC_INSTANTIATE(float)
VQCPC_INSTANTIATE(double)

#undef VQCPC_INSTANTIATE

}  // namespace vqcpc
