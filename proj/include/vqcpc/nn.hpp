#ifndef VQCPC_NN_HPP
#define VQCPC_NN_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "vqcpc/autodiff.hpp"
#include "vqcpc/rng.hpp"
#include "vqcpc/tensor.hpp"

namespace vqcpc {

template <typename S>
struct NamedParam {
  std::string name;
  Var<S> var;
};

/// Owns the trainable leaves of a model, keyed by module path. The
/// registration order is the checkpoint / optimizer order.
template <typename S>
class ParamSet {
 public:
  Var<S> add(const std::string& name, Tensor<S> init) {
    for (const auto& p : items_)
      if (p.name == name) throw std::invalid_argument("duplicate param: " + name);
    Var<S> v = Var<S>::leaf(std::move(init), true);
    items_.push_back({name, v});
    return v;
  }

  const std::vector<NamedParam<S>>& items() const { return items_; }
  std::vector<NamedParam<S>>& items() { return items_; }

  std::vector<Var<S>> vars() const {
    std::vector<Var<S>> out;
    out.reserve(items_.size());
    for (const auto& p : items_) out.push_back(p.var);
    return out;
  }

  Var<S> find(const std::string& name) const {
    for (const auto& p : items_)
      if (p.name == name) return p.var;
    throw std::out_of_range("param not found: " + name);
  }

  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto& p : items_) n += p.var.value().size();
    return n;
  }

 private:
  std::vector<NamedParam<S>> items_;
};

template <typename S>
Tensor<S> init_uniform(std::vector<std::size_t> shape, double bound, Rng& rng);
template <typename S>
Tensor<S> init_normal(std::vector<std::size_t> shape, double sd, Rng& rng);
/// Glorot uniform for a [fan_in, fan_out] matrix.
template <typename S>
Tensor<S> init_glorot(std::size_t fan_in, std::size_t fan_out, Rng& rng);

template <typename S>
struct Linear {
  Var<S> w;  // [in, out]
  Var<S> b;  // [out]

  Linear() = default;
  Linear(ParamSet<S>& ps, const std::string& name, std::size_t in, std::size_t out,
         Rng& rng) {
    w = ps.add(name + ".w", init_glorot<S>(in, out, rng));
    b = ps.add(name + ".b", Tensor<S>({out}));
  }

  Var<S> operator()(const Var<S>& x) const { return add_bias(matmul(x, w), b); }
};

template <typename S>
struct Embedding {
  Var<S> table;  // [V, E]

  Embedding() = default;
  Embedding(ParamSet<S>& ps, const std::string& name, std::size_t vocab,
            std::size_t dim, Rng& rng) {
    table = ps.add(name + ".table", init_normal<S>({vocab, dim}, 0.5, rng));
  }

  Var<S> operator()(const std::vector<int>& indices) const {
    return gather_rows(table, indices);
  }
};

/// Multi-layer (optionally bidirectional) GRU over a time-major sequence of
/// [B, in] slices. Gate layout in the fused weights is (reset, update,
/// candidate); the reset gate scales the hidden-side candidate product.
template <typename S>
class Gru {
 public:
  struct Output {
    std::vector<Var<S>> outputs;  // per time step, [B, H * dirs]
    Var<S> final_forward;         // last layer, forward dir, t = T-1: [B, H]
    Var<S> final_backward;        // last layer, backward dir, t = 0 (bi only)
  };

  Gru() = default;
  Gru(ParamSet<S>& ps, const std::string& name, std::size_t input_dim,
      std::size_t hidden, std::size_t layers, bool bidirectional, Rng& rng);

  Output run(const std::vector<Var<S>>& steps, double dropout_rate, Rng& rng,
             bool training) const;

  std::size_t hidden() const { return hidden_; }
  bool bidirectional() const { return bidirectional_; }

 private:
  struct LayerWeights {
    Var<S> w_ih, w_hh, b_ih, b_hh;
  };
  Var<S> cell(const LayerWeights& lw, const Var<S>& x, const Var<S>& h) const;

  std::vector<LayerWeights> fwd_, bwd_;
  std::size_t hidden_ = 0;
  bool bidirectional_ = false;
};

/// Feed-forward stack: hidden layers with ReLU, linear output layer.
template <typename S>
struct Mlp {
  std::vector<Linear<S>> layers;

  Mlp() = default;
  Mlp(ParamSet<S>& ps, const std::string& name, std::size_t in,
      const std::vector<std::size_t>& hidden, std::size_t out, Rng& rng) {
    std::size_t d = in;
    for (std::size_t i = 0; i < hidden.size(); ++i) {
      layers.emplace_back(ps, name + ".fc" + std::to_string(i), d, hidden[i], rng);
      d = hidden[i];
    }
    layers.emplace_back(ps, name + ".out", d, out, rng);
  }

  Var<S> operator()(Var<S> x) const {
    for (std::size_t i = 0; i + 1 < layers.size(); ++i) x = relu(layers[i](x));
    return layers.back()(x);
  }
};

template <typename S>
struct LayerNorm {
  Var<S> gamma, beta;

  LayerNorm() = default;
  LayerNorm(ParamSet<S>& ps, const std::string& name, std::size_t dim) {
    gamma = ps.add(name + ".gamma", Tensor<S>::full({dim}, S(1)));
    beta = ps.add(name + ".beta", Tensor<S>({dim}));
  }

  Var<S> operator()(const Var<S>& x) const { return layer_norm(x, gamma, beta); }
};

template <typename S>
class Adam {
 public:
  Adam() = default;
  explicit Adam(std::vector<Var<S>> params, S lr, S beta1 = S(0.9),
                S beta2 = S(0.999), S eps = S(1e-8));

  void zero_grad();
  void step();

  std::uint64_t step_count() const { return t_; }
  const std::vector<Tensor<S>>& first_moments() const { return m_; }
  const std::vector<Tensor<S>>& second_moments() const { return v_; }
  void restore_state(std::vector<Tensor<S>> m, std::vector<Tensor<S>> v,
                     std::uint64_t t);

  S learning_rate() const { return lr_; }

 private:
  std::vector<Var<S>> params_;
  std::vector<Tensor<S>> m_, v_;
  S lr_ = S(1e-4), beta1_ = S(0.9), beta2_ = S(0.999), eps_ = S(1e-8);
  std::uint64_t t_ = 0;
};

}  // namespace vqcpc

#endif
