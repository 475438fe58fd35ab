#include "vqcpc/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace vqcpc {

template <typename S>
Tensor<S> init_uniform(std::vector<std::size_t> shape, double bound, Rng& rng) {
  Tensor<S> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i)
    t[i] = static_cast<S>(rng.next_uniform(-bound, bound));
  return t;
}

template <typename S>
Tensor<S> init_normal(std::vector<std::size_t> shape, double sd, Rng& rng) {
  Tensor<S> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i)
    t[i] = static_cast<S>(rng.next_normal() * sd);
  return t;
}

template <typename S>
Tensor<S> init_glorot(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return init_uniform<S>({fan_in, fan_out}, bound, rng);
}

// ---------------------------------------------------------------------------
// Gru
// ---------------------------------------------------------------------------

template <typename S>
Gru<S>::Gru(ParamSet<S>& ps, const std::string& name, std::size_t input_dim,
            std::size_t hidden, std::size_t layers, bool bidirectional, Rng& rng)
    : hidden_(hidden), bidirectional_(bidirectional) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  auto make_layer = [&](const std::string& lname, std::size_t in) {
    LayerWeights lw;
    lw.w_ih = ps.add(lname + ".w_ih", init_uniform<S>({in, 3 * hidden}, bound, rng));
    lw.w_hh = ps.add(lname + ".w_hh", init_uniform<S>({hidden, 3 * hidden}, bound, rng));
    lw.b_ih = ps.add(lname + ".b_ih", init_uniform<S>({3 * hidden}, bound, rng));
    lw.b_hh = ps.add(lname + ".b_hh", init_uniform<S>({3 * hidden}, bound, rng));
    return lw;
  };
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t in = l == 0 ? input_dim : hidden * (bidirectional ? 2 : 1);
    fwd_.push_back(make_layer(name + ".l" + std::to_string(l) + ".fwd", in));
    if (bidirectional)
      bwd_.push_back(make_layer(name + ".l" + std::to_string(l) + ".bwd", in));
  }
}

template <typename S>
Var<S> Gru<S>::cell(const LayerWeights& lw, const Var<S>& x, const Var<S>& h) const {
  const std::size_t hdim = hidden_;
  Var<S> gi = add_bias(matmul(x, lw.w_ih), lw.b_ih);
  Var<S> gh = add_bias(matmul(h, lw.w_hh), lw.b_hh);
  Var<S> r = sigmoid(add(slice_cols(gi, 0, hdim), slice_cols(gh, 0, hdim)));
  Var<S> u = sigmoid(add(slice_cols(gi, hdim, hdim), slice_cols(gh, hdim, hdim)));
  Var<S> nct = tanh_(add(slice_cols(gi, 2 * hdim, hdim),
                         mul(r, slice_cols(gh, 2 * hdim, hdim))));
  // h' = (1 - u) * n + u * h
  Var<S> one_minus_u = scalar_add(neg(u), S(1));
  return add(mul(one_minus_u, nct), mul(u, h));
}

template <typename S>
typename Gru<S>::Output Gru<S>::run(const std::vector<Var<S>>& steps,
                                    double dropout_rate, Rng& rng,
                                    bool training) const {
  if (steps.empty()) throw std::invalid_argument("Gru::run: empty sequence");
  const std::size_t batch = steps[0].value().dim(0);
  const std::size_t t_len = steps.size();
  Output out;
  std::vector<Var<S>> layer_in = steps;
  for (std::size_t l = 0; l < fwd_.size(); ++l) {
    if (l > 0 && dropout_rate > 0)
      for (auto& v : layer_in) v = dropout(v, dropout_rate, rng, training);
    std::vector<Var<S>> fwd_states(t_len);
    Var<S> h = constant(Tensor<S>({batch, hidden_}));
    for (std::size_t t = 0; t < t_len; ++t) {
      h = cell(fwd_[l], layer_in[t], h);
      fwd_states[t] = h;
    }
    if (!bidirectional_) {
      layer_in = fwd_states;
      if (l + 1 == fwd_.size()) out.final_forward = fwd_states.back();
      continue;
    }
    std::vector<Var<S>> bwd_states(t_len);
    Var<S> hb = constant(Tensor<S>({batch, hidden_}));
    for (std::size_t t = t_len; t-- > 0;) {
      hb = cell(bwd_[l], layer_in[t], hb);
      bwd_states[t] = hb;
    }
    std::vector<Var<S>> merged(t_len);
    for (std::size_t t = 0; t < t_len; ++t)
      merged[t] = concat_cols<S>({fwd_states[t], bwd_states[t]});
    layer_in = merged;
    if (l + 1 == fwd_.size()) {
      out.final_forward = fwd_states.back();
      out.final_backward = bwd_states.front();
    }
  }
  out.outputs = std::move(layer_in);
  return out;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

template <typename S>
Adam<S>::Adam(std::vector<Var<S>> params, S lr, S beta1, S beta2, S eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(p.value().shape());
    v_.emplace_back(p.value().shape());
  }
}

template <typename S>
void Adam<S>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template <typename S>
void Adam<S>::step() {
  ++t_;
  const S bc1 = S(1) - std::pow(beta1_, static_cast<S>(t_));
  const S bc2 = S(1) - std::pow(beta2_, static_cast<S>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor<S>& w = params_[i].mutable_value();
    const Tensor<S>& g = params_[i].grad();
    const bool has_grad = g.size() == w.size();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const S gj = has_grad ? g[j] : S(0);
      m_[i][j] = beta1_ * m_[i][j] + (S(1) - beta1_) * gj;
      v_[i][j] = beta2_ * v_[i][j] + (S(1) - beta2_) * gj * gj;
      const S mhat = m_[i][j] / bc1;
      const S vhat = v_[i][j] / bc2;
      w[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

template <typename S>
void Adam<S>::restore_state(std::vector<Tensor<S>> m, std::vector<Tensor<S>> v,
                            std::uint64_t t) {
  if (m.size() != params_.size() || v.size() != params_.size())
    throw std::invalid_argument("Adam::restore_state: size mismatch");
  m_ = std::move(m);
  v_ = std::move(v);
  t_ = t;
}

#define VQCPC_NN_INSTANTIATE(S)                                                     \
  template Tensor<S> init_uniform<S>(std::vector<std::size_t>, double, Rng&);       \
  template Tensor<S> init_normal<S>(std::vector<std::size_t>, double, Rng&);        \
  template Tensor<S> init_glorot<S>(std::size_t, std::size_t, Rng&);                \
  template class Gru<S>;                                                            \
  template class Adam<S>;

VQCPC_NN_INSTANTIATE(float)
VQCPC_NN_INSTANTIATE(double)

#undef VQCPC_NN_INSTANTIATE

}  // namespace vqcpc
