#include "vqcpc/transformer.hpp"

#include <cmath>
#include <stdexcept>

namespace vqcpc {

template <typename S>
TransformerStack<S>::TransformerStack(ParamSet<S>& ps, const std::string& name,
                                      const TransformerStackConfig& cfg, Rng& rng)
    : cfg_(cfg) {
  const std::size_t inner = cfg.heads * cfg.head_dim;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string bn = name + ".block" + std::to_string(l);
    Block b;
    b.ln1 = LayerNorm<S>(ps, bn + ".ln1", cfg.width);
    b.qkv = Linear<S>(ps, bn + ".qkv", cfg.width, 3 * inner, rng);
    b.out = Linear<S>(ps, bn + ".attn_out", inner, cfg.width, rng);
    b.ln2 = LayerNorm<S>(ps, bn + ".ln2", cfg.width);
    b.ff1 = Linear<S>(ps, bn + ".ff1", cfg.width, cfg.ff_dim, rng);
    b.ff2 = Linear<S>(ps, bn + ".ff2", cfg.ff_dim, cfg.width, rng);
    blocks_.push_back(std::move(b));
  }
  final_ln_ = LayerNorm<S>(ps, name + ".final_ln", cfg.width);
  const std::size_t rows = relative_table_rows(cfg.kind, cfg.max_len);
  rel_table_ = ps.add(name + ".rel_table",
                      init_uniform<S>({cfg.heads, rows, cfg.head_dim},
                                      1.0 / std::sqrt(static_cast<double>(cfg.head_dim)),
                                      rng));
}

template <typename S>
Var<S> TransformerStack<S>::forward(Var<S> x, std::size_t batch, std::size_t t,
                                    const AttentionMask& mask, Rng& rng,
                                    bool training) const {
  if (x.value().rank() != 2 || x.value().dim(0) != batch * t ||
      x.value().dim(1) != cfg_.width)
    throw std::invalid_argument("TransformerStack: expected [batch*t, width] input");
  if (mask.size != t) throw std::invalid_argument("TransformerStack: mask size != t");
  if (t > cfg_.max_len)
    throw std::invalid_argument("TransformerStack: sequence longer than configured maximum");
  const std::size_t inner = cfg_.heads * cfg_.head_dim;
  for (const Block& b : blocks_) {
    Var<S> a = b.ln1(x);
    Var<S> qkv = b.qkv(a);
    Var<S> q = split_heads(slice_cols(qkv, 0, inner), batch, t, cfg_.heads, cfg_.head_dim);
    Var<S> k = split_heads(slice_cols(qkv, inner, inner), batch, t, cfg_.heads, cfg_.head_dim);
    Var<S> v = split_heads(slice_cols(qkv, 2 * inner, inner), batch, t, cfg_.heads, cfg_.head_dim);
    Var<S> att = relative_attention(q, k, v, rel_table_, mask, cfg_.heads);
    Var<S> o = b.out(merge_heads(att, batch, t, cfg_.heads, cfg_.head_dim));
    x = add(x, dropout(o, cfg_.dropout, rng, training));
    Var<S> f = b.ff2(relu(b.ff1(b.ln2(x))));
    x = add(x, dropout(f, cfg_.dropout, rng, training));
  }
  return final_ln_(x);
}

template class TransformerStack<float>;
template class TransformerStack<double>;

}  // namespace vqcpc
