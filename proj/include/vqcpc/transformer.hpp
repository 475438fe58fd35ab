#ifndef VQCPC_TRANSFORMER_HPP
#define VQCPC_TRANSFORMER_HPP

#include <string>
#include <vector>

#include "vqcpc/attention.hpp"
#include "vqcpc/nn.hpp"

namespace vqcpc {

struct TransformerStackConfig {
  std::size_t width = 64;
  std::size_t heads = 4;
  std::size_t head_dim = 16;
  std::size_t ff_dim = 128;
  std::size_t layers = 2;
  std::size_t max_len = 512;
  MaskKind kind = MaskKind::causal;
  double dropout = 0.1;
};

/// Pre-norm residual blocks of relative self-attention + feed-forward, with
/// one displacement table shared by every layer and a closing layer norm.
template <typename S>
class TransformerStack {
 public:
  TransformerStack() = default;
  TransformerStack(ParamSet<S>& ps, const std::string& name,
                   const TransformerStackConfig& cfg, Rng& rng);

  /// x: [batch * t, width]; mask size must equal t.
  Var<S> forward(Var<S> x, std::size_t batch, std::size_t t, const AttentionMask& mask,
                 Rng& rng, bool training) const;

  const TransformerStackConfig& config() const { return cfg_; }

 private:
  struct Block {
    LayerNorm<S> ln1, ln2;
    Linear<S> qkv, out;
    Linear<S> ff1, ff2;
  };
  TransformerStackConfig cfg_;
  std::vector<Block> blocks_;
  LayerNorm<S> final_ln_;
  Var<S> rel_table_;  // [heads, R, head_dim]
};

}  // namespace vqcpc

#endif
