#ifndef VQCPC_ATTENTION_HPP
#define VQCPC_ATTENTION_HPP

#include <cstdint>
#include <memory>
#include <vector>

#include "vqcpc/autodiff.hpp"
#include "vqcpc/tensor.hpp"

namespace vqcpc {

enum class MaskKind {
  causal,          // allowed(q, k) iff k <= q
  anticausal,      // allowed(q, k) iff k >= q
  diagonal_cross,  // allowed(q, k) iff k == q
  full,            // everything allowed (bidirectional)
};

struct AttentionMask {
  MaskKind kind = MaskKind::full;
  std::size_t size = 0;
  std::shared_ptr<const std::vector<std::uint8_t>> allow;  // size x size, row-major

  bool allowed(std::size_t q, std::size_t k) const { return (*allow)[q * size + k]; }
};

AttentionMask build_mask(MaskKind kind, std::size_t n);

/// Relative self-attention computed with the skewing rearrangement: the
/// relative logits come from Q x Er^T plus an index shift, so no per-pair
/// relative-embedding tensor of shape [T, T, head_dim] is ever allocated.
///
///   q, k, v    : [G, T, head_dim], G = batch * heads
///   rel_table  : [heads, R, head_dim]; rows are relative displacements.
///                causal masks use displacements -(T-1)..0 stored in the
///                table suffix, anticausal 0..T-1 in the prefix, full masks
///                -(T-1)..T-1 around the table midpoint (R must be odd).
///   mask       : size T
///
/// Logits are (Q K^T + S_rel) / sqrt(head_dim); masked entries drop out of
/// the softmax and a fully masked row yields a zero output row.
template <typename S>
Var<S> relative_attention(const Var<S>& q, const Var<S>& k, const Var<S>& v,
                          const Var<S>& rel_table, const AttentionMask& mask,
                          std::size_t heads);

/// Number of table rows needed for sequences up to max_len under each kind.
std::size_t relative_table_rows(MaskKind kind, std::size_t max_len);

/// [B*T, H*dh] -> [B*H, T, dh]
template <typename S>
Var<S> split_heads(const Var<S>& x, std::size_t batch, std::size_t t, std::size_t heads,
                   std::size_t head_dim);
/// [B*H, T, dh] -> [B*T, H*dh]
template <typename S>
Var<S> merge_heads(const Var<S>& x, std::size_t batch, std::size_t t, std::size_t heads,
                   std::size_t head_dim);

}  // namespace vqcpc

#endif
